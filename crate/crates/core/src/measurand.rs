//! Typed-field arithmetic for dimensioned numbers.
//!
//! A measurand space fixes a finite family of base quantities (e.g.
//! `P`, `V`, `N`, `T` for a thermodynamic gas). Every derived quantity is
//! indexed by an integer exponent vector, its [`Dimension`]. A
//! [`TypedNumber`] couples a real magnitude with a dimension; products are
//! defined between any two numbers (exponents add), sums only within a
//! fixed dimension. Magnitudes are stored as coordinates with respect to a
//! hidden reference basis per base line, which makes [`ratio`] and
//! [`convert`] independent of any unit choice by construction.
//!
//! A [`UnitSystem`] is a choice of scale per base line relative to that
//! reference basis; it induces a scale for every dimension by the tensor
//! power rule, and changes of unit systems act on readings fibre-wise by
//! the factor `prod_i (from_i / to_i)^{n_i}`.

#![allow(clippy::should_implement_trait)]

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Errors produced by dimensioned arithmetic and parsing.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasurandError {
    #[error("measurand space mismatch: {0} vs {1}")]
    MeasurandSpaceMismatch(String, String),
    #[error("dimension mismatch: [{expected}] vs [{found}]")]
    DimensionMismatch { expected: String, found: String },
    #[error("zero denominator: no linear isomorphism maps zero to a nonzero element")]
    ZeroDenominator,
    #[error("integer overflow in dimension exponents")]
    ExponentOverflow,
    #[error("parse error at position {position}: {message}")]
    ParseError { position: usize, message: String },
    #[error("invalid measurand space: {0}")]
    InvalidSpace(String),
    #[error("invalid unit system: {0}")]
    InvalidUnitSystem(String),
    #[error("magnitude must be finite, got {0}")]
    NonFiniteMagnitude(f64),
}

/// A finite family of named base quantities; all dimensions in play are
/// integer exponent vectors over this family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurandSpace {
    base_names: Vec<String>,
}

impl MeasurandSpace {
    /// Builds a space from distinct base names. At least one name is
    /// required and names must be unique.
    pub fn new<S: Into<String>>(names: Vec<S>) -> Result<Arc<Self>, MeasurandError> {
        let base_names: Vec<String> = names.into_iter().map(Into::into).collect();
        if base_names.is_empty() {
            return Err(MeasurandError::InvalidSpace(
                "at least one base measurand is required".into(),
            ));
        }
        for (i, n) in base_names.iter().enumerate() {
            if n.is_empty() {
                return Err(MeasurandError::InvalidSpace("empty base name".into()));
            }
            if base_names[..i].contains(n) {
                return Err(MeasurandError::InvalidSpace(format!(
                    "duplicate base name `{n}`"
                )));
            }
        }
        Ok(Arc::new(Self { base_names }))
    }

    /// Number of base lines.
    pub fn rank(&self) -> usize {
        self.base_names.len()
    }

    pub fn base_names(&self) -> &[String] {
        &self.base_names
    }

    /// Index of a base name, if declared.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.base_names.iter().position(|n| n == name)
    }

    /// The dimensionless (identity) type.
    pub fn dimensionless(self: &Arc<Self>) -> Dimension {
        Dimension {
            space: Arc::clone(self),
            exponents: vec![0; self.rank()],
        }
    }

    /// Dimension with the given exponents; the length must match the rank.
    pub fn dimension(self: &Arc<Self>, exponents: Vec<i64>) -> Result<Dimension, MeasurandError> {
        if exponents.len() != self.rank() {
            return Err(MeasurandError::InvalidSpace(format!(
                "expected {} exponents, got {}",
                self.rank(),
                exponents.len()
            )));
        }
        Ok(Dimension {
            space: Arc::clone(self),
            exponents,
        })
    }

    /// The dimension `e_i` of the i-th base measurand.
    pub fn base_dimension(self: &Arc<Self>, i: usize) -> Dimension {
        let mut e = vec![0; self.rank()];
        e[i] = 1;
        Dimension {
            space: Arc::clone(self),
            exponents: e,
        }
    }

    fn describe(&self) -> String {
        self.base_names.join(",")
    }
}

fn check_same_space(a: &Arc<MeasurandSpace>, b: &Arc<MeasurandSpace>) -> Result<(), MeasurandError> {
    if a == b {
        Ok(())
    } else {
        Err(MeasurandError::MeasurandSpaceMismatch(
            a.describe(),
            b.describe(),
        ))
    }
}

/// Integer exponent vector indexing a measurand within its space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dimension {
    space: Arc<MeasurandSpace>,
    exponents: Vec<i64>,
}

impl Dimension {
    pub fn space(&self) -> &Arc<MeasurandSpace> {
        &self.space
    }

    pub fn exponents(&self) -> &[i64] {
        &self.exponents
    }

    pub fn is_dimensionless(&self) -> bool {
        self.exponents.iter().all(|&e| e == 0)
    }

    /// Componentwise sum of exponents; overflow is an error, not wraparound.
    pub fn mul(&self, other: &Dimension) -> Result<Dimension, MeasurandError> {
        check_same_space(&self.space, &other.space)?;
        let exponents = self
            .exponents
            .iter()
            .zip(&other.exponents)
            .map(|(a, b)| a.checked_add(*b).ok_or(MeasurandError::ExponentOverflow))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dimension {
            space: Arc::clone(&self.space),
            exponents,
        })
    }

    /// Componentwise difference of exponents.
    pub fn div(&self, other: &Dimension) -> Result<Dimension, MeasurandError> {
        check_same_space(&self.space, &other.space)?;
        let exponents = self
            .exponents
            .iter()
            .zip(&other.exponents)
            .map(|(a, b)| a.checked_sub(*b).ok_or(MeasurandError::ExponentOverflow))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dimension {
            space: Arc::clone(&self.space),
            exponents,
        })
    }

    /// Exponents scaled by an integer (tensor power).
    pub fn pow(&self, k: i64) -> Result<Dimension, MeasurandError> {
        let exponents = self
            .exponents
            .iter()
            .map(|a| a.checked_mul(k).ok_or(MeasurandError::ExponentOverflow))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dimension {
            space: Arc::clone(&self.space),
            exponents,
        })
    }

    pub fn inverse(&self) -> Result<Dimension, MeasurandError> {
        self.pow(-1)
    }
}

impl fmt::Display for Dimension {
    /// Renders in the dimension grammar, e.g. `P*V/N` or `P^2/T^3`.
    /// The dimensionless type renders as the empty string.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (name, &e) in self.space.base_names().iter().zip(&self.exponents) {
            if e == 0 {
                continue;
            }
            if first {
                match e {
                    1 => write!(f, "{name}")?,
                    _ => write!(f, "{name}^{e}")?,
                }
                first = false;
            } else if e > 0 {
                match e {
                    1 => write!(f, "*{name}")?,
                    _ => write!(f, "*{name}^{e}")?,
                }
            } else {
                match e {
                    -1 => write!(f, "/{name}")?,
                    _ => write!(f, "/{name}^{}", -e)?,
                }
            }
        }
        Ok(())
    }
}

/// A real magnitude together with its dimension. The magnitude is a
/// coordinate with respect to the hidden reference basis of the fibre.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedNumber {
    magnitude: f64,
    dim: Dimension,
}

impl TypedNumber {
    pub fn new(magnitude: f64, dim: Dimension) -> Result<Self, MeasurandError> {
        if !magnitude.is_finite() {
            return Err(MeasurandError::NonFiniteMagnitude(magnitude));
        }
        Ok(Self { magnitude, dim })
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    /// The type map: projection onto the dimension.
    pub fn dimension(&self) -> &Dimension {
        &self.dim
    }

    /// Product of typed numbers: magnitudes multiply, exponents add.
    pub fn mul(&self, other: &TypedNumber) -> Result<TypedNumber, MeasurandError> {
        let dim = self.dim.mul(&other.dim)?;
        TypedNumber::new(self.magnitude * other.magnitude, dim)
    }

    /// Fibre-wise sum; defined only within a single dimension.
    pub fn add(&self, other: &TypedNumber) -> Result<TypedNumber, MeasurandError> {
        check_same_space(self.dim.space(), other.dim.space())?;
        if self.dim != other.dim {
            return Err(MeasurandError::DimensionMismatch {
                expected: self.dim.to_string(),
                found: other.dim.to_string(),
            });
        }
        TypedNumber::new(self.magnitude + other.magnitude, self.dim.clone())
    }

    /// Multiplicative inverse (dimension negates).
    pub fn inverse(&self) -> Result<TypedNumber, MeasurandError> {
        if self.magnitude == 0.0 {
            return Err(MeasurandError::ZeroDenominator);
        }
        TypedNumber::new(1.0 / self.magnitude, self.dim.inverse()?)
    }
}

impl fmt::Display for TypedNumber {
    /// Report serialization: `<magnitude> [<dimension-expr>]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]", self.magnitude, self.dim)
    }
}

/// The canonical real comparison of two same-dimension elements:
/// `ratio(a, b) = l` with `a = l * b` in the common fibre. Independent of
/// any unit system.
pub fn ratio(a: &TypedNumber, b: &TypedNumber) -> Result<f64, MeasurandError> {
    check_same_space(a.dim.space(), b.dim.space())?;
    if a.dim != b.dim {
        return Err(MeasurandError::DimensionMismatch {
            expected: a.dim.to_string(),
            found: b.dim.to_string(),
        });
    }
    if b.magnitude == 0.0 {
        return Err(MeasurandError::ZeroDenominator);
    }
    Ok(a.magnitude / b.magnitude)
}

/// A choice of base unit per base line, each expressed as a nonzero scale
/// relative to the hidden reference basis.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSystem {
    space: Arc<MeasurandSpace>,
    scales: Vec<f64>,
    unit_names: Vec<String>,
}

impl UnitSystem {
    pub fn new<S: Into<String>>(
        space: &Arc<MeasurandSpace>,
        scales: Vec<f64>,
        unit_names: Vec<S>,
    ) -> Result<Self, MeasurandError> {
        if scales.len() != space.rank() || unit_names.len() != space.rank() {
            return Err(MeasurandError::InvalidUnitSystem(format!(
                "expected {} scales and unit names",
                space.rank()
            )));
        }
        if scales.iter().any(|s| *s == 0.0 || !s.is_finite()) {
            return Err(MeasurandError::InvalidUnitSystem(
                "unit scales must be finite and nonzero".into(),
            ));
        }
        Ok(Self {
            space: Arc::clone(space),
            scales,
            unit_names: unit_names.into_iter().map(Into::into).collect(),
        })
    }

    /// The reference system itself: every scale is 1.
    pub fn reference(space: &Arc<MeasurandSpace>) -> Self {
        let names: Vec<String> = space
            .base_names()
            .iter()
            .map(|n| format!("ref_{n}"))
            .collect();
        Self {
            space: Arc::clone(space),
            scales: vec![1.0; space.rank()],
            unit_names: names,
        }
    }

    pub fn space(&self) -> &Arc<MeasurandSpace> {
        &self.space
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn unit_names(&self) -> &[String] {
        &self.unit_names
    }

    /// Scale of the induced unit for a dimension, `prod_i scale_i^{n_i}`.
    /// This is the tensor power rule for induced units.
    pub fn induced_unit_scale(&self, d: &Dimension) -> Result<f64, MeasurandError> {
        check_same_space(&self.space, d.space())?;
        let mut s = 1.0;
        for (scale, &e) in self.scales.iter().zip(d.exponents()) {
            s *= scale.powi(clamp_exponent(e));
        }
        Ok(s)
    }
}

fn clamp_exponent(e: i64) -> i32 {
    // powi takes i32; dimension exponents in practice are tiny.
    e.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

/// Re-reads a number expressed in `from` as a number expressed in `to`:
/// the dimension is preserved and the magnitude picks up the factor
/// `prod_i (from_i / to_i)^{n_i}`. Round-trips compose to the identity.
pub fn convert(
    a: &TypedNumber,
    from: &UnitSystem,
    to: &UnitSystem,
) -> Result<TypedNumber, MeasurandError> {
    check_same_space(from.space(), to.space())?;
    check_same_space(a.dimension().space(), from.space())?;
    let mut factor = 1.0;
    for ((f, t), &e) in from
        .scales
        .iter()
        .zip(&to.scales)
        .zip(a.dimension().exponents())
    {
        factor *= (f / t).powi(clamp_exponent(e));
    }
    TypedNumber::new(a.magnitude() * factor, a.dimension().clone())
}

/// Parses the dimension grammar
/// `expr := atom (('*'|'/') atom)*`, `atom := NAME ('^' SIGNED_INT)?`
/// against the base names of `space`. Whitespace is ignored; the empty
/// string is the dimensionless type. `/` negates the exponent of the
/// following atom.
pub fn parse_dimension(
    src: &str,
    space: &Arc<MeasurandSpace>,
) -> Result<Dimension, MeasurandError> {
    let mut exponents = vec![0i64; space.rank()];
    let bytes: Vec<char> = src.chars().collect();
    let mut pos = 0usize;

    let skip_ws = |pos: &mut usize| {
        while *pos < bytes.len() && bytes[*pos].is_whitespace() {
            *pos += 1;
        }
    };

    skip_ws(&mut pos);
    if pos == bytes.len() {
        return space.dimension(exponents);
    }

    let mut expect_atom = true;
    let mut negate = false;
    loop {
        skip_ws(&mut pos);
        if pos == bytes.len() {
            if expect_atom {
                return Err(MeasurandError::ParseError {
                    position: pos,
                    message: "expected a base name".into(),
                });
            }
            break;
        }
        if expect_atom {
            let start = pos;
            while pos < bytes.len() && (bytes[pos].is_alphanumeric() || bytes[pos] == '_') {
                pos += 1;
            }
            if pos == start {
                return Err(MeasurandError::ParseError {
                    position: start,
                    message: format!("expected a base name, found `{}`", bytes[start]),
                });
            }
            let name: String = bytes[start..pos].iter().collect();
            let idx = space.index_of(&name).ok_or(MeasurandError::ParseError {
                position: start,
                message: format!("unknown base name `{name}`"),
            })?;
            skip_ws(&mut pos);
            let mut exp = 1i64;
            if pos < bytes.len() && bytes[pos] == '^' {
                pos += 1;
                skip_ws(&mut pos);
                let estart = pos;
                if pos < bytes.len() && (bytes[pos] == '+' || bytes[pos] == '-') {
                    pos += 1;
                }
                while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    pos += 1;
                }
                let text: String = bytes[estart..pos].iter().collect();
                exp = text.parse().map_err(|_| MeasurandError::ParseError {
                    position: estart,
                    message: format!("malformed exponent `{text}`"),
                })?;
            }
            if negate {
                exp = exp.checked_neg().ok_or(MeasurandError::ExponentOverflow)?;
            }
            exponents[idx] = exponents[idx]
                .checked_add(exp)
                .ok_or(MeasurandError::ExponentOverflow)?;
            expect_atom = false;
        } else {
            match bytes[pos] {
                '*' => negate = false,
                '/' => negate = true,
                c => {
                    return Err(MeasurandError::ParseError {
                        position: pos,
                        message: format!("expected `*` or `/`, found `{c}`"),
                    })
                }
            }
            pos += 1;
            expect_atom = true;
        }
    }
    space.dimension(exponents)
}
