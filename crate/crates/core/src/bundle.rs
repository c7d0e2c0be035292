//! Trivialized line-bundle calculus.
//!
//! A trivial line bundle over a chart is carried entirely by its base: its
//! sections are scalar fields. A factor between trivial bundles is a pair
//! `(b, beta)` of a smooth base map and a nowhere-vanishing scale; pull-back
//! of sections is `(1/beta) * (s o b)`. Derivations are pairs `X (+) f`
//! acting on sections by `X[s] + f*s`; their pointwise values form the der
//! bundle, whose L-dual is the jet bundle with fibre coordinates
//! `(ds, s)`. The base product of two trivial bundles is the chart
//! `M x N x R^x` with a fibre-ratio coordinate, and ratio functions of
//! sections provide spanning functions on it.
//!
//! Nonvanishing declarations (factor scales, ratio denominators) are
//! certified at construction by dense low-discrepancy sampling within the
//! declared bounds.

#![allow(clippy::should_implement_trait)]

use std::sync::Arc;

use thiserror::Error;

use crate::expr::{
    check_same_chart, lie_bracket, ChartDomain, Expr, ExprError, ScalarField, VectorField,
};
use crate::sampling::low_discrepancy_points;

/// Number of sample points used to certify a nonvanishing declaration.
pub const NONVANISHING_SAMPLES: usize = 10_000;
/// Threshold below which a sampled scale counts as vanishing.
pub const NONVANISHING_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BundleError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("chart mismatch: {0} vs {1}")]
    ChartMismatch(String, String),
    #[error("factor scale vanishes near {point:?} (|beta| = {value:e})")]
    VanishingScale { point: Vec<f64>, value: f64 },
    #[error("ratio denominator vanishes near {point:?} (|s2| = {value:e})")]
    VanishingDenominator { point: Vec<f64>, value: f64 },
    #[error("factor has no declared inverse")]
    NoInverseDeclared,
    #[error("jet value and derivation value sit at different base points")]
    BasePointMismatch,
    #[error("smooth map has {got} components, target chart has dimension {expected}")]
    ComponentCount { expected: usize, got: usize },
}

fn chart_mismatch(a: &Arc<ChartDomain>, b: &Arc<ChartDomain>) -> BundleError {
    BundleError::ChartMismatch(a.describe(), b.describe())
}

/// A trivial line bundle, carried by its base chart.
#[derive(Debug, Clone, PartialEq)]
pub struct TrivialLineBundle {
    base: Arc<ChartDomain>,
}

impl TrivialLineBundle {
    pub fn new(base: &Arc<ChartDomain>) -> Self {
        Self {
            base: Arc::clone(base),
        }
    }

    pub fn base(&self) -> &Arc<ChartDomain> {
        &self.base
    }

    /// A section of the trivial bundle is a scalar field on the base.
    pub fn section(&self, src: &str) -> Result<ScalarField, BundleError> {
        Ok(ScalarField::parse(src, &self.base)?)
    }
}

/// A smooth map between charts, one component expression per target
/// coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothMap {
    source: Arc<ChartDomain>,
    target: Arc<ChartDomain>,
    components: Vec<Expr>,
}

impl SmoothMap {
    pub fn new(
        source: &Arc<ChartDomain>,
        target: &Arc<ChartDomain>,
        components: Vec<Expr>,
    ) -> Result<Self, BundleError> {
        if components.len() != target.dim() {
            return Err(BundleError::ComponentCount {
                expected: target.dim(),
                got: components.len(),
            });
        }
        Ok(Self {
            source: Arc::clone(source),
            target: Arc::clone(target),
            components,
        })
    }

    /// Parses one expression per target coordinate over the source chart.
    pub fn parse(
        source: &Arc<ChartDomain>,
        target: &Arc<ChartDomain>,
        sources: &[&str],
    ) -> Result<Self, BundleError> {
        let components = sources
            .iter()
            .map(|s| crate::expr::parse_expr(s, source))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(source, target, components)
    }

    pub fn identity(chart: &Arc<ChartDomain>) -> Self {
        Self {
            source: Arc::clone(chart),
            target: Arc::clone(chart),
            components: (0..chart.dim()).map(Expr::var).collect(),
        }
    }

    pub fn source(&self) -> &Arc<ChartDomain> {
        &self.source
    }

    pub fn target(&self) -> &Arc<ChartDomain> {
        &self.target
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Image of a source point, checked against the target bounds.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, BundleError> {
        self.source.check_point(x)?;
        let y = self
            .components
            .iter()
            .map(|c| c.eval(x))
            .collect::<Result<Vec<_>, _>>()?;
        self.target.check_point(&y)?;
        Ok(y)
    }

    /// Jacobian at a point, `jac[a][i] = d_i b^a(x)`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, BundleError> {
        self.source.check_point(x)?;
        self.components
            .iter()
            .map(|c| Ok(c.eval_grad(x)?.1))
            .collect()
    }

    /// Composition `self o other` (apply `other` first).
    pub fn compose(&self, other: &SmoothMap) -> Result<SmoothMap, BundleError> {
        check_same_chart(&other.target, &self.source).map_err(BundleError::from)?;
        let components = self
            .components
            .iter()
            .map(|c| c.substitute(&other.components))
            .collect();
        SmoothMap::new(&other.source, &self.target, components)
    }

    /// Pull-back of a scalar field on the target, `f o b`.
    pub fn pullback_function(&self, f: &ScalarField) -> Result<ScalarField, BundleError> {
        check_same_chart(f.chart(), &self.target).map_err(BundleError::from)?;
        Ok(f.compose(&self.components, &self.source)?)
    }
}

/// A factor between trivial line bundles: a base map and a nowhere
/// vanishing scale on the source, optionally with a declared inverse of
/// the base map (required by push-forwards and jet lifts).
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    map: SmoothMap,
    beta: ScalarField,
    inverse: Option<SmoothMap>,
}

impl Factor {
    /// Builds a factor, certifying the nonvanishing of `beta` by dense
    /// sampling within the source sampling windows.
    pub fn new(
        map: SmoothMap,
        beta: ScalarField,
        inverse: Option<SmoothMap>,
    ) -> Result<Self, BundleError> {
        check_same_chart(beta.chart(), &map.source).map_err(BundleError::from)?;
        if let Some(inv) = &inverse {
            check_same_chart(&inv.source, &map.target).map_err(BundleError::from)?;
            check_same_chart(&inv.target, &map.source).map_err(BundleError::from)?;
        }
        certify_nonvanishing(&beta, 0xbe7a_5eed)
            .map_err(|(point, value)| BundleError::VanishingScale { point, value })?;
        Ok(Self { map, beta, inverse })
    }

    /// The identity factor with unit scale.
    pub fn identity(bundle: &TrivialLineBundle) -> Self {
        Self {
            map: SmoothMap::identity(bundle.base()),
            beta: ScalarField::constant(bundle.base(), 1.0),
            inverse: Some(SmoothMap::identity(bundle.base())),
        }
    }

    pub fn map(&self) -> &SmoothMap {
        &self.map
    }

    pub fn beta(&self) -> &ScalarField {
        &self.beta
    }

    pub fn source_chart(&self) -> &Arc<ChartDomain> {
        self.map.source()
    }

    pub fn target_chart(&self) -> &Arc<ChartDomain> {
        self.map.target()
    }

    pub fn inverse_map(&self) -> Result<&SmoothMap, BundleError> {
        self.inverse.as_ref().ok_or(BundleError::NoInverseDeclared)
    }

    /// Composition `self o other` of factors: base maps compose and the
    /// scales multiply, `beta = (beta_self o b_other) * beta_other`.
    pub fn compose(&self, other: &Factor) -> Result<Factor, BundleError> {
        let map = self.map.compose(&other.map)?;
        let beta = other.map.pullback_function(&self.beta)?.mul(&other.beta)?;
        let inverse = match (&self.inverse, &other.inverse) {
            (Some(a), Some(b)) => Some(b.compose(a)?),
            _ => None,
        };
        // composition of certified nonvanishing scales: no re-sampling
        Ok(Factor { map, beta, inverse })
    }

    /// Pull-back of a section of the target bundle:
    /// `(b, beta)^* s = (1/beta) * (s o b)`.
    pub fn pullback_section(&self, s: &ScalarField) -> Result<ScalarField, BundleError> {
        let composed = self.map.pullback_function(s)?;
        Ok(ScalarField::new(
            self.map.source(),
            Expr::div(composed.expr().clone(), self.beta.expr().clone()),
        ))
    }

    /// Pointwise der map: `(v, a)` at `x` maps to
    /// `(T_x b v, a - d_x beta(v)/beta(x))` at `b(x)`.
    pub fn der_map(&self, x: &[f64], v: &[f64], a: f64) -> Result<(Vec<f64>, f64), BundleError> {
        let jac = self.map.jacobian(x)?;
        let tangent: Vec<f64> = jac
            .iter()
            .map(|row| row.iter().zip(v).map(|(j, vi)| j * vi).sum())
            .collect();
        let (beta_v, beta_g) = self.beta.eval_with_grad(x)?;
        let dbeta_v: f64 = beta_g.iter().zip(v).map(|(g, vi)| g * vi).sum();
        Ok((tangent, a - dbeta_v / beta_v))
    }

    /// Push-forward of a derivation along a diffeomorphic factor: the
    /// symbol pushes forward along the base map and the scalar part
    /// becomes `(f - X[beta]/beta) o b^{-1}`, the trivialized form of
    /// `b_* f + beta * X[1/beta]`.
    pub fn der_pushforward(&self, d: &Derivation) -> Result<Derivation, BundleError> {
        check_same_chart(d.chart(), self.map.source()).map_err(BundleError::from)?;
        let inv = self.inverse_map()?;
        let target = self.map.target();
        let n_target = target.dim();
        let mut components = Vec::with_capacity(n_target);
        for a in 0..n_target {
            // (b_* X)^a = (sum_i d_i b^a * X^i) o b^{-1}
            let mut acc = Expr::constant(0.0);
            for i in 0..self.map.source().dim() {
                acc = Expr::add(
                    acc,
                    Expr::mul(
                        self.map.components[a].diff(i),
                        d.symbol().component(i).expr().clone(),
                    ),
                );
            }
            components.push(ScalarField::new(target, acc.substitute(inv.components())));
        }
        let symbol = VectorField::new(target, components)?;
        let x_beta = d.symbol().apply(&self.beta)?;
        let scalar_source = Expr::sub(
            d.scalar().expr().clone(),
            Expr::div(x_beta.expr().clone(), self.beta.expr().clone()),
        );
        let scalar = ScalarField::new(target, scalar_source.substitute(inv.components()));
        Derivation::new(symbol, scalar).map_err(Into::into)
    }
}

/// Sampling proxy for a nonvanishing declaration: every sampled value must
/// clear the threshold, and all samples must share one sign (a continuous
/// field sampled with both signs vanishes somewhere in between).
fn certify_nonvanishing(f: &ScalarField, seed: u64) -> Result<(), (Vec<f64>, f64)> {
    let windows = f.chart().sampling_windows();
    let mut sign = 0.0f64;
    for p in low_discrepancy_points(seed, NONVANISHING_SAMPLES, &windows) {
        match f.eval(&p) {
            Ok(v) => {
                if v.abs() <= NONVANISHING_THRESHOLD || (sign != 0.0 && v.signum() != sign) {
                    return Err((p, v.abs()));
                }
                sign = v.signum();
            }
            Err(_) => return Err((p, 0.0)),
        }
    }
    Ok(())
}

/// A derivation of the trivial bundle: symbol `X` plus scalar part `f`,
/// acting on sections by `X[s] + f*s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    symbol: VectorField,
    scalar: ScalarField,
}

impl Derivation {
    pub fn new(symbol: VectorField, scalar: ScalarField) -> Result<Self, ExprError> {
        check_same_chart(symbol.chart(), scalar.chart())?;
        Ok(Self { symbol, scalar })
    }

    pub fn chart(&self) -> &Arc<ChartDomain> {
        self.symbol.chart()
    }

    /// The anchor: the symbol vector field.
    pub fn symbol(&self) -> &VectorField {
        &self.symbol
    }

    pub fn scalar(&self) -> &ScalarField {
        &self.scalar
    }

    /// `(X (+) f)[s] = X[s] + f*s` as a new section.
    pub fn apply(&self, s: &ScalarField) -> Result<ScalarField, ExprError> {
        let xs = self.symbol.apply(s)?;
        xs.add(&self.scalar.mul(s)?)
    }

    /// Pointwise value `(X(x), f(x))`.
    pub fn value_at(&self, x: &[f64]) -> Result<(Vec<f64>, f64), ExprError> {
        Ok((self.symbol.eval(x)?, self.scalar.eval(x)?))
    }

    pub fn add(&self, other: &Derivation) -> Result<Derivation, ExprError> {
        Derivation::new(
            self.symbol.add(&other.symbol)?,
            self.scalar.add(&other.scalar)?,
        )
    }

    pub fn scale(&self, c: f64) -> Derivation {
        Derivation {
            symbol: VectorField::new(
                self.symbol.chart(),
                self.symbol
                    .components()
                    .iter()
                    .map(|f| f.scale(c))
                    .collect(),
            )
            .expect("same chart"),
            scalar: self.scalar.scale(c),
        }
    }
}

/// Bracket of derivations:
/// `[X (+) f, Y (+) g] = [X,Y] (+) X[g] - Y[f]`.
pub fn der_bracket(d1: &Derivation, d2: &Derivation) -> Result<Derivation, ExprError> {
    check_same_chart(d1.chart(), d2.chart())?;
    let symbol = lie_bracket(&d1.symbol, &d2.symbol)?;
    let scalar = d1
        .symbol
        .apply(&d2.scalar)?
        .sub(&d2.symbol.apply(&d1.scalar)?)?;
    Derivation::new(symbol, scalar)
}

/// The value of a 1-jet of a section: base point, first derivatives and
/// the section value.
#[derive(Debug, Clone, PartialEq)]
pub struct JetValue {
    pub base_point: Vec<f64>,
    pub p: Vec<f64>,
    pub u: f64,
}

/// First jet of a section at a point: `(ds|_x, s(x))`.
pub fn jet_prolong(s: &ScalarField, x: &[f64]) -> Result<JetValue, ExprError> {
    let (u, p) = s.eval_with_grad(x)?;
    Ok(JetValue {
        base_point: x.to_vec(),
        p,
        u,
    })
}

/// Duality pairing of a jet value with a derivation value at the same
/// base point: `j((v, a)) = p.v + u*a`, so that `a[s] = j^1 s (a)`.
pub fn jet_pairing(
    j: &JetValue,
    base_point: &[f64],
    v: &[f64],
    a: f64,
) -> Result<f64, BundleError> {
    if j.base_point != base_point {
        return Err(BundleError::BasePointMismatch);
    }
    Ok(j.p.iter().zip(v).map(|(pi, vi)| pi * vi).sum::<f64>() + j.u * a)
}

/// Which connected component of the fibre-ratio axis the base product
/// uses. Flows never cross zero, so one branch at a time is faithful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RatioBranch {
    #[default]
    Positive,
    Negative,
}

/// The base product `M x N x R^x` of two trivial line bundles, with
/// bookkeeping for embedding fields of either base and for the projection
/// factors.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseProduct {
    chart: Arc<ChartDomain>,
    n1: usize,
    n2: usize,
}

impl BaseProduct {
    pub fn new(l1: &TrivialLineBundle, l2: &TrivialLineBundle) -> Result<Self, BundleError> {
        Self::with_branch(l1, l2, RatioBranch::Positive)
    }

    pub fn with_branch(
        l1: &TrivialLineBundle,
        l2: &TrivialLineBundle,
        branch: RatioBranch,
    ) -> Result<Self, BundleError> {
        let n1 = l1.base().dim();
        let n2 = l2.base().dim();
        let mut names: Vec<String> = Vec::with_capacity(n1 + n2 + 1);
        let mut bounds = Vec::with_capacity(n1 + n2 + 1);
        let clash = l1
            .base()
            .coord_names()
            .iter()
            .any(|n| l2.base().coord_names().contains(n));
        for n in l1.base().coord_names() {
            // clashes between the factors are resolved by suffixing,
            // deterministically and on both sides
            names.push(if clash { format!("{n}1") } else { n.clone() });
        }
        for n in l2.base().coord_names() {
            names.push(if clash { format!("{n}2") } else { n.clone() });
        }
        bounds.extend_from_slice(l1.base().bounds());
        bounds.extend_from_slice(l2.base().bounds());
        let mut fibre_name = String::from("b");
        while names.contains(&fibre_name) {
            fibre_name.push('_');
        }
        names.push(fibre_name);
        bounds.push(Some(match branch {
            RatioBranch::Positive => (0.0, f64::INFINITY),
            RatioBranch::Negative => (f64::NEG_INFINITY, 0.0),
        }));
        let chart = ChartDomain::with_bounds(names, bounds)?;
        Ok(Self { chart, n1, n2 })
    }

    pub fn chart(&self) -> &Arc<ChartDomain> {
        &self.chart
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    /// Index of the fibre-ratio coordinate.
    pub fn fibre_index(&self) -> usize {
        self.n1 + self.n2
    }

    fn embedding_1(&self) -> Vec<Expr> {
        (0..self.n1).map(Expr::var).collect()
    }

    fn embedding_2(&self) -> Vec<Expr> {
        (0..self.n2).map(|i| Expr::var(self.n1 + i)).collect()
    }

    /// A function of the first base as a function on the product.
    pub fn lift_function_1(&self, f: &ScalarField) -> Result<ScalarField, BundleError> {
        if f.chart().dim() != self.n1 {
            return Err(chart_mismatch(f.chart(), &self.chart));
        }
        Ok(f.compose(&self.embedding_1(), &self.chart)?)
    }

    /// A function of the second base as a function on the product.
    pub fn lift_function_2(&self, f: &ScalarField) -> Result<ScalarField, BundleError> {
        if f.chart().dim() != self.n2 {
            return Err(chart_mismatch(f.chart(), &self.chart));
        }
        Ok(f.compose(&self.embedding_2(), &self.chart)?)
    }

    /// Pull-back of a section of the first bundle along the first
    /// projection factor: in the trivialization simply `s(y1)`.
    pub fn pullback_p1(&self, s: &ScalarField) -> Result<ScalarField, BundleError> {
        self.lift_function_1(s)
    }

    /// Pull-back of a section of the second bundle along the second
    /// projection factor: `s(y2) / b`, through the ratio coordinate.
    pub fn pullback_p2(&self, s: &ScalarField) -> Result<ScalarField, BundleError> {
        let lifted = self.lift_function_2(s)?;
        Ok(ScalarField::new(
            &self.chart,
            Expr::div(lifted.expr().clone(), Expr::var(self.fibre_index())),
        ))
    }

    /// The first projection as a factor (fibre-wise identity).
    pub fn projection_factor_1(&self, l1: &TrivialLineBundle) -> Result<Factor, BundleError> {
        let map = SmoothMap::new(&self.chart, l1.base(), self.embedding_1())?;
        Factor::new(map, ScalarField::constant(&self.chart, 1.0), None)
    }

    /// The second projection as a factor: the fibre map multiplies by the
    /// ratio coordinate.
    pub fn projection_factor_2(&self, l2: &TrivialLineBundle) -> Result<Factor, BundleError> {
        let map = SmoothMap::new(&self.chart, l2.base(), self.embedding_2())?;
        Factor::new(
            map,
            ScalarField::coordinate(&self.chart, self.fibre_index()),
            None,
        )
    }

    /// Ratio function of two sections,
    /// `(s1/s2)(y1, y2, b) = s1(y1) * s2(y2)^{-1} * b`.
    /// The denominator's nonvanishing is certified by sampling.
    pub fn ratio_function(
        &self,
        s1: &ScalarField,
        s2: &ScalarField,
    ) -> Result<ScalarField, BundleError> {
        certify_nonvanishing(s2, 0x5ec0_2d5e)
            .map_err(|(point, value)| BundleError::VanishingDenominator { point, value })?;
        let f1 = self.lift_function_1(s1)?;
        let f2 = self.lift_function_2(s2)?;
        Ok(ScalarField::new(
            &self.chart,
            Expr::mul(
                Expr::div(f1.expr().clone(), f2.expr().clone()),
                Expr::var(self.fibre_index()),
            ),
        ))
    }
}
