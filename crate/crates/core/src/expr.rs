//! Expression trees and differential evaluation for smooth fields on
//! chart domains.
//!
//! Fields are closed-form trees over chart coordinates with constants,
//! `+ - * /`, integer powers and `sin cos exp log`. Evaluation propagates
//! (value, gradient, Hessian) triples forward through the tree, so first
//! and second derivatives are exact for the tree rather than differenced.
//! Trees also support symbolic differentiation and substitution, which is
//! how brackets, Hamiltonian fields and pull-backs are built as new fields.
//!
//! Evaluation is deterministic: the same tree at the same point produces
//! bitwise-identical results.

#![allow(clippy::should_implement_trait, clippy::needless_range_loop)]

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("parse error at position {position}: {message}")]
    ParseError { position: usize, message: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("chart mismatch: {0} vs {1}")]
    ChartMismatch(String, String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("non-finite value encountered during evaluation")]
    NonFinite,
    #[error("invalid chart: {0}")]
    InvalidChart(String),
    #[error("point dimension {got} does not match chart dimension {expected}")]
    PointDimension { expected: usize, got: usize },
}

/// A coordinate chart: named coordinates with optional open bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartDomain {
    coord_names: Vec<String>,
    bounds: Vec<Option<(f64, f64)>>,
}

impl ChartDomain {
    pub fn new<S: Into<String>>(names: Vec<S>) -> Result<Arc<Self>, ExprError> {
        let coord_names: Vec<String> = names.into_iter().map(Into::into).collect();
        if coord_names.is_empty() {
            return Err(ExprError::InvalidChart("chart needs a coordinate".into()));
        }
        for (i, n) in coord_names.iter().enumerate() {
            if coord_names[..i].contains(n) {
                return Err(ExprError::InvalidChart(format!(
                    "duplicate coordinate `{n}`"
                )));
            }
        }
        let bounds = vec![None; coord_names.len()];
        Ok(Arc::new(Self {
            coord_names,
            bounds,
        }))
    }

    /// Chart with per-coordinate open intervals; `None` leaves a
    /// coordinate unbounded, infinite endpoints are allowed.
    pub fn with_bounds<S: Into<String>>(
        names: Vec<S>,
        bounds: Vec<Option<(f64, f64)>>,
    ) -> Result<Arc<Self>, ExprError> {
        let chart = Self::new(names)?;
        if bounds.len() != chart.coord_names.len() {
            return Err(ExprError::InvalidChart(
                "one bound entry per coordinate required".into(),
            ));
        }
        for b in bounds.iter().flatten() {
            if b.0.is_nan() || b.1.is_nan() || b.0 >= b.1 {
                return Err(ExprError::InvalidChart(format!(
                    "empty interval ({}, {})",
                    b.0, b.1
                )));
            }
        }
        Ok(Arc::new(Self {
            coord_names: chart.coord_names.clone(),
            bounds,
        }))
    }

    pub fn dim(&self) -> usize {
        self.coord_names.len()
    }

    pub fn coord_names(&self) -> &[String] {
        &self.coord_names
    }

    pub fn bounds(&self) -> &[Option<(f64, f64)>] {
        &self.bounds
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coord_names.iter().position(|n| n == name)
    }

    pub fn describe(&self) -> String {
        format!("({})", self.coord_names.join(","))
    }

    /// True if the point lies inside the declared bounds (unbounded
    /// coordinates always pass).
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(&self.bounds).all(|(v, b)| match b {
                Some((lo, hi)) => v > lo && v < hi,
                None => true,
            })
    }

    pub fn check_point(&self, x: &[f64]) -> Result<(), ExprError> {
        if x.len() != self.dim() {
            return Err(ExprError::PointDimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.contains(x) {
            return Err(ExprError::DomainError(format!(
                "point outside chart bounds of {}",
                self.describe()
            )));
        }
        Ok(())
    }

    /// Finite sampling window per coordinate: declared bounds when finite,
    /// a positive window (0.2, 5) for half-lines like (0, inf), and
    /// [-2, 2] for unbounded coordinates.
    pub fn sampling_windows(&self) -> Vec<(f64, f64)> {
        self.bounds
            .iter()
            .map(|b| match b {
                Some((lo, hi)) if lo.is_finite() && hi.is_finite() => {
                    let inset = 1e-9 * (hi - lo);
                    (lo + inset, hi - inset)
                }
                Some((lo, _)) if lo.is_finite() => (lo + 0.2, lo + 5.0),
                Some((_, hi)) if hi.is_finite() => (hi - 5.0, hi - 0.2),
                _ => (-2.0, 2.0),
            })
            .collect()
    }
}

pub fn check_same_chart(a: &Arc<ChartDomain>, b: &Arc<ChartDomain>) -> Result<(), ExprError> {
    if a == b {
        Ok(())
    } else {
        Err(ExprError::ChartMismatch(a.describe(), b.describe()))
    }
}

#[derive(Debug, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Neg(Expr),
    Pow(Expr, i32),
    Sin(Expr),
    Cos(Expr),
    Exp(Expr),
    Log(Expr),
}

/// A shared expression node. Cloning is cheap; subtrees are reused freely
/// by symbolic differentiation and substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr(Arc::new(Node::Const(c)))
    }

    pub fn var(i: usize) -> Expr {
        Expr(Arc::new(Node::Var(i)))
    }

    fn as_const(&self) -> Option<f64> {
        match &*self.0 {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x + y),
            (Some(0.0), _) => b,
            (_, Some(0.0)) => a,
            _ => Expr(Arc::new(Node::Add(a, b))),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x - y),
            (_, Some(0.0)) => a,
            (Some(0.0), _) => Expr::neg(b),
            _ => Expr(Arc::new(Node::Sub(a, b))),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Expr::constant(x * y),
            (Some(0.0), _) | (_, Some(0.0)) => Expr::constant(0.0),
            (Some(1.0), _) => b,
            (_, Some(1.0)) => a,
            _ => Expr(Arc::new(Node::Mul(a, b))),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => Expr::constant(x / y),
            (_, Some(1.0)) => a,
            _ => Expr(Arc::new(Node::Div(a, b))),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match &*a.0 {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(inner) => inner.clone(),
            _ => Expr(Arc::new(Node::Neg(a))),
        }
    }

    pub fn powi(a: Expr, k: i32) -> Expr {
        match (a.as_const(), k) {
            (_, 0) => Expr::constant(1.0),
            (_, 1) => a,
            (Some(c), _) if c != 0.0 || k > 0 => Expr::constant(c.powi(k)),
            _ => Expr(Arc::new(Node::Pow(a, k))),
        }
    }

    pub fn sin(a: Expr) -> Expr {
        match a.as_const() {
            Some(c) => Expr::constant(c.sin()),
            None => Expr(Arc::new(Node::Sin(a))),
        }
    }

    pub fn cos(a: Expr) -> Expr {
        match a.as_const() {
            Some(c) => Expr::constant(c.cos()),
            None => Expr(Arc::new(Node::Cos(a))),
        }
    }

    pub fn exp(a: Expr) -> Expr {
        match a.as_const() {
            Some(c) => Expr::constant(c.exp()),
            None => Expr(Arc::new(Node::Exp(a))),
        }
    }

    pub fn log(a: Expr) -> Expr {
        match a.as_const() {
            Some(c) if c > 0.0 => Expr::constant(c.ln()),
            _ => Expr(Arc::new(Node::Log(a))),
        }
    }

    /// Plain value at a point (no derivative bookkeeping).
    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        let v = self.eval_raw(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFinite)
        }
    }

    fn eval_raw(&self, x: &[f64]) -> Result<f64, ExprError> {
        Ok(match &*self.0 {
            Node::Const(c) => *c,
            Node::Var(i) => x[*i],
            Node::Add(a, b) => a.eval_raw(x)? + b.eval_raw(x)?,
            Node::Sub(a, b) => a.eval_raw(x)? - b.eval_raw(x)?,
            Node::Mul(a, b) => a.eval_raw(x)? * b.eval_raw(x)?,
            Node::Div(a, b) => {
                let d = b.eval_raw(x)?;
                if d == 0.0 {
                    return Err(ExprError::DomainError("division by zero".into()));
                }
                a.eval_raw(x)? / d
            }
            Node::Neg(a) => -a.eval_raw(x)?,
            Node::Pow(a, k) => {
                let v = a.eval_raw(x)?;
                if v == 0.0 && *k < 0 {
                    return Err(ExprError::DomainError("zero to a negative power".into()));
                }
                v.powi(*k)
            }
            Node::Sin(a) => a.eval_raw(x)?.sin(),
            Node::Cos(a) => a.eval_raw(x)?.cos(),
            Node::Exp(a) => a.eval_raw(x)?.exp(),
            Node::Log(a) => {
                let v = a.eval_raw(x)?;
                if v <= 0.0 {
                    return Err(ExprError::DomainError(format!("log of {v}")));
                }
                v.ln()
            }
        })
    }

    /// Value and gradient by forward propagation.
    pub fn eval_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), ExprError> {
        let d = self.eval_dual1(x, x.len())?;
        if !d.v.is_finite() || d.g.iter().any(|g| !g.is_finite()) {
            return Err(ExprError::NonFinite);
        }
        Ok((d.v, d.g))
    }

    /// Value, gradient and (symmetric) Hessian by forward propagation.
    pub fn eval_hess(&self, x: &[f64]) -> Result<HessianData, ExprError> {
        let d = self.eval_dual2(x, x.len())?;
        let ok = d.v.is_finite()
            && d.g.iter().all(|g| g.is_finite())
            && d.h.iter().flatten().all(|h| h.is_finite());
        if !ok {
            return Err(ExprError::NonFinite);
        }
        Ok((d.v, d.g, d.h))
    }

    fn eval_dual1(&self, x: &[f64], n: usize) -> Result<Dual1, ExprError> {
        Ok(match &*self.0 {
            Node::Const(c) => Dual1::constant(*c, n),
            Node::Var(i) => Dual1::variable(x[*i], *i, n),
            Node::Add(a, b) => a.eval_dual1(x, n)?.add(&b.eval_dual1(x, n)?),
            Node::Sub(a, b) => a.eval_dual1(x, n)?.sub(&b.eval_dual1(x, n)?),
            Node::Mul(a, b) => a.eval_dual1(x, n)?.mul(&b.eval_dual1(x, n)?),
            Node::Div(a, b) => {
                let bb = b.eval_dual1(x, n)?;
                if bb.v == 0.0 {
                    return Err(ExprError::DomainError("division by zero".into()));
                }
                a.eval_dual1(x, n)?.div(&bb)
            }
            Node::Neg(a) => a.eval_dual1(x, n)?.neg(),
            Node::Pow(a, k) => {
                let aa = a.eval_dual1(x, n)?;
                if aa.v == 0.0 && *k < 0 {
                    return Err(ExprError::DomainError("zero to a negative power".into()));
                }
                aa.powi(*k)
            }
            Node::Sin(a) => a.eval_dual1(x, n)?.chain(f64::sin, f64::cos),
            Node::Cos(a) => a.eval_dual1(x, n)?.chain(f64::cos, |v| -v.sin()),
            Node::Exp(a) => a.eval_dual1(x, n)?.chain(f64::exp, f64::exp),
            Node::Log(a) => {
                let aa = a.eval_dual1(x, n)?;
                if aa.v <= 0.0 {
                    return Err(ExprError::DomainError(format!("log of {}", aa.v)));
                }
                aa.chain(f64::ln, |v| 1.0 / v)
            }
        })
    }

    fn eval_dual2(&self, x: &[f64], n: usize) -> Result<Dual2, ExprError> {
        Ok(match &*self.0 {
            Node::Const(c) => Dual2::constant(*c, n),
            Node::Var(i) => Dual2::variable(x[*i], *i, n),
            Node::Add(a, b) => a.eval_dual2(x, n)?.add(&b.eval_dual2(x, n)?),
            Node::Sub(a, b) => a.eval_dual2(x, n)?.sub(&b.eval_dual2(x, n)?),
            Node::Mul(a, b) => a.eval_dual2(x, n)?.mul(&b.eval_dual2(x, n)?),
            Node::Div(a, b) => {
                let bb = b.eval_dual2(x, n)?;
                if bb.v == 0.0 {
                    return Err(ExprError::DomainError("division by zero".into()));
                }
                a.eval_dual2(x, n)?.div(&bb)
            }
            Node::Neg(a) => a.eval_dual2(x, n)?.neg(),
            Node::Pow(a, k) => {
                let aa = a.eval_dual2(x, n)?;
                if aa.v == 0.0 && *k < 0 {
                    return Err(ExprError::DomainError("zero to a negative power".into()));
                }
                aa.powi(*k)
            }
            Node::Sin(a) => a.eval_dual2(x, n)?.chain(f64::sin, f64::cos, |v| -v.sin()),
            Node::Cos(a) => a
                .eval_dual2(x, n)?
                .chain(f64::cos, |v| -v.sin(), |v| -v.cos()),
            Node::Exp(a) => a.eval_dual2(x, n)?.chain(f64::exp, f64::exp, f64::exp),
            Node::Log(a) => {
                let aa = a.eval_dual2(x, n)?;
                if aa.v <= 0.0 {
                    return Err(ExprError::DomainError(format!("log of {}", aa.v)));
                }
                aa.chain(f64::ln, |v| 1.0 / v, |v| -1.0 / (v * v))
            }
        })
    }

    /// Exact symbolic partial derivative with respect to coordinate `var`.
    pub fn diff(&self, var: usize) -> Expr {
        match &*self.0 {
            Node::Const(_) => Expr::constant(0.0),
            Node::Var(i) => Expr::constant(if *i == var { 1.0 } else { 0.0 }),
            Node::Add(a, b) => Expr::add(a.diff(var), b.diff(var)),
            Node::Sub(a, b) => Expr::sub(a.diff(var), b.diff(var)),
            Node::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(var), b.clone()),
                Expr::mul(a.clone(), b.diff(var)),
            ),
            Node::Div(a, b) => Expr::div(
                Expr::sub(
                    Expr::mul(a.diff(var), b.clone()),
                    Expr::mul(a.clone(), b.diff(var)),
                ),
                Expr::powi(b.clone(), 2),
            ),
            Node::Neg(a) => Expr::neg(a.diff(var)),
            Node::Pow(a, k) => Expr::mul(
                Expr::mul(Expr::constant(*k as f64), Expr::powi(a.clone(), k - 1)),
                a.diff(var),
            ),
            Node::Sin(a) => Expr::mul(Expr::cos(a.clone()), a.diff(var)),
            Node::Cos(a) => Expr::neg(Expr::mul(Expr::sin(a.clone()), a.diff(var))),
            Node::Exp(a) => Expr::mul(Expr::exp(a.clone()), a.diff(var)),
            Node::Log(a) => Expr::div(a.diff(var), a.clone()),
        }
    }

    /// Replaces `Var(i)` by `map[i]`; used for composition with smooth
    /// maps and for relabelling charts.
    pub fn substitute(&self, map: &[Expr]) -> Expr {
        match &*self.0 {
            Node::Const(c) => Expr::constant(*c),
            Node::Var(i) => map[*i].clone(),
            Node::Add(a, b) => Expr::add(a.substitute(map), b.substitute(map)),
            Node::Sub(a, b) => Expr::sub(a.substitute(map), b.substitute(map)),
            Node::Mul(a, b) => Expr::mul(a.substitute(map), b.substitute(map)),
            Node::Div(a, b) => Expr::div(a.substitute(map), b.substitute(map)),
            Node::Neg(a) => Expr::neg(a.substitute(map)),
            Node::Pow(a, k) => Expr::powi(a.substitute(map), *k),
            Node::Sin(a) => Expr::sin(a.substitute(map)),
            Node::Cos(a) => Expr::cos(a.substitute(map)),
            Node::Exp(a) => Expr::exp(a.substitute(map)),
            Node::Log(a) => Expr::log(a.substitute(map)),
        }
    }

    fn write_with_names(&self, names: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(i) => write!(f, "{}", names[*i]),
            Node::Add(a, b) => {
                write!(f, "(")?;
                a.write_with_names(names, f)?;
                write!(f, " + ")?;
                b.write_with_names(names, f)?;
                write!(f, ")")
            }
            Node::Sub(a, b) => {
                write!(f, "(")?;
                a.write_with_names(names, f)?;
                write!(f, " - ")?;
                b.write_with_names(names, f)?;
                write!(f, ")")
            }
            Node::Mul(a, b) => {
                write!(f, "(")?;
                a.write_with_names(names, f)?;
                write!(f, "*")?;
                b.write_with_names(names, f)?;
                write!(f, ")")
            }
            Node::Div(a, b) => {
                write!(f, "(")?;
                a.write_with_names(names, f)?;
                write!(f, "/")?;
                b.write_with_names(names, f)?;
                write!(f, ")")
            }
            Node::Neg(a) => {
                write!(f, "-(")?;
                a.write_with_names(names, f)?;
                write!(f, ")")
            }
            Node::Pow(a, k) => {
                write!(f, "(")?;
                a.write_with_names(names, f)?;
                write!(f, ")^{k}")
            }
            Node::Sin(a) => {
                write!(f, "sin(")?;
                a.write_with_names(names, f)?;
                write!(f, ")")
            }
            Node::Cos(a) => {
                write!(f, "cos(")?;
                a.write_with_names(names, f)?;
                write!(f, ")")
            }
            Node::Exp(a) => {
                write!(f, "exp(")?;
                a.write_with_names(names, f)?;
                write!(f, ")")
            }
            Node::Log(a) => {
                write!(f, "log(")?;
                a.write_with_names(names, f)?;
                write!(f, ")")
            }
        }
    }
}

struct Dual1 {
    v: f64,
    g: Vec<f64>,
}

impl Dual1 {
    fn constant(v: f64, n: usize) -> Self {
        Self { v, g: vec![0.0; n] }
    }
    fn variable(v: f64, i: usize, n: usize) -> Self {
        let mut g = vec![0.0; n];
        g[i] = 1.0;
        Self { v, g }
    }
    fn add(&self, o: &Self) -> Self {
        Self {
            v: self.v + o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a + b).collect(),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        Self {
            v: self.v - o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a - b).collect(),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        Self {
            v: self.v * o.v,
            g: self
                .g
                .iter()
                .zip(&o.g)
                .map(|(a, b)| a * o.v + self.v * b)
                .collect(),
        }
    }
    fn div(&self, o: &Self) -> Self {
        let v = self.v / o.v;
        Self {
            v,
            g: self
                .g
                .iter()
                .zip(&o.g)
                .map(|(a, b)| (a - v * b) / o.v)
                .collect(),
        }
    }
    fn neg(&self) -> Self {
        Self {
            v: -self.v,
            g: self.g.iter().map(|a| -a).collect(),
        }
    }
    fn powi(&self, k: i32) -> Self {
        let dv = k as f64 * self.v.powi(k - 1);
        Self {
            v: self.v.powi(k),
            g: self.g.iter().map(|a| dv * a).collect(),
        }
    }
    fn chain(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Self {
        let d = df(self.v);
        Self {
            v: f(self.v),
            g: self.g.iter().map(|a| d * a).collect(),
        }
    }
}

struct Dual2 {
    v: f64,
    g: Vec<f64>,
    h: Vec<Vec<f64>>,
}

impl Dual2 {
    fn constant(v: f64, n: usize) -> Self {
        Self {
            v,
            g: vec![0.0; n],
            h: vec![vec![0.0; n]; n],
        }
    }
    fn variable(v: f64, i: usize, n: usize) -> Self {
        let mut g = vec![0.0; n];
        g[i] = 1.0;
        Self {
            v,
            g,
            h: vec![vec![0.0; n]; n],
        }
    }
    fn zip(&self, o: &Self, fv: f64, c_self: f64, c_other: f64) -> Self {
        let n = self.g.len();
        let g = (0..n)
            .map(|i| c_self * self.g[i] + c_other * o.g[i])
            .collect();
        let h = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| c_self * self.h[i][j] + c_other * o.h[i][j])
                    .collect()
            })
            .collect();
        Self { v: fv, g, h }
    }
    fn add(&self, o: &Self) -> Self {
        self.zip(o, self.v + o.v, 1.0, 1.0)
    }
    fn sub(&self, o: &Self) -> Self {
        self.zip(o, self.v - o.v, 1.0, -1.0)
    }
    fn mul(&self, o: &Self) -> Self {
        let n = self.g.len();
        let v = self.v * o.v;
        let g: Vec<f64> = (0..n).map(|i| self.g[i] * o.v + self.v * o.g[i]).collect();
        let h = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        self.h[i][j] * o.v
                            + self.v * o.h[i][j]
                            + self.g[i] * o.g[j]
                            + self.g[j] * o.g[i]
                    })
                    .collect()
            })
            .collect();
        Self { v, g, h }
    }
    fn div(&self, o: &Self) -> Self {
        let n = self.g.len();
        let v = self.v / o.v;
        let g: Vec<f64> = (0..n).map(|i| (self.g[i] - v * o.g[i]) / o.v).collect();
        let h = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        (self.h[i][j] - g[i] * o.g[j] - o.g[i] * g[j] - v * o.h[i][j]) / o.v
                    })
                    .collect()
            })
            .collect();
        Self { v, g, h }
    }
    fn neg(&self) -> Self {
        self.zip(self, -self.v, -1.0, 0.0)
    }
    fn powi(&self, k: i32) -> Self {
        let d1 = k as f64 * self.v.powi(k - 1);
        let d2 = (k as f64) * (k as f64 - 1.0) * self.v.powi(k - 2);
        self.chain_vals(self.v.powi(k), d1, d2)
    }
    fn chain(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
        d2f: impl Fn(f64) -> f64,
    ) -> Self {
        self.chain_vals(f(self.v), df(self.v), d2f(self.v))
    }
    fn chain_vals(&self, fv: f64, d1: f64, d2: f64) -> Self {
        let n = self.g.len();
        let g: Vec<f64> = self.g.iter().map(|a| d1 * a).collect();
        let h = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| d1 * self.h[i][j] + d2 * self.g[i] * self.g[j])
                    .collect()
            })
            .collect();
        Self { v: fv, g, h }
    }
}

/// Value, gradient, Hessian triple returned by second-order evaluation.
pub type HessianData = (f64, Vec<f64>, Vec<Vec<f64>>);

/// Upper-triangle component data at a point: index pair, value, gradient.
type TriangleGrads = Vec<((usize, usize), f64, Vec<f64>)>;

/// First derivatives of a field at a point, as a covector.
#[derive(Debug, Clone, PartialEq)]
pub struct CovectorFieldValue {
    pub point: Vec<f64>,
    pub components: Vec<f64>,
}

/// A smooth scalar field: an expression tree over the coordinates of a
/// chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    chart: Arc<ChartDomain>,
    expr: Expr,
}

impl ScalarField {
    pub fn new(chart: &Arc<ChartDomain>, expr: Expr) -> Self {
        Self {
            chart: Arc::clone(chart),
            expr,
        }
    }

    pub fn constant(chart: &Arc<ChartDomain>, c: f64) -> Self {
        Self::new(chart, Expr::constant(c))
    }

    pub fn coordinate(chart: &Arc<ChartDomain>, i: usize) -> Self {
        Self::new(chart, Expr::var(i))
    }

    /// Parses the field grammar against the chart coordinates.
    pub fn parse(src: &str, chart: &Arc<ChartDomain>) -> Result<Self, ExprError> {
        let expr = parse_expr(src, chart)?;
        Ok(Self::new(chart, expr))
    }

    pub fn chart(&self) -> &Arc<ChartDomain> {
        &self.chart
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.chart.check_point(x)?;
        self.expr.eval(x)
    }

    pub fn grad(&self, x: &[f64]) -> Result<CovectorFieldValue, ExprError> {
        self.chart.check_point(x)?;
        let (_, g) = self.expr.eval_grad(x)?;
        Ok(CovectorFieldValue {
            point: x.to_vec(),
            components: g,
        })
    }

    pub fn eval_with_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), ExprError> {
        self.chart.check_point(x)?;
        self.expr.eval_grad(x)
    }

    pub fn hess(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ExprError> {
        self.chart.check_point(x)?;
        let (_, _, h) = self.expr.eval_hess(x)?;
        Ok(h)
    }

    pub fn diff(&self, var: usize) -> ScalarField {
        ScalarField::new(&self.chart, self.expr.diff(var))
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField, ExprError> {
        check_same_chart(&self.chart, &other.chart)?;
        Ok(ScalarField::new(
            &self.chart,
            Expr::add(self.expr.clone(), other.expr.clone()),
        ))
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField, ExprError> {
        check_same_chart(&self.chart, &other.chart)?;
        Ok(ScalarField::new(
            &self.chart,
            Expr::sub(self.expr.clone(), other.expr.clone()),
        ))
    }

    pub fn mul(&self, other: &ScalarField) -> Result<ScalarField, ExprError> {
        check_same_chart(&self.chart, &other.chart)?;
        Ok(ScalarField::new(
            &self.chart,
            Expr::mul(self.expr.clone(), other.expr.clone()),
        ))
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        ScalarField::new(&self.chart, Expr::mul(Expr::constant(c), self.expr.clone()))
    }

    /// Composition with a smooth map into this field's chart: each of this
    /// chart's coordinates is replaced by the corresponding component
    /// expression over `target`.
    pub fn compose(
        &self,
        components: &[Expr],
        target: &Arc<ChartDomain>,
    ) -> Result<ScalarField, ExprError> {
        if components.len() != self.chart.dim() {
            return Err(ExprError::ChartMismatch(
                self.chart.describe(),
                format!("map with {} components", components.len()),
            ));
        }
        Ok(ScalarField::new(target, self.expr.substitute(components)))
    }
}

impl fmt::Display for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.write_with_names(self.chart.coord_names(), f)
    }
}

/// A vector field: one scalar component per chart coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    chart: Arc<ChartDomain>,
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(
        chart: &Arc<ChartDomain>,
        components: Vec<ScalarField>,
    ) -> Result<Self, ExprError> {
        if components.len() != chart.dim() {
            return Err(ExprError::ChartMismatch(
                chart.describe(),
                format!("{} components", components.len()),
            ));
        }
        for c in &components {
            check_same_chart(&c.chart, chart)?;
        }
        Ok(Self {
            chart: Arc::clone(chart),
            components,
        })
    }

    pub fn zero(chart: &Arc<ChartDomain>) -> Self {
        Self {
            chart: Arc::clone(chart),
            components: (0..chart.dim())
                .map(|_| ScalarField::constant(chart, 0.0))
                .collect(),
        }
    }

    /// The coordinate field `d/dx_i`.
    pub fn coordinate_direction(chart: &Arc<ChartDomain>, i: usize) -> Self {
        let components = (0..chart.dim())
            .map(|j| ScalarField::constant(chart, if i == j { 1.0 } else { 0.0 }))
            .collect();
        Self {
            chart: Arc::clone(chart),
            components,
        }
    }

    pub fn chart(&self) -> &Arc<ChartDomain> {
        &self.chart
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        &self.components[i]
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    /// Directional derivative `X[f]` as a new scalar field.
    pub fn apply(&self, f: &ScalarField) -> Result<ScalarField, ExprError> {
        check_same_chart(&self.chart, &f.chart)?;
        let mut acc = Expr::constant(0.0);
        for (i, comp) in self.components.iter().enumerate() {
            acc = Expr::add(acc, Expr::mul(comp.expr.clone(), f.expr.diff(i)));
        }
        Ok(ScalarField::new(&self.chart, acc))
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField, ExprError> {
        check_same_chart(&self.chart, &other.chart)?;
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.add(b))
            .collect::<Result<Vec<_>, _>>()?;
        VectorField::new(&self.chart, components)
    }

    pub fn scale_field(&self, f: &ScalarField) -> Result<VectorField, ExprError> {
        check_same_chart(&self.chart, &f.chart)?;
        let components = self
            .components
            .iter()
            .map(|c| c.mul(f))
            .collect::<Result<Vec<_>, _>>()?;
        VectorField::new(&self.chart, components)
    }
}

/// Lie bracket of vector fields, `[X,Y]^i = X^j d_j Y^i - Y^j d_j X^i`.
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField, ExprError> {
    check_same_chart(x.chart(), y.chart())?;
    let n = x.chart().dim();
    let mut components = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = Expr::constant(0.0);
        for j in 0..n {
            acc = Expr::add(
                acc,
                Expr::sub(
                    Expr::mul(x.components[j].expr.clone(), y.components[i].expr.diff(j)),
                    Expr::mul(y.components[j].expr.clone(), x.components[i].expr.diff(j)),
                ),
            );
        }
        components.push(ScalarField::new(x.chart(), acc));
    }
    VectorField::new(x.chart(), components)
}

/// A bivector field stored by its strictly upper triangular components;
/// the lower triangle and diagonal are implied by antisymmetry, so the
/// antisymmetry of values is structural rather than a runtime invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct BivectorField {
    chart: Arc<ChartDomain>,
    // upper[(i, j)] for i < j, row-major over the strict upper triangle
    upper: Vec<ScalarField>,
}

impl BivectorField {
    fn triangle_len(n: usize) -> usize {
        n * (n - 1) / 2
    }

    fn index(n: usize, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < n);
        // offset of row i in the strict upper triangle, then column
        i * n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn zero(chart: &Arc<ChartDomain>) -> Self {
        let n = chart.dim();
        Self {
            chart: Arc::clone(chart),
            upper: (0..Self::triangle_len(n))
                .map(|_| ScalarField::constant(chart, 0.0))
                .collect(),
        }
    }

    /// Builds from a list of `(i, j, field)` entries with `i < j`;
    /// unspecified components are zero.
    pub fn from_components(
        chart: &Arc<ChartDomain>,
        entries: Vec<(usize, usize, ScalarField)>,
    ) -> Result<Self, ExprError> {
        let n = chart.dim();
        let mut upper: Vec<ScalarField> = (0..Self::triangle_len(n))
            .map(|_| ScalarField::constant(chart, 0.0))
            .collect();
        for (i, j, f) in entries {
            if i >= j || j >= n {
                return Err(ExprError::InvalidChart(format!(
                    "bivector component ({i},{j}) is not strictly upper triangular"
                )));
            }
            check_same_chart(&f.chart, chart)?;
            upper[Self::index(n, i, j)] = f;
        }
        Ok(Self {
            chart: Arc::clone(chart),
            upper,
        })
    }

    pub fn chart(&self) -> &Arc<ChartDomain> {
        &self.chart
    }

    /// Component expression with the antisymmetry sign folded in.
    pub fn component_expr(&self, i: usize, j: usize) -> Expr {
        let n = self.chart.dim();
        if i == j {
            Expr::constant(0.0)
        } else if i < j {
            self.upper[Self::index(n, i, j)].expr.clone()
        } else {
            Expr::neg(self.upper[Self::index(n, j, i)].expr.clone())
        }
    }

    /// Values of all components at a point as a full antisymmetric matrix.
    pub fn eval_matrix(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ExprError> {
        let n = self.chart.dim();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = self.upper[Self::index(n, i, j)].eval(x)?;
                m[i][j] = v;
                m[j][i] = -v;
            }
        }
        Ok(m)
    }

    /// Values and gradients of the strict upper triangle at a point.
    fn eval_upper_with_grad(&self, x: &[f64]) -> Result<TriangleGrads, ExprError> {
        let n = self.chart.dim();
        let mut out = Vec::with_capacity(self.upper.len());
        for i in 0..n {
            for j in (i + 1)..n {
                let (v, g) = self.upper[Self::index(n, i, j)].eval_with_grad(x)?;
                out.push(((i, j), v, g));
            }
        }
        Ok(out)
    }

    /// Negated bivector (used by opposite Jacobi structures).
    pub fn negate(&self) -> Self {
        Self {
            chart: Arc::clone(&self.chart),
            upper: self.upper.iter().map(|f| f.scale(-1.0)).collect(),
        }
    }

    /// `pi(df, dg)` as a new scalar field.
    pub fn pairing(&self, f: &ScalarField, g: &ScalarField) -> Result<ScalarField, ExprError> {
        check_same_chart(&self.chart, &f.chart)?;
        check_same_chart(&self.chart, &g.chart)?;
        let n = self.chart.dim();
        let mut acc = Expr::constant(0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let pij = self.component_expr(i, j);
                if pij.is_zero() {
                    continue;
                }
                let term = Expr::sub(
                    Expr::mul(f.expr.diff(i), g.expr.diff(j)),
                    Expr::mul(f.expr.diff(j), g.expr.diff(i)),
                );
                acc = Expr::add(acc, Expr::mul(pij, term));
            }
        }
        Ok(ScalarField::new(&self.chart, acc))
    }
}

/// Dense values of a totally antisymmetric rank-3 array; only independent
/// components `i < j < k` are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Antisym3 {
    n: usize,
    data: Vec<f64>, // indexed over i<j<k lexicographically
}

impl Antisym3 {
    fn zeros(n: usize) -> Self {
        let len = if n < 3 { 0 } else { n * (n - 1) * (n - 2) / 6 };
        Self {
            n,
            data: vec![0.0; len],
        }
    }

    fn slot(&self, i: usize, j: usize, k: usize) -> usize {
        // lexicographic rank of (i,j,k) with i<j<k
        let n = self.n;
        let mut rank = 0usize;
        for a in 0..i {
            rank += (n - a - 1) * (n - a - 2) / 2;
        }
        for b in (i + 1)..j {
            rank += n - b - 1;
        }
        rank + (k - j - 1)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Independent components as `((i,j,k), value)` with `i<j<k`.
    pub fn independent_components(&self) -> Vec<((usize, usize, usize), f64)> {
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                for k in (j + 1)..self.n {
                    out.push(((i, j, k), self.data[self.slot(i, j, k)]));
                }
            }
        }
        out
    }

    /// Value at an arbitrary index triple, with the permutation sign.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        if i == j || j == k || i == k {
            return 0.0;
        }
        let mut idx = [i, j, k];
        let mut sign = 1.0;
        // three-element bubble sort, tracking parity
        for a in 0..2 {
            for b in 0..(2 - a) {
                if idx[b] > idx[b + 1] {
                    idx.swap(b, b + 1);
                    sign = -sign;
                }
            }
        }
        sign * self.data[self.slot(idx[0], idx[1], idx[2])]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Schouten bracket of a bivector with itself at a point:
/// `[pi,pi]^{ijk} = 2 sum_l (pi^{il} d_l pi^{jk} + pi^{jl} d_l pi^{ki} + pi^{kl} d_l pi^{ij})`,
/// fully antisymmetric in `(i,j,k)`.
pub fn schouten_pi_pi(pi: &BivectorField, x: &[f64]) -> Result<Antisym3, ExprError> {
    let n = pi.chart().dim();
    let mut out = Antisym3::zeros(n);
    if n < 3 {
        return Ok(out);
    }
    // dense matrices of values and gradients of pi
    let mut val = vec![vec![0.0; n]; n];
    let mut grad = vec![vec![vec![0.0; n]; n]; n]; // grad[i][j][l] = d_l pi^{ij}
    for ((i, j), v, g) in pi.eval_upper_with_grad(x)? {
        val[i][j] = v;
        val[j][i] = -v;
        for l in 0..n {
            grad[i][j][l] = g[l];
            grad[j][i][l] = -g[l];
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += val[i][l] * grad[j][k][l]
                        + val[j][l] * grad[k][i][l]
                        + val[k][l] * grad[i][j][l];
                }
                let slot = out.slot(i, j, k);
                out.data[slot] = 2.0 * s;
            }
        }
    }
    Ok(out)
}

/// Lie derivative of a bivector along a vector field at a point:
/// `(L_R pi)^{ij} = R^l d_l pi^{ij} - pi^{lj} d_l R^i - pi^{il} d_l R^j`.
pub fn lie_derivative_bivector(
    r: &VectorField,
    pi: &BivectorField,
    x: &[f64],
) -> Result<Vec<Vec<f64>>, ExprError> {
    check_same_chart(r.chart(), pi.chart())?;
    let n = pi.chart().dim();
    let mut val = vec![vec![0.0; n]; n];
    let mut grad = vec![vec![vec![0.0; n]; n]; n];
    for ((i, j), v, g) in pi.eval_upper_with_grad(x)? {
        val[i][j] = v;
        val[j][i] = -v;
        for l in 0..n {
            grad[i][j][l] = g[l];
            grad[j][i][l] = -g[l];
        }
    }
    let mut rv = vec![0.0; n];
    let mut rg = vec![vec![0.0; n]; n]; // rg[i][l] = d_l R^i
    for i in 0..n {
        let (v, g) = r.components()[i].eval_with_grad(x)?;
        rv[i] = v;
        rg[i] = g;
    }
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for l in 0..n {
                s += rv[l] * grad[i][j][l] - val[l][j] * rg[i][l] - val[i][l] * rg[j][l];
            }
            out[i][j] = s;
            out[j][i] = -s;
        }
    }
    Ok(out)
}

/// Wedge of a vector with a bivector at a point:
/// `(R wedge pi)^{ijk} = R^i pi^{jk} + R^j pi^{ki} + R^k pi^{ij}`.
pub fn wedge_r_pi(r: &VectorField, pi: &BivectorField, x: &[f64]) -> Result<Antisym3, ExprError> {
    check_same_chart(r.chart(), pi.chart())?;
    let n = pi.chart().dim();
    let mut out = Antisym3::zeros(n);
    if n < 3 {
        return Ok(out);
    }
    let val = pi.eval_matrix(x)?;
    let rv = r.eval(x)?;
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let slot = out.slot(i, j, k);
                out.data[slot] = rv[i] * val[j][k] + rv[j] * val[k][i] + rv[k] * val[i][j];
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Name(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < chars.len() {
        let c = chars[pos];
        if c.is_whitespace() {
            pos += 1;
            continue;
        }
        let start = pos;
        let tok = match c {
            '+' => {
                pos += 1;
                Token::Plus
            }
            '-' => {
                pos += 1;
                Token::Minus
            }
            '*' => {
                pos += 1;
                Token::Star
            }
            '/' => {
                pos += 1;
                Token::Slash
            }
            '^' => {
                pos += 1;
                Token::Caret
            }
            '(' => {
                pos += 1;
                Token::LParen
            }
            ')' => {
                pos += 1;
                Token::RParen
            }
            c if c.is_ascii_digit() || c == '.' => {
                while pos < chars.len()
                    && (chars[pos].is_ascii_digit()
                        || chars[pos] == '.'
                        || chars[pos] == 'e'
                        || chars[pos] == 'E'
                        || ((chars[pos] == '+' || chars[pos] == '-')
                            && pos > start
                            && (chars[pos - 1] == 'e' || chars[pos - 1] == 'E')))
                {
                    pos += 1;
                }
                let text: String = chars[start..pos].iter().collect();
                let value = text.parse().map_err(|_| ExprError::ParseError {
                    position: start,
                    message: format!("malformed number `{text}`"),
                })?;
                Token::Number(value)
            }
            c if c.is_alphabetic() || c == '_' => {
                while pos < chars.len() && (chars[pos].is_alphanumeric() || chars[pos] == '_') {
                    pos += 1;
                }
                Token::Name(chars[start..pos].iter().collect())
            }
            other => {
                return Err(ExprError::ParseError {
                    position: pos,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((start, tok));
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    chart: &'a ChartDomain,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(p, _)| *p)
            .unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Token, what: &str) -> Result<(), ExprError> {
        let position = self.here();
        match self.bump() {
            Some(t) if t == tok => Ok(()),
            _ => Err(ExprError::ParseError {
                position,
                message: format!("expected {what}"),
            }),
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.bump();
                    acc = Expr::add(acc, self.term()?);
                }
                Some(Token::Minus) => {
                    self.bump();
                    acc = Expr::sub(acc, self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    // term := factor (('*'|'/') factor)*
    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.bump();
                    acc = Expr::mul(acc, self.factor()?);
                }
                Some(Token::Slash) => {
                    self.bump();
                    acc = Expr::div(acc, self.factor()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    // factor := base ('^' SIGNED_INT)?
    fn factor(&mut self) -> Result<Expr, ExprError> {
        let base = self.base()?;
        if let Some(Token::Caret) = self.peek() {
            self.bump();
            let position = self.here();
            let mut sign = 1i64;
            if let Some(Token::Minus) = self.peek() {
                self.bump();
                sign = -1;
            } else if let Some(Token::Plus) = self.peek() {
                self.bump();
            }
            match self.bump() {
                Some(Token::Number(v)) if v.fract() == 0.0 => {
                    let k = sign * v as i64;
                    if k < i32::MIN as i64 || k > i32::MAX as i64 {
                        return Err(ExprError::ParseError {
                            position,
                            message: "exponent out of range".into(),
                        });
                    }
                    Ok(Expr::powi(base, k as i32))
                }
                _ => Err(ExprError::ParseError {
                    position,
                    message: "expected an integer exponent after `^`".into(),
                }),
            }
        } else {
            Ok(base)
        }
    }

    // base := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')' | '-' factor
    fn base(&mut self) -> Result<Expr, ExprError> {
        let position = self.here();
        match self.bump() {
            Some(Token::Number(v)) => Ok(Expr::constant(v)),
            Some(Token::Name(name)) => {
                if let Some(Token::LParen) = self.peek() {
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(Token::RParen, "`)`")?;
                    match name.as_str() {
                        "sin" => Ok(Expr::sin(arg)),
                        "cos" => Ok(Expr::cos(arg)),
                        "exp" => Ok(Expr::exp(arg)),
                        "log" => Ok(Expr::log(arg)),
                        other => Err(ExprError::ParseError {
                            position,
                            message: format!("unknown function `{other}`"),
                        }),
                    }
                } else {
                    match self.chart.index_of(&name) {
                        Some(i) => Ok(Expr::var(i)),
                        None => Err(ExprError::UnknownVariable(name)),
                    }
                }
            }
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Token::Minus) => Ok(Expr::neg(self.factor()?)),
            _ => Err(ExprError::ParseError {
                position,
                message: "expected a number, name or parenthesized expression".into(),
            }),
        }
    }
}

/// Parses the field grammar over a chart's coordinates.
pub fn parse_expr(src: &str, chart: &Arc<ChartDomain>) -> Result<Expr, ExprError> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        chart,
        end: src.len(),
    };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(ExprError::ParseError {
            position: p.here(),
            message: "trailing input".into(),
        });
    }
    Ok(e)
}
