//! Lichnerowicz pairs: trivialized Jacobi structures.
//!
//! A Jacobi structure on a trivial line bundle is a bivector field `pi`
//! and a vector field `R` with bracket
//!
//! ```text
//!     {f,g} = pi(df,dg) + f R[g] - g R[f]
//! ```
//!
//! subject to the integrability conditions `[R,pi] = 0` and
//! `[pi,pi] + 2 R^pi = 0`. Integrability is certified numerically:
//! [`LichnerowiczPair::certify`] evaluates both tensors and a Jacobi
//! identity battery over a declared sample set and stamps the pair on
//! success. Operations that require integrability refuse uncertified
//! pairs.
//!
//! The canonical contact structure lives on the jet chart
//! `(q_1..q_n, p_1..p_n, z)` of a base chart. Sign conventions are pinned
//! by the bracket relations of derivations and sections,
//!
//! ```text
//!     {l_a, l_b} = l_[a,b]      {l_a, pi*s} = pi* a[s]     {pi*s, pi*r} = 0
//! ```
//!
//! with `l_{X(+)f} = sum_i p_i X^i(q) + z f(q)`: the conformant pair is
//! `pi = sum_i (-dq_i^dp_i + p_i dp_i^dz)`, `R = -d/dz`, with contact form
//! `theta = sum_i p_i dq_i - dz`. Under this convention the flow of
//! `H = (p^2+q^2)/2 + gamma z` is the damped oscillator
//! `q'' + gamma q' + q = 0`.

#![allow(clippy::needless_range_loop)]

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::bundle::{
    der_bracket, BaseProduct, BundleError, Derivation, Factor, RatioBranch, SmoothMap,
    TrivialLineBundle,
};
use crate::expr::{
    check_same_chart, lie_derivative_bivector, schouten_pi_pi, wedge_r_pi, BivectorField,
    ChartDomain, Expr, ExprError, ScalarField, VectorField,
};
use crate::sampling::{cube_points, SplitMix64};

/// Tolerance on `|c_j(x)|` for a point to count as lying on a constraint
/// surface or graph.
pub const SURFACE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JacobiError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("chart mismatch: {0} vs {1}")]
    ChartMismatch(String, String),
    #[error("contact chart must be odd-dimensional, got {0}")]
    EvenDimensional(usize),
    #[error("eta is degenerate or ill-conditioned at {point:?} (|det| = {det:e})")]
    DegenerateEta { point: Vec<f64>, det: f64 },
    #[error("operation requires a certified Lichnerowicz pair")]
    UncertifiedInput,
    #[error("sample {point:?} violates |{constraint}| <= {tolerance:e} (value {value:e})")]
    SampleOffSurface {
        point: Vec<f64>,
        constraint: String,
        value: f64,
        tolerance: f64,
    },
    #[error("coefficient vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("symbolic eta inversion supports chart dimension <= 5, got {0}")]
    DimensionTooLarge(usize),
}

fn mismatch(a: &Arc<ChartDomain>, b: &Arc<ChartDomain>) -> JacobiError {
    JacobiError::ChartMismatch(a.describe(), b.describe())
}

/// Flat key-value residual report produced by every check in this module.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub check: String,
    pub tolerance: f64,
    pub sample_count: usize,
    pub seed: Option<u64>,
    pub entries: Vec<(String, f64)>,
    pub passed: bool,
}

impl CheckReport {
    fn new(check: &str, tolerance: f64, sample_count: usize, seed: Option<u64>) -> Self {
        Self {
            check: check.to_string(),
            tolerance,
            sample_count,
            seed,
            entries: Vec::new(),
            passed: false,
        }
    }

    fn push(&mut self, name: &str, value: f64) {
        self.entries.push((name.to_string(), value));
    }

    fn finish(mut self) -> Self {
        self.passed = self.entries.iter().all(|(_, v)| *v < self.tolerance);
        self
    }

    pub fn residual(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn max_residual(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, (_, v)| m.max(*v))
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "check: {}", self.check)?;
        writeln!(f, "tolerance: {:e}", self.tolerance)?;
        writeln!(f, "samples: {}", self.sample_count)?;
        if let Some(seed) = self.seed {
            writeln!(f, "seed: {seed}")?;
        }
        for (name, value) in &self.entries {
            writeln!(f, "residual_{name}: {value:e}")?;
        }
        writeln!(f, "pass: {}", self.passed)
    }
}

/// A trivialized Jacobi structure: bivector, vector field and a
/// certification stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct LichnerowiczPair {
    chart: Arc<ChartDomain>,
    pi: BivectorField,
    reeb: VectorField,
    certified: bool,
}

impl LichnerowiczPair {
    /// An uncertified pair; run [`Self::certify`] to stamp it.
    pub fn new(pi: BivectorField, reeb: VectorField) -> Result<Self, JacobiError> {
        check_same_chart(pi.chart(), reeb.chart())?;
        Ok(Self {
            chart: Arc::clone(pi.chart()),
            pi,
            reeb,
            certified: false,
        })
    }

    pub fn chart(&self) -> &Arc<ChartDomain> {
        &self.chart
    }

    pub fn bivector(&self) -> &BivectorField {
        &self.pi
    }

    pub fn reeb_field(&self) -> &VectorField {
        &self.reeb
    }

    pub fn is_certified(&self) -> bool {
        self.certified
    }

    fn require_certified(&self) -> Result<(), JacobiError> {
        if self.certified {
            Ok(())
        } else {
            Err(JacobiError::UncertifiedInput)
        }
    }

    /// The opposite structure `(-pi, -R)`, generating the negated bracket.
    /// Integrability is preserved, so the stamp carries over.
    pub fn opposite(&self) -> Self {
        let pi = self.pi.negate();
        let reeb = VectorField::new(
            &self.chart,
            self.reeb
                .components()
                .iter()
                .map(|c| c.scale(-1.0))
                .collect(),
        )
        .expect("same chart");
        Self {
            chart: Arc::clone(&self.chart),
            pi,
            reeb,
            certified: self.certified,
        }
    }

    /// `{f,g} = pi(df,dg) + f R[g] - g R[f]` as a scalar field.
    pub fn bracket(&self, f: &ScalarField, g: &ScalarField) -> Result<ScalarField, JacobiError> {
        check_same_chart(&self.chart, f.chart())?;
        check_same_chart(&self.chart, g.chart())?;
        let pi_part = self.pi.pairing(f, g)?;
        let f_rg = f.mul(&self.reeb.apply(g)?)?;
        let g_rf = g.mul(&self.reeb.apply(f)?)?;
        Ok(pi_part.add(&f_rg.sub(&g_rf)?)?)
    }

    /// Bracket value at a point.
    pub fn bracket_at(
        &self,
        f: &ScalarField,
        g: &ScalarField,
        x: &[f64],
    ) -> Result<f64, JacobiError> {
        Ok(self.bracket(f, g)?.eval(x)?)
    }

    /// Hamiltonian vector field `X_f^i = sum_j pi^{ji} d_j f + f R^i`.
    pub fn hamiltonian_vf(&self, f: &ScalarField) -> Result<VectorField, JacobiError> {
        check_same_chart(&self.chart, f.chart())?;
        let n = self.chart.dim();
        let mut components = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = Expr::constant(0.0);
            for j in 0..n {
                let pji = self.pi.component_expr(j, i);
                if pji.is_zero() {
                    continue;
                }
                acc = Expr::add(acc, Expr::mul(pji, f.expr().diff(j)));
            }
            acc = Expr::add(
                acc,
                Expr::mul(f.expr().clone(), self.reeb.component(i).expr().clone()),
            );
            components.push(ScalarField::new(&self.chart, acc));
        }
        Ok(VectorField::new(&self.chart, components)?)
    }

    /// Hamiltonian derivation `Delta_f = X_f (+) -R[f]`, which satisfies
    /// `Delta_f(g) = {f,g}`.
    pub fn hamiltonian_derivation(&self, f: &ScalarField) -> Result<Derivation, JacobiError> {
        let xf = self.hamiltonian_vf(f)?;
        let scalar = self.reeb.apply(f)?.scale(-1.0);
        Ok(Derivation::new(xf, scalar)?)
    }

    /// Evaluates the integrability tensors and a fixed Jacobi identity
    /// battery over the samples; returns the stamped pair (on success)
    /// and the report.
    pub fn certify(
        mut self,
        samples: &[Vec<f64>],
        tol: f64,
    ) -> Result<(Self, CheckReport), JacobiError> {
        let report = check_jacobi_pair(&self, samples, tol)?;
        self.certified = report.passed;
        Ok((self, report))
    }
}

/// Integrability report: max residuals of `[R,pi]`, `[pi,pi] + 2 R^pi`
/// and of a fixed battery of Jacobi identity triples over the samples.
/// The pair certifies when the two tensor residuals clear the tolerance.
pub fn check_jacobi_pair(
    pair: &LichnerowiczPair,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<CheckReport, JacobiError> {
    let mut max_lie = 0.0f64;
    let mut max_sw = 0.0f64;
    for x in samples {
        let lie = lie_derivative_bivector(&pair.reeb, &pair.pi, x)?;
        for row in &lie {
            for v in row {
                max_lie = max_lie.max(v.abs());
            }
        }
        let schouten = schouten_pi_pi(&pair.pi, x)?;
        let wedge = wedge_r_pi(&pair.reeb, &pair.pi, x)?;
        for ((i, j, k), s) in schouten.independent_components() {
            max_sw = max_sw.max((s + 2.0 * wedge.get(i, j, k)).abs());
        }
    }

    // fixed polynomial-trig battery for the Jacobi identity
    let battery = test_triples(&pair.chart, BATTERY_SEED, 10);
    let mut max_jacobi = 0.0f64;
    for (f, g, h) in &battery {
        let fgh = pair.bracket(f, &pair.bracket(g, h)?)?;
        let ghf = pair.bracket(g, &pair.bracket(h, f)?)?;
        let hfg = pair.bracket(h, &pair.bracket(f, g)?)?;
        for x in samples {
            let r = fgh.eval(x)? + ghf.eval(x)? + hfg.eval(x)?;
            max_jacobi = max_jacobi.max(r.abs());
        }
    }

    let mut report = CheckReport::new("jacobi_pair", tol, samples.len(), Some(BATTERY_SEED));
    report.push("lie_derivative", max_lie);
    report.push("schouten_wedge", max_sw);
    // reported alongside the tensors; certification gates on the tensors
    let passed = max_lie < tol && max_sw < tol;
    report.push("jacobi_identity", max_jacobi);
    report.passed = passed;
    Ok(report)
}

const BATTERY_SEED: u64 = 0x0ddba11;

/// Deterministic battery of low-degree polynomial-trig fields on a chart.
pub fn test_fields(chart: &Arc<ChartDomain>, seed: u64, count: usize) -> Vec<ScalarField> {
    let mut rng = SplitMix64::new(seed);
    let n = chart.dim();
    (0..count)
        .map(|_| {
            let mut acc = Expr::constant(rng.next_in(-1.0, 1.0));
            for i in 0..n {
                let c1 = rng.next_in(-1.0, 1.0);
                let c2 = rng.next_in(-0.5, 0.5);
                acc = Expr::add(acc, Expr::mul(Expr::constant(c1), Expr::var(i)));
                acc = Expr::add(
                    acc,
                    Expr::mul(Expr::constant(c2), Expr::powi(Expr::var(i), 2)),
                );
            }
            let a = rng.next_u64() as usize % n;
            let b = rng.next_u64() as usize % n;
            acc = Expr::add(
                acc,
                Expr::mul(
                    Expr::constant(rng.next_in(-1.0, 1.0)),
                    Expr::sin(Expr::var(a)),
                ),
            );
            acc = Expr::add(
                acc,
                Expr::mul(
                    Expr::constant(rng.next_in(-1.0, 1.0)),
                    Expr::cos(Expr::var(b)),
                ),
            );
            ScalarField::new(chart, acc)
        })
        .collect()
}

fn test_triples(
    chart: &Arc<ChartDomain>,
    seed: u64,
    count: usize,
) -> Vec<(ScalarField, ScalarField, ScalarField)> {
    let fields = test_fields(chart, seed, 3 * count);
    fields
        .chunks(3)
        .map(|c| (c[0].clone(), c[1].clone(), c[2].clone()))
        .collect()
}

// ---------------------------------------------------------------------------
// Contact forms
// ---------------------------------------------------------------------------

/// An exact contact form on an odd-dimensional chart: covector components
/// `theta_i`, with `omega = -d theta` and `eta = theta (x) theta + omega`
/// certified nondegenerate at the construction samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactForm {
    chart: Arc<ChartDomain>,
    theta: Vec<ScalarField>,
}

impl ContactForm {
    pub fn new(
        chart: &Arc<ChartDomain>,
        theta: Vec<ScalarField>,
        samples: &[Vec<f64>],
    ) -> Result<Self, JacobiError> {
        if chart.dim().is_multiple_of(2) {
            return Err(JacobiError::EvenDimensional(chart.dim()));
        }
        for t in &theta {
            check_same_chart(t.chart(), chart)?;
        }
        if theta.len() != chart.dim() {
            return Err(mismatch(chart, chart));
        }
        let form = Self {
            chart: Arc::clone(chart),
            theta,
        };
        for x in samples {
            let eta = form.eta_matrix(x)?;
            let det = det_dense(&eta);
            if det.abs() <= 1e-10 {
                return Err(JacobiError::DegenerateEta {
                    point: x.clone(),
                    det: det.abs(),
                });
            }
        }
        Ok(form)
    }

    pub fn chart(&self) -> &Arc<ChartDomain> {
        &self.chart
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.theta
    }

    /// `theta(v)` at a point.
    pub fn pair_with(&self, x: &[f64], v: &[f64]) -> Result<f64, JacobiError> {
        let mut s = 0.0;
        for (t, vi) in self.theta.iter().zip(v) {
            s += t.eval(x)? * vi;
        }
        Ok(s)
    }

    /// `d theta (u, v)` at a point.
    pub fn d_theta(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<f64, JacobiError> {
        let n = self.chart.dim();
        let mut grads = Vec::with_capacity(n);
        for t in &self.theta {
            grads.push(t.eval_with_grad(x)?.1);
        }
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                // (d theta)_{ij} = d_i theta_j - d_j theta_i
                s += (grads[j][i] - grads[i][j]) * u[i] * v[j];
            }
        }
        Ok(s)
    }

    /// The matrix of `eta = theta (x) theta + omega`, `omega = -d theta`:
    /// `eta_{ij} = theta_i theta_j + d_j theta_i - d_i theta_j`.
    pub fn eta_matrix(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, JacobiError> {
        let n = self.chart.dim();
        let mut tv = vec![0.0; n];
        let mut tg = vec![vec![0.0; n]; n];
        for (i, t) in self.theta.iter().enumerate() {
            let (v, g) = t.eval_with_grad(x)?;
            tv[i] = v;
            tg[i] = g;
        }
        let mut eta = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                eta[i][j] = tv[i] * tv[j] + tg[i][j] - tg[j][i];
            }
        }
        Ok(eta)
    }
}

/// Symbolic matrix of `eta` over the chart.
fn eta_exprs(theta: &[ScalarField]) -> Vec<Vec<Expr>> {
    let n = theta.len();
    let mut eta = vec![vec![Expr::constant(0.0); n]; n];
    for i in 0..n {
        for j in 0..n {
            // theta_i theta_j + omega_{ij},  omega = -d theta
            let tt = Expr::mul(theta[i].expr().clone(), theta[j].expr().clone());
            let w = Expr::sub(theta[i].expr().diff(j), theta[j].expr().diff(i));
            eta[i][j] = Expr::add(tt, w);
        }
    }
    eta
}

fn det_dense(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        det *= a[col][col];
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
        }
    }
    det
}

/// Symbolic determinant by cofactor expansion (small matrices only).
fn det_expr(m: &[Vec<Expr>]) -> Expr {
    let n = m.len();
    if n == 1 {
        return m[0][0].clone();
    }
    let mut acc = Expr::constant(0.0);
    for j in 0..n {
        if m[0][j].is_zero() {
            continue;
        }
        let minor: Vec<Vec<Expr>> = (1..n)
            .map(|r| {
                (0..n)
                    .filter(|&c| c != j)
                    .map(|c| m[r][c].clone())
                    .collect()
            })
            .collect();
        let term = Expr::mul(m[0][j].clone(), det_expr(&minor));
        acc = if j % 2 == 0 {
            Expr::add(acc, term)
        } else {
            Expr::sub(acc, term)
        };
    }
    acc
}

/// Symbolic inverse via the adjugate, `inv = adj(m) / det(m)`.
fn inverse_exprs(m: &[Vec<Expr>]) -> (Vec<Vec<Expr>>, Expr) {
    let n = m.len();
    let det = det_expr(m);
    let mut inv = vec![vec![Expr::constant(0.0); n]; n];
    for i in 0..n {
        for j in 0..n {
            let minor: Vec<Vec<Expr>> = (0..n)
                .filter(|&r| r != j)
                .map(|r| {
                    (0..n)
                        .filter(|&c| c != i)
                        .map(|c| m[r][c].clone())
                        .collect()
                })
                .collect();
            let cof = det_expr(&minor);
            let signed = if (i + j) % 2 == 0 {
                cof
            } else {
                Expr::neg(cof)
            };
            inv[i][j] = Expr::div(signed, det.clone());
        }
    }
    (inv, det)
}

/// Converts an exact contact form into its Lichnerowicz pair.
///
/// `eta = theta (x) theta + omega` with `omega = -d theta` is inverted
/// per evaluation point (via the precomposed adjugate/determinant
/// expressions, a Cramer solve at each point) to recover the unique pair
/// with `eta^T R = theta` and `pi = -eta^{-1} omega eta^{-T}`, the
/// overall sign pinned by the bracket relations of the canonical contact
/// structure. The result is certified over the given samples.
pub fn contact_to_jacobi(
    form: &ContactForm,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<(LichnerowiczPair, CheckReport), JacobiError> {
    let chart = form.chart();
    let n = chart.dim();
    if n > 5 {
        return Err(JacobiError::DimensionTooLarge(n));
    }
    // condition guard at the requested samples
    for x in samples {
        let eta = form.eta_matrix(x)?;
        let det = det_dense(&eta);
        let scale = eta
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .powi(n as i32);
        if det.abs() <= 1e-10 || scale / det.abs() > 1e12 {
            return Err(JacobiError::DegenerateEta {
                point: x.clone(),
                det: det.abs(),
            });
        }
    }
    let eta = eta_exprs(&form.theta);
    let (inv, _det) = inverse_exprs(&eta);
    // omega_{kl} = d_l theta_k - d_k theta_l
    let omega: Vec<Vec<Expr>> = (0..n)
        .map(|k| {
            (0..n)
                .map(|l| Expr::sub(form.theta[k].expr().diff(l), form.theta[l].expr().diff(k)))
                .collect()
        })
        .collect();
    // R solves eta^T R = theta: R = inv^T theta
    let reeb = VectorField::new(
        chart,
        (0..n)
            .map(|i| {
                let mut acc = Expr::constant(0.0);
                for j in 0..n {
                    acc = Expr::add(
                        acc,
                        Expr::mul(inv[j][i].clone(), form.theta[j].expr().clone()),
                    );
                }
                ScalarField::new(chart, acc)
            })
            .collect(),
    )?;
    // pi = -inv * omega * inv^T
    let mut entries = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = Expr::constant(0.0);
            for k in 0..n {
                for l in 0..n {
                    if omega[k][l].is_zero() {
                        continue;
                    }
                    acc = Expr::add(
                        acc,
                        Expr::mul(
                            Expr::mul(inv[i][k].clone(), omega[k][l].clone()),
                            inv[j][l].clone(),
                        ),
                    );
                }
            }
            entries.push((i, j, ScalarField::new(chart, Expr::neg(acc))));
        }
    }
    let pi = BivectorField::from_components(chart, entries)?;
    let pair = LichnerowiczPair::new(pi, reeb)?;
    pair.certify(samples, tol)
}

/// Recovers the contact covector of a nondegenerate pair at a point: the
/// kernel direction of the bivector matrix normalized against the Reeb
/// field, `theta(R) = 1`. Defined where the bivector has corank one.
pub fn contact_form_of_pair(pair: &LichnerowiczPair, x: &[f64]) -> Result<Vec<f64>, JacobiError> {
    let n = pair.chart.dim();
    let m = pair.pi.eval_matrix(x)?;
    // kernel vector of m by elimination with column pivots
    let mut a = m.clone();
    let mut rank = 0usize;
    let mut pivot_cols = Vec::new();
    for col in 0..n {
        let piv = (rank..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()));
        match piv {
            Some(p) if a[p][col].abs() > 1e-12 => {
                a.swap(rank, p);
                let pval = a[rank][col];
                let prow = a[rank].clone();
                for (r, row) in a.iter_mut().enumerate() {
                    if r == rank {
                        continue;
                    }
                    let f = row[col] / pval;
                    for c in 0..n {
                        row[c] -= f * prow[c];
                    }
                }
                pivot_cols.push(col);
                rank += 1;
            }
            _ => continue,
        }
    }
    if rank != n - 1 {
        return Err(JacobiError::DegenerateEta {
            point: x.to_vec(),
            det: 0.0,
        });
    }
    let free_col = (0..n).find(|c| !pivot_cols.contains(c)).unwrap();
    let mut theta = vec![0.0; n];
    theta[free_col] = 1.0;
    for (ri, &col) in pivot_cols.iter().enumerate() {
        theta[col] = -a[ri][free_col] / a[ri][col];
    }
    // normalize theta(R) = 1
    let rv = pair.reeb.eval(x)?;
    let tr: f64 = theta.iter().zip(&rv).map(|(t, r)| t * r).sum();
    if tr.abs() < 1e-12 {
        return Err(JacobiError::DegenerateEta {
            point: x.to_vec(),
            det: tr.abs(),
        });
    }
    for t in &mut theta {
        *t /= tr;
    }
    Ok(theta)
}

// ---------------------------------------------------------------------------
// Canonical contact structure on jet charts
// ---------------------------------------------------------------------------

/// The jet chart `(q_1..q_n, p_1..p_n, z)` of a base chart, with the
/// embeddings used by fibre-wise linear and fibre-wise constant sections.
#[derive(Debug, Clone, PartialEq)]
pub struct JetChart {
    base: Arc<ChartDomain>,
    chart: Arc<ChartDomain>,
}

impl JetChart {
    /// Momentum names: a leading `q` is replaced by `p` (so `q -> p`,
    /// `q1 -> p1`), otherwise `p_` is prefixed; the value coordinate is
    /// named `z` (suffixed with `_` on clashes).
    pub fn for_base(base: &Arc<ChartDomain>) -> Result<Self, JacobiError> {
        let n = base.dim();
        let mut names: Vec<String> = base.coord_names().to_vec();
        for raw in base.coord_names() {
            let candidate = if let Some(rest) = raw.strip_prefix('q') {
                format!("p{rest}")
            } else {
                format!("p_{raw}")
            };
            let mut name = candidate;
            while names.contains(&name) {
                name.push('_');
            }
            names.push(name);
        }
        let mut zname = String::from("z");
        while names.contains(&zname) {
            zname.push('_');
        }
        names.push(zname);
        let mut bounds = vec![None; 2 * n + 1];
        bounds[..n].clone_from_slice(base.bounds());
        let chart = ChartDomain::with_bounds(names, bounds)?;
        Ok(Self {
            base: Arc::clone(base),
            chart,
        })
    }

    pub fn base(&self) -> &Arc<ChartDomain> {
        &self.base
    }

    pub fn chart(&self) -> &Arc<ChartDomain> {
        &self.chart
    }

    pub fn base_dim(&self) -> usize {
        self.base.dim()
    }

    pub fn z_index(&self) -> usize {
        2 * self.base.dim()
    }

    fn base_embedding(&self) -> Vec<Expr> {
        (0..self.base.dim()).map(Expr::var).collect()
    }

    /// Fibre-wise constant extension of a base section (`pi^* s`).
    pub fn lift_section(&self, s: &ScalarField) -> Result<ScalarField, JacobiError> {
        check_same_chart(s.chart(), &self.base)?;
        Ok(s.compose(&self.base_embedding(), &self.chart)?)
    }

    /// Fibre-wise linear section of a derivation,
    /// `l_{X (+) f}(q, p, z) = sum_i p_i X^i(q) + z f(q)`.
    pub fn fibrewise_linear(&self, d: &Derivation) -> Result<FibrewiseLinearSection, JacobiError> {
        check_same_chart(d.chart(), &self.base)?;
        FibrewiseLinearSection::new(self.clone(), d.clone())
    }

    /// The canonical contact form `theta = sum_i p_i dq_i - dz`, oriented
    /// so the bracket relations of the canonical pair hold.
    pub fn canonical_contact_form(&self, samples: &[Vec<f64>]) -> Result<ContactForm, JacobiError> {
        let n = self.base.dim();
        let mut theta = Vec::with_capacity(2 * n + 1);
        for i in 0..n {
            theta.push(ScalarField::coordinate(&self.chart, n + i));
        }
        for _ in 0..n {
            theta.push(ScalarField::constant(&self.chart, 0.0));
        }
        theta.push(ScalarField::constant(&self.chart, -1.0));
        ContactForm::new(&self.chart, theta, samples)
    }

    /// The canonical Lichnerowicz pair on this jet chart in closed form:
    /// `pi = sum_i (-dq_i^dp_i + p_i dp_i^dz)`, `R = -d/dz`.
    pub fn canonical_pair_raw(&self) -> Result<LichnerowiczPair, JacobiError> {
        let n = self.base.dim();
        let z = self.z_index();
        let mut entries = Vec::with_capacity(2 * n);
        for i in 0..n {
            entries.push((i, n + i, ScalarField::constant(&self.chart, -1.0)));
            entries.push((n + i, z, ScalarField::coordinate(&self.chart, n + i)));
        }
        let pi = BivectorField::from_components(&self.chart, entries)?;
        let mut reeb_components: Vec<ScalarField> = (0..2 * n + 1)
            .map(|_| ScalarField::constant(&self.chart, 0.0))
            .collect();
        reeb_components[z] = ScalarField::constant(&self.chart, -1.0);
        let reeb = VectorField::new(&self.chart, reeb_components)?;
        LichnerowiczPair::new(pi, reeb)
    }
}

/// Builds the jet chart of a base chart together with its certified
/// canonical contact pair. Certification samples are quasi-random points
/// in `[-2, 2]^{2n+1}` with the given seed.
pub fn canonical_contact(
    base: &Arc<ChartDomain>,
    seed: u64,
    sample_count: usize,
    tol: f64,
) -> Result<(JetChart, LichnerowiczPair, CheckReport), JacobiError> {
    let jet = JetChart::for_base(base)?;
    let samples = cube_points(seed, sample_count, jet.chart().dim(), 2.0);
    let (pair, report) = jet.canonical_pair_raw()?.certify(&samples, tol)?;
    Ok((jet, pair, report))
}

/// A fibre-wise linear section of the contact line bundle over a jet
/// chart, generated by a derivation of the base bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct FibrewiseLinearSection {
    jet: JetChart,
    generator: Derivation,
    field: ScalarField,
}

impl FibrewiseLinearSection {
    pub fn new(jet: JetChart, generator: Derivation) -> Result<Self, JacobiError> {
        check_same_chart(generator.chart(), jet.base())?;
        let n = jet.base_dim();
        let embed = jet.base_embedding();
        let mut acc = Expr::constant(0.0);
        for i in 0..n {
            let xi = generator.symbol().component(i).expr().substitute(&embed);
            acc = Expr::add(acc, Expr::mul(Expr::var(n + i), xi));
        }
        let f = generator.scalar().expr().substitute(&embed);
        acc = Expr::add(acc, Expr::mul(Expr::var(jet.z_index()), f));
        let field = ScalarField::new(jet.chart(), acc);
        Ok(Self {
            jet,
            generator,
            field,
        })
    }

    pub fn jet_chart(&self) -> &JetChart {
        &self.jet
    }

    pub fn generator(&self) -> &Derivation {
        &self.generator
    }

    /// The section as a plain scalar field on the jet chart.
    pub fn as_field(&self) -> &ScalarField {
        &self.field
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, JacobiError> {
        Ok(self.field.eval(x)?)
    }

    /// Zero-locus membership of a jet point.
    pub fn zero_locus_contains(&self, x: &[f64], tol: f64) -> Result<bool, JacobiError> {
        Ok(self.eval(x)?.abs() <= tol)
    }
}

/// Residuals of the three bracket relations of the canonical contact
/// structure for given derivations and base sections:
/// `{l_a, l_b} - l_[a,b]`, `{l_a, pi*s} - pi* a[s]`, `{pi*s, pi*r}`.
#[allow(clippy::too_many_arguments)]
pub fn check_bracket_relations(
    pair: &LichnerowiczPair,
    jet: &JetChart,
    a: &Derivation,
    b: &Derivation,
    s: &ScalarField,
    r: &ScalarField,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<CheckReport, JacobiError> {
    check_same_chart(&pair.chart, jet.chart())?;
    let la = jet.fibrewise_linear(a)?;
    let lb = jet.fibrewise_linear(b)?;
    let lab = jet.fibrewise_linear(&der_bracket(a, b)?)?;
    let ps = jet.lift_section(s)?;
    let pr = jet.lift_section(r)?;
    let pas = jet.lift_section(&a.apply(s)?)?;

    let rel1 = pair
        .bracket(la.as_field(), lb.as_field())?
        .sub(lab.as_field())?;
    let rel2 = pair.bracket(la.as_field(), &ps)?.sub(&pas)?;
    let rel3 = pair.bracket(&ps, &pr)?;

    let mut m1 = 0.0f64;
    let mut m2 = 0.0f64;
    let mut m3 = 0.0f64;
    for x in samples {
        m1 = m1.max(rel1.eval(x)?.abs());
        m2 = m2.max(rel2.eval(x)?.abs());
        m3 = m3.max(rel3.eval(x)?.abs());
    }
    let mut report = CheckReport::new("bracket_relations", tol, samples.len(), None);
    report.push("derivation_bracket", m1);
    report.push("derivation_on_section", m2);
    report.push("section_section", m3);
    Ok(report.finish())
}

// ---------------------------------------------------------------------------
// Coisotropy
// ---------------------------------------------------------------------------

/// Coisotropy test for the zero locus of a constraint family: for each
/// vanishing section `c_j * u` the Hamiltonian field must be tangent to
/// the surface (`|d c_m (X_{c_j u})|` small at on-surface samples), and
/// brackets of vanishing sections must vanish on the surface.
pub fn coisotropic_check(
    pair: &LichnerowiczPair,
    constraints: &[ScalarField],
    surface_samples: &[Vec<f64>],
    test_sections: &[ScalarField],
    tol: f64,
) -> Result<CheckReport, JacobiError> {
    pair.require_certified()?;
    for c in constraints {
        check_same_chart(c.chart(), &pair.chart)?;
    }
    for x in surface_samples {
        for (j, c) in constraints.iter().enumerate() {
            let v = c.eval(x)?;
            if v.abs() > SURFACE_TOLERANCE {
                return Err(JacobiError::SampleOffSurface {
                    point: x.clone(),
                    constraint: format!("c{j}"),
                    value: v.abs(),
                    tolerance: SURFACE_TOLERANCE,
                });
            }
        }
    }
    let mut vanishing = Vec::with_capacity(constraints.len() * test_sections.len());
    for c in constraints {
        for u in test_sections {
            vanishing.push(c.mul(u)?);
        }
    }
    let mut tangency = 0.0f64;
    let mut closure = 0.0f64;
    for v in &vanishing {
        let xv = pair.hamiltonian_vf(v)?;
        for c in constraints {
            let dc_x = xv.apply(c)?;
            for x in surface_samples {
                tangency = tangency.max(dc_x.eval(x)?.abs());
            }
        }
        for w in &vanishing {
            let br = pair.bracket(v, w)?;
            for x in surface_samples {
                closure = closure.max(br.eval(x)?.abs());
            }
        }
    }
    let mut report = CheckReport::new("coisotropy", tol, surface_samples.len(), None);
    report.push("tangency", tangency);
    report.push("subalgebra", closure);
    Ok(report.finish())
}

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

/// The product Jacobi structure on the base product of two trivialized
/// Jacobi manifolds. Writing product coordinates `(y1, y2, w)`, the pair
/// determined by the defining relations
/// `{P1*s, P1*s'} = P1*{s,s'}_1`, `{P2*s, P2*s'} = P2*{s,s'}_2`,
/// `{P1*s, P2*s'} = 0` is
///
/// ```text
///   pi_12 = pi_1(y1) + w pi_2(y2) - w R_1 ^ d/dw + w^2 R_2 ^ d/dw
///   R_12  = R_1(y1)
/// ```
///
/// with `P1*s = s(y1)` and `P2*s = s(y2)/w`.
pub fn product_jacobi(
    j1: &LichnerowiczPair,
    j2: &LichnerowiczPair,
) -> Result<(BaseProduct, LichnerowiczPair), JacobiError> {
    product_jacobi_on_branch(j1, j2, RatioBranch::Positive)
}

/// [`product_jacobi`] on a chosen connected component of the fibre-ratio
/// axis. The component formulas are branch-independent; only the chart
/// bounds change.
pub fn product_jacobi_on_branch(
    j1: &LichnerowiczPair,
    j2: &LichnerowiczPair,
    branch: RatioBranch,
) -> Result<(BaseProduct, LichnerowiczPair), JacobiError> {
    j1.require_certified()?;
    j2.require_certified()?;
    let l1 = TrivialLineBundle::new(&j1.chart);
    let l2 = TrivialLineBundle::new(&j2.chart);
    let prod = BaseProduct::with_branch(&l1, &l2, branch)?;
    let chart = prod.chart();
    let (n1, n2) = prod.dims();
    let w = prod.fibre_index();

    let mut entries: Vec<(usize, usize, ScalarField)> = Vec::new();
    for i in 0..n1 {
        for j in (i + 1)..n1 {
            let e = j1.pi.component_expr(i, j);
            if e.is_zero() {
                continue;
            }
            let f = prod.lift_function_1(&ScalarField::new(&j1.chart, e))?;
            entries.push((i, j, f));
        }
    }
    for a in 0..n2 {
        for c in (a + 1)..n2 {
            let e = j2.pi.component_expr(a, c);
            if e.is_zero() {
                continue;
            }
            let f = prod.lift_function_2(&ScalarField::new(&j2.chart, e))?;
            let scaled = ScalarField::new(chart, Expr::mul(Expr::var(w), f.expr().clone()));
            entries.push((n1 + a, n1 + c, scaled));
        }
    }
    for i in 0..n1 {
        let r1 = j1.reeb.component(i);
        if r1.expr().is_zero() {
            continue;
        }
        let f = prod.lift_function_1(r1)?;
        // pi^{i, w} = -w R_1^i
        let e = Expr::neg(Expr::mul(Expr::var(w), f.expr().clone()));
        entries.push((i, w, ScalarField::new(chart, e)));
    }
    for a in 0..n2 {
        let r2 = j2.reeb.component(a);
        if r2.expr().is_zero() {
            continue;
        }
        let f = prod.lift_function_2(r2)?;
        // pi^{n1+a, w} = w^2 R_2^a
        let e = Expr::mul(Expr::powi(Expr::var(w), 2), f.expr().clone());
        entries.push((n1 + a, w, ScalarField::new(chart, e)));
    }
    let pi = BivectorField::from_components(chart, entries)?;
    let mut reeb_components: Vec<ScalarField> = (0..chart.dim())
        .map(|_| ScalarField::constant(chart, 0.0))
        .collect();
    for (i, item) in reeb_components.iter_mut().enumerate().take(n1) {
        *item = prod.lift_function_1(j1.reeb.component(i))?;
    }
    let reeb = VectorField::new(chart, reeb_components)?;
    let pair = LichnerowiczPair::new(pi, reeb)?;
    Ok((prod, pair))
}

/// Residuals of the three defining relations of the product structure on
/// given section pairs, evaluated at product-chart samples.
#[allow(clippy::too_many_arguments)]
pub fn product_relations_check(
    prod: &BaseProduct,
    j1: &LichnerowiczPair,
    j2: &LichnerowiczPair,
    j12: &LichnerowiczPair,
    sections_1: &[(ScalarField, ScalarField)],
    sections_2: &[(ScalarField, ScalarField)],
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<CheckReport, JacobiError> {
    let mut r1 = 0.0f64;
    let mut r2 = 0.0f64;
    let mut r3 = 0.0f64;
    for (s, t) in sections_1 {
        let lhs = j12.bracket(&prod.pullback_p1(s)?, &prod.pullback_p1(t)?)?;
        let rhs = prod.pullback_p1(&j1.bracket(s, t)?)?;
        let diff = lhs.sub(&rhs)?;
        for x in samples {
            r1 = r1.max(diff.eval(x)?.abs());
        }
    }
    for (s, t) in sections_2 {
        let lhs = j12.bracket(&prod.pullback_p2(s)?, &prod.pullback_p2(t)?)?;
        let rhs = prod.pullback_p2(&j2.bracket(s, t)?)?;
        let diff = lhs.sub(&rhs)?;
        for x in samples {
            r2 = r2.max(diff.eval(x)?.abs());
        }
    }
    for (s, _) in sections_1 {
        for (t, _) in sections_2 {
            let cross = j12.bracket(&prod.pullback_p1(s)?, &prod.pullback_p2(t)?)?;
            for x in samples {
                r3 = r3.max(cross.eval(x)?.abs());
            }
        }
    }
    let mut report = CheckReport::new("product_relations", tol, samples.len(), None);
    report.push("factor_1", r1);
    report.push("factor_2", r2);
    report.push("cross", r3);
    Ok(report.finish())
}

/// Jacobi-map residual of a factor between Jacobi charts: max over
/// section pairs and samples of
/// `|F*({s,s'}_target) - {F*s, F*s'}_source|`.
pub fn jacobi_map_check(
    factor: &Factor,
    j_source: &LichnerowiczPair,
    j_target: &LichnerowiczPair,
    section_pairs: &[(ScalarField, ScalarField)],
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<CheckReport, JacobiError> {
    j_source.require_certified()?;
    j_target.require_certified()?;
    check_same_chart(factor.source_chart(), &j_source.chart)?;
    check_same_chart(factor.target_chart(), &j_target.chart)?;
    let mut max_res = 0.0f64;
    for (s, t) in section_pairs {
        let pulled_bracket = factor.pullback_section(&j_target.bracket(s, t)?)?;
        let bracket_pulled =
            j_source.bracket(&factor.pullback_section(s)?, &factor.pullback_section(t)?)?;
        let diff = pulled_bracket.sub(&bracket_pulled)?;
        for x in samples {
            max_res = max_res.max(diff.eval(x)?.abs());
        }
    }
    let mut report = CheckReport::new("jacobi_map", tol, samples.len(), None);
    report.push("morphism", max_res);
    Ok(report.finish())
}

// ---------------------------------------------------------------------------
// Jet lifts
// ---------------------------------------------------------------------------

/// Jet lift of a diffeomorphic factor `F = (b, beta): L_M -> L_N` as a
/// factor between jet charts. The lift runs contravariantly from the jet
/// chart of the target to the jet chart of the source:
///
/// ```text
///   q = b^{-1}(Q)
///   p_i = (1/beta) [ sum_A P_A d_i b^A - Z d_i beta / beta ]   (at q)
///   z = Z / beta(q)
/// ```
///
/// with fibre scale `1/beta(b^{-1}(Q))`, so that pull-backs satisfy
/// `J1B* l_a = l_{B_* a}` and `J1B* pi*u = pi*(B^{-1})* u`.
pub fn jet_lift_diffeo(
    factor: &Factor,
    source_jet: &JetChart,
    target_jet: &JetChart,
) -> Result<Factor, JacobiError> {
    check_same_chart(source_jet.base(), factor.source_chart())?;
    check_same_chart(target_jet.base(), factor.target_chart())?;
    let map = jet_lift_map(factor, target_jet, source_jet)?;
    let inv = factor.inverse_map()?;
    let n = factor.source_chart().dim();
    let from = target_jet.chart();
    let q_exprs: Vec<Expr> = inv
        .components()
        .iter()
        .map(|c| c.substitute(&embed_base(n)))
        .collect();
    let beta_at_q = factor.beta().expr().substitute(&q_exprs);
    let lift_beta = ScalarField::new(from, Expr::div(Expr::constant(1.0), beta_at_q));

    // the inverse of the lift is the lift of the inverse factor
    let inverse = inverse_factor(factor)
        .ok()
        .map(|inv_factor| jet_lift_map(&inv_factor, source_jet, target_jet))
        .transpose()?;
    Ok(Factor::new(map, lift_beta, inverse)?)
}

fn embed_base(n: usize) -> Vec<Expr> {
    (0..n).map(Expr::var).collect()
}

/// The base map of the jet lift of `factor`, from the jet chart of its
/// target to the jet chart of its source.
fn jet_lift_map(
    factor: &Factor,
    from_jet: &JetChart,
    to_jet: &JetChart,
) -> Result<SmoothMap, JacobiError> {
    let inv = factor.inverse_map()?;
    let n = factor.source_chart().dim();
    let from = from_jet.chart();
    let q_exprs: Vec<Expr> = inv
        .components()
        .iter()
        .map(|c| c.substitute(&embed_base(n)))
        .collect();
    let beta_at_q = factor.beta().expr().substitute(&q_exprs);
    let mut components: Vec<Expr> = Vec::with_capacity(to_jet.chart().dim());
    components.extend(q_exprs.iter().cloned());
    for i in 0..n {
        // sum_A P_A d_i b^A at q
        let mut acc = Expr::constant(0.0);
        for a in 0..n {
            let dba = factor.map().components()[a].diff(i).substitute(&q_exprs);
            acc = Expr::add(acc, Expr::mul(Expr::var(n + a), dba));
        }
        let dbeta = factor.beta().expr().diff(i).substitute(&q_exprs);
        let corr = Expr::div(
            Expr::mul(Expr::var(from_jet.z_index()), dbeta),
            beta_at_q.clone(),
        );
        components.push(Expr::div(Expr::sub(acc, corr), beta_at_q.clone()));
    }
    components.push(Expr::div(Expr::var(from_jet.z_index()), beta_at_q));
    Ok(SmoothMap::new(from, to_jet.chart(), components)?)
}

/// The inverse of a diffeomorphic factor: `(b^{-1}, 1/(beta o b^{-1}))`.
pub fn inverse_factor(factor: &Factor) -> Result<Factor, JacobiError> {
    let inv = factor.inverse_map()?.clone();
    let beta_inv_chart = inv.pullback_function(factor.beta())?;
    let beta = ScalarField::new(
        factor.target_chart(),
        Expr::div(Expr::constant(1.0), beta_inv_chart.expr().clone()),
    );
    Ok(Factor::new(inv, beta, Some(factor.map().clone()))?)
}

/// Generates points on the L-graph of a factor `C` between Jacobi charts:
/// product coordinates `(x_A, c(x_A), beta_C(x_A))` with `x_A` sampled in
/// the source windows.
pub fn lgraph_samples(
    c: &Factor,
    prod: &BaseProduct,
    seed: u64,
    count: usize,
) -> Result<Vec<Vec<f64>>, JacobiError> {
    let windows = c.source_chart().sampling_windows();
    let mut out = Vec::with_capacity(count);
    for x in crate::sampling::low_discrepancy_points(seed, count, &windows) {
        let y = c.map().eval(&x)?;
        let w = c.beta().eval(&x)?;
        let mut point = Vec::with_capacity(prod.chart().dim());
        point.extend_from_slice(&x);
        point.extend_from_slice(&y);
        point.push(w);
        out.push(point);
    }
    Ok(out)
}

/// Coisotropy of the L-graph of a factor `C` between Jacobi charts inside
/// the product `J_source x opposite(J_target)`: generating vanishing
/// sections are `P1* C* s - P2* s` for test sections `s` on the target;
/// the report carries their on-graph values, the pairwise bracket
/// residuals (Lie subalgebra condition) and the tangency residuals of
/// their Hamiltonian fields against the graph constraints. The graph is
/// coisotropic precisely when `C` is a Jacobi map.
pub fn lgraph_coisotropy_check(
    c: &Factor,
    j_source: &LichnerowiczPair,
    j_target: &LichnerowiczPair,
    test_sections: &[ScalarField],
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<CheckReport, JacobiError> {
    j_source.require_certified()?;
    j_target.require_certified()?;
    check_same_chart(c.source_chart(), &j_source.chart)?;
    check_same_chart(c.target_chart(), &j_target.chart)?;
    let l_a = TrivialLineBundle::new(&j_source.chart);
    let l_b = TrivialLineBundle::new(&j_target.chart);
    let prod = BaseProduct::new(&l_a, &l_b)?;
    let (n1, n2) = prod.dims();
    let (_, j12) = product_jacobi(j_source, &j_target.opposite())?;
    let windows = prod.chart().sampling_windows();
    let cert_samples = crate::sampling::low_discrepancy_points(0x9a9a, 60, &windows);
    let (j12, _) = j12.certify(&cert_samples, 1e-7)?;

    // graph constraints: x_B - c(x_A) and w - beta_C(x_A)
    let embed_a: Vec<Expr> = (0..n1).map(Expr::var).collect();
    let mut constraints: Vec<ScalarField> = Vec::with_capacity(n2 + 1);
    for a in 0..n2 {
        let mapped = c.map().components()[a].substitute(&embed_a);
        constraints.push(ScalarField::new(
            prod.chart(),
            Expr::sub(Expr::var(n1 + a), mapped),
        ));
    }
    constraints.push(ScalarField::new(
        prod.chart(),
        Expr::sub(
            Expr::var(prod.fibre_index()),
            c.beta().expr().substitute(&embed_a),
        ),
    ));
    for x in samples {
        for (j, cst) in constraints.iter().enumerate() {
            let v = cst.eval(x)?;
            if v.abs() > SURFACE_TOLERANCE {
                return Err(JacobiError::SampleOffSurface {
                    point: x.clone(),
                    constraint: format!("graph_{j}"),
                    value: v.abs(),
                    tolerance: SURFACE_TOLERANCE,
                });
            }
        }
    }

    // vanishing sections P1* C* s - P2* s
    let mut vanishing = Vec::with_capacity(test_sections.len());
    for s in test_sections {
        let pulled = c.pullback_section(s)?;
        let v = prod.pullback_p1(&pulled)?.sub(&prod.pullback_p2(s)?)?;
        vanishing.push(v);
    }

    let mut on_graph = 0.0f64;
    let mut closure = 0.0f64;
    let mut tangency = 0.0f64;
    for v in &vanishing {
        for x in samples {
            on_graph = on_graph.max(v.eval(x)?.abs());
        }
        let xv = j12.hamiltonian_vf(v)?;
        for cst in &constraints {
            let dc = xv.apply(cst)?;
            for x in samples {
                tangency = tangency.max(dc.eval(x)?.abs());
            }
        }
        for w in &vanishing {
            let br = j12.bracket(v, w)?;
            for x in samples {
                closure = closure.max(br.eval(x)?.abs());
            }
        }
    }
    let mut report = CheckReport::new("lgraph_coisotropy", tol, samples.len(), None);
    report.push("section_vanishing", on_graph);
    report.push("subalgebra", closure);
    report.push("tangency", tangency);
    Ok(report.finish())
}

/// Coisotropy of the jet-lift graph of a diffeomorphic base factor, the
/// whole pipeline in one call: canonical pairs are built on the jet
/// charts of the factor's source and target, the lift's L-graph is
/// sampled, and the generating vanishing sections (fibre-wise linear
/// sections of a seeded derivation battery plus lifted base sections)
/// are tested for closure and tangency inside the opposite product.
pub fn jet_lift_graph_check(
    factor: &Factor,
    seed: u64,
    sample_count: usize,
    tol: f64,
) -> Result<CheckReport, JacobiError> {
    let jet_src = JetChart::for_base(factor.source_chart())?;
    let jet_tgt = JetChart::for_base(factor.target_chart())?;
    let (_, pair_src, _) = canonical_contact(factor.source_chart(), seed ^ 0x71f7, 100, 1e-9)?;
    let (_, pair_tgt, _) = canonical_contact(factor.target_chart(), seed ^ 0x72f7, 100, 1e-9)?;
    let lift = jet_lift_diffeo(factor, &jet_src, &jet_tgt)?;

    let base = factor.source_chart();
    let n = base.dim();
    let fields = test_fields(base, seed ^ 0x73f7, 2 * (n + 1) + 2);
    let mut sections = Vec::new();
    for k in 0..2 {
        let symbol = VectorField::new(
            base,
            (0..n).map(|i| fields[k * (n + 1) + i].clone()).collect(),
        )?;
        let d = Derivation::new(symbol, fields[k * (n + 1) + n].clone())?;
        sections.push(jet_src.fibrewise_linear(&d)?.as_field().clone());
    }
    for s in &fields[2 * (n + 1)..] {
        sections.push(jet_src.lift_section(s)?);
    }

    let prod = BaseProduct::new(
        &TrivialLineBundle::new(jet_tgt.chart()),
        &TrivialLineBundle::new(jet_src.chart()),
    )?;
    let samples = lgraph_samples(&lift, &prod, seed ^ 0x74f7, sample_count)?;
    lgraph_coisotropy_check(&lift, &pair_tgt, &pair_src, &sections, &samples, tol)
}

// ---------------------------------------------------------------------------
// Comoment maps
// ---------------------------------------------------------------------------

/// Comoment map of a family of infinitesimal generators: the coefficient
/// vector selects the derivation `sum_i xi_i Psi_i`, included as a
/// fibre-wise linear section of the jet chart.
pub fn comoment(
    generators: &[Derivation],
    xi: &[f64],
    jet: &JetChart,
) -> Result<FibrewiseLinearSection, JacobiError> {
    if generators.len() != xi.len() {
        return Err(JacobiError::LengthMismatch {
            expected: generators.len(),
            got: xi.len(),
        });
    }
    for g in generators {
        check_same_chart(g.chart(), jet.base())?;
    }
    let mut combined = Derivation::new(
        VectorField::zero(jet.base()),
        ScalarField::constant(jet.base(), 0.0),
    )?;
    for (g, &coeff) in generators.iter().zip(xi) {
        combined = combined.add(&g.scale(coeff))?;
    }
    jet.fibrewise_linear(&combined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::lie_bracket;
    use crate::sampling::cube_points;

    fn base_chart_n(n: usize) -> Arc<ChartDomain> {
        if n == 1 {
            ChartDomain::new(vec!["q"]).unwrap()
        } else {
            ChartDomain::new((1..=n).map(|i| format!("q{i}")).collect::<Vec<_>>()).unwrap()
        }
    }

    fn canonical(n: usize) -> (JetChart, LichnerowiczPair) {
        let base = base_chart_n(n);
        let (jet, pair, report) = canonical_contact(&base, 7, 100, 1e-9).unwrap();
        assert!(report.passed, "canonical pair must certify:\n{report}");
        (jet, pair)
    }

    #[test]
    fn jet_chart_names() {
        let (jet, _) = canonical(1);
        assert_eq!(jet.chart().coord_names(), &["q", "p", "z"]);
        let (jet, _) = canonical(2);
        assert_eq!(jet.chart().coord_names(), &["q1", "q2", "p1", "p2", "z"]);
    }

    #[test]
    fn bracket_is_antisymmetric_and_unit_acts_by_reeb() {
        let (jet, pair) = canonical(1);
        let f = ScalarField::parse("q^2*p + sin(z)", jet.chart()).unwrap();
        let g = ScalarField::parse("p*z - cos(q)", jet.chart()).unwrap();
        let fg = pair.bracket(&f, &g).unwrap();
        let gf = pair.bracket(&g, &f).unwrap();
        let ff = pair.bracket(&f, &f).unwrap();
        let one = ScalarField::constant(jet.chart(), 1.0);
        let f_one = pair.bracket(&f, &one).unwrap();
        let minus_rf = pair.reeb_field().apply(&f).unwrap().scale(-1.0);
        for x in cube_points(41, 50, 3, 2.0) {
            assert!((fg.eval(&x).unwrap() + gf.eval(&x).unwrap()).abs() < 1e-12);
            assert_eq!(ff.eval(&x).unwrap(), 0.0);
            assert!((f_one.eval(&x).unwrap() - minus_rf.eval(&x).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn poisson_specialization_when_reeb_vanishes() {
        // R = 0 reduces the bracket to pi(df, dg)
        let chart = ChartDomain::new(vec!["q", "p"]).unwrap();
        let pi = BivectorField::from_components(
            &chart,
            vec![(0, 1, ScalarField::constant(&chart, -1.0))],
        )
        .unwrap();
        let pair = LichnerowiczPair::new(pi, VectorField::zero(&chart)).unwrap();
        let samples = cube_points(42, 50, 2, 2.0);
        let (pair, report) = pair.certify(&samples, 1e-12).unwrap();
        assert!(report.passed);
        let f = ScalarField::parse("q^2 + p", &chart).unwrap();
        let g = ScalarField::parse("q*p", &chart).unwrap();
        let br = pair.bracket(&f, &g).unwrap();
        let pi_fg = pair.bivector().pairing(&f, &g).unwrap();
        let xf = pair.hamiltonian_vf(&f).unwrap();
        let xff = xf.apply(&f).unwrap();
        for x in &samples {
            assert!((br.eval(x).unwrap() - pi_fg.eval(x).unwrap()).abs() < 1e-14);
            assert!(xff.eval(x).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn hamiltonian_derivation_realizes_the_bracket() {
        let (jet, pair) = canonical(1);
        let fields = test_fields(jet.chart(), 0xfeed, 6);
        for pair_fg in fields.chunks(2) {
            let f = &pair_fg[0];
            let g = &pair_fg[1];
            let delta = pair.hamiltonian_derivation(f).unwrap();
            let lhs = delta.apply(g).unwrap();
            let rhs = pair.bracket(f, g).unwrap();
            for x in cube_points(43, 50, 3, 2.0) {
                assert!((lhs.eval(&x).unwrap() - rhs.eval(&x).unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_hamiltonian_gives_zero_field_and_derivation() {
        let (jet, pair) = canonical(1);
        let zero = ScalarField::constant(jet.chart(), 0.0);
        let xf = pair.hamiltonian_vf(&zero).unwrap();
        let delta = pair.hamiltonian_derivation(&zero).unwrap();
        for x in cube_points(40, 10, 3, 2.0) {
            assert_eq!(xf.eval(&x).unwrap(), vec![0.0; 3]);
            let (v, s) = delta.value_at(&x).unwrap();
            assert_eq!(v, vec![0.0; 3]);
            assert_eq!(s, 0.0);
        }
    }

    #[test]
    fn energy_identity() {
        // X_f[f] = f R[f] pointwise
        let (jet, pair) = canonical(2);
        for f in test_fields(jet.chart(), 0xabba, 4) {
            let xf = pair.hamiltonian_vf(&f).unwrap();
            let lhs = xf.apply(&f).unwrap();
            let rhs = f.mul(&pair.reeb_field().apply(&f).unwrap()).unwrap();
            for x in cube_points(44, 30, 5, 2.0) {
                assert!((lhs.eval(&x).unwrap() - rhs.eval(&x).unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn hamiltonian_map_is_lie_algebra_morphism() {
        let (jet, pair) = canonical(1);
        let fields = test_fields(jet.chart(), 0xcafe, 4);
        for c in fields.chunks(2) {
            let (f, g) = (&c[0], &c[1]);
            let x_fg = pair.hamiltonian_vf(&pair.bracket(f, g).unwrap()).unwrap();
            let comm = lie_bracket(
                &pair.hamiltonian_vf(f).unwrap(),
                &pair.hamiltonian_vf(g).unwrap(),
            )
            .unwrap();
            for x in cube_points(45, 50, 3, 2.0) {
                let a = x_fg.eval(&x).unwrap();
                let b = comm.eval(&x).unwrap();
                for i in 0..3 {
                    assert!((a[i] - b[i]).abs() < 1e-8, "{} vs {}", a[i], b[i]);
                }
            }
        }
    }

    #[test]
    fn zero_structure_certifies() {
        let chart = ChartDomain::new(vec!["x", "y", "z"]).unwrap();
        let pair =
            LichnerowiczPair::new(BivectorField::zero(&chart), VectorField::zero(&chart)).unwrap();
        let (pair, report) = pair.certify(&cube_points(46, 20, 3, 2.0), 1e-12).unwrap();
        assert!(report.passed);
        assert!(pair.is_certified());
        assert_eq!(report.residual("lie_derivative"), Some(0.0));
        assert_eq!(report.residual("schouten_wedge"), Some(0.0));
    }

    #[test]
    fn perturbed_pair_fails_certification() {
        // pi = dp^dq + q^2 dq^dz is not integrable against R = 0
        let chart = ChartDomain::new(vec!["q", "p", "z"]).unwrap();
        let pi = BivectorField::from_components(
            &chart,
            vec![
                (0, 1, ScalarField::constant(&chart, -1.0)),
                (0, 2, ScalarField::parse("q^2", &chart).unwrap()),
            ],
        )
        .unwrap();
        let pair = LichnerowiczPair::new(pi, VectorField::zero(&chart)).unwrap();
        let (pair, report) = pair.certify(&cube_points(47, 50, 3, 2.0), 1e-9).unwrap();
        assert!(!report.passed);
        assert!(!pair.is_certified());
        assert!(report.residual("schouten_wedge").unwrap() > 1e-9);
        // and uncertified pairs are refused by gated operations
        assert!(matches!(
            product_jacobi(&pair, &pair),
            Err(JacobiError::UncertifiedInput)
        ));
    }

    #[test]
    fn canonical_pair_damped_oscillator_field() {
        // H = (p^2 + q^2)/2 + 0.1 z must flow as the damped oscillator
        let (jet, pair) = canonical(1);
        let h = ScalarField::parse("(p^2 + q^2)/2 + 0.1*z", jet.chart()).unwrap();
        let xh = pair.hamiltonian_vf(&h).unwrap();
        let x = [0.7, -0.3, 0.2];
        let v = xh.eval(&x).unwrap();
        let (q, p, z) = (x[0], x[1], x[2]);
        let hval = (p * p + q * q) / 2.0 + 0.1 * z;
        assert!((v[0] - p).abs() < 1e-14, "qdot = p");
        assert!((v[1] - (-q - 0.1 * p)).abs() < 1e-14, "pdot = -q - 0.1 p");
        assert!((v[2] - (p * p - hval)).abs() < 1e-14, "zdot = p^2 - H");
    }

    #[test]
    fn canonical_reeb_conditions() {
        // theta(R) = 1 and i_R d theta = 0 for the canonical form
        let (jet, pair) = canonical(1);
        let samples = cube_points(48, 50, 3, 2.0);
        let theta = jet.canonical_contact_form(&samples).unwrap();
        for x in &samples {
            let r = pair.reeb_field().eval(x).unwrap();
            assert!((theta.pair_with(x, &r).unwrap() - 1.0).abs() < 1e-12);
            for dir in 0..3 {
                let mut e = vec![0.0; 3];
                e[dir] = 1.0;
                assert!(theta.d_theta(x, &r, &e).unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contact_to_jacobi_reproduces_canonical_pair() {
        let (jet, pair) = canonical(1);
        let samples = cube_points(49, 50, 3, 2.0);
        let theta = jet.canonical_contact_form(&samples).unwrap();
        let (recovered, report) = contact_to_jacobi(&theta, &samples, 1e-9).unwrap();
        assert!(report.passed);
        for x in &samples {
            let a = recovered.bivector().eval_matrix(x).unwrap();
            let b = pair.bivector().eval_matrix(x).unwrap();
            let ra = recovered.reeb_field().eval(x).unwrap();
            let rb = pair.reeb_field().eval(x).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a[i][j] - b[i][j]).abs() < 1e-10, "pi ({i},{j})");
                }
                assert!((ra[i] - rb[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn contact_to_jacobi_reversed_orientation() {
        // theta = dz - p dq: Reeb conditions hold and the pair certifies
        let chart = ChartDomain::new(vec!["q", "p", "z"]).unwrap();
        let samples = cube_points(50, 50, 3, 2.0);
        let theta = ContactForm::new(
            &chart,
            vec![
                ScalarField::parse("-p", &chart).unwrap(),
                ScalarField::constant(&chart, 0.0),
                ScalarField::constant(&chart, 1.0),
            ],
            &samples,
        )
        .unwrap();
        let (pair, report) = contact_to_jacobi(&theta, &samples, 1e-9).unwrap();
        assert!(report.passed, "{report}");
        for x in &samples {
            let r = pair.reeb_field().eval(x).unwrap();
            assert!((theta.pair_with(x, &r).unwrap() - 1.0).abs() < 1e-9);
            for dir in 0..3 {
                let mut e = vec![0.0; 3];
                e[dir] = 1.0;
                assert!(theta.d_theta(x, &r, &e).unwrap().abs() < 1e-9);
            }
        }
        // nondegeneracy: [pi^# | R] has full rank at samples
        for x in &samples {
            let m = pair.bivector().eval_matrix(x).unwrap();
            let r = pair.reeb_field().eval(x).unwrap();
            let mut rows: Vec<Vec<f64>> = (0..3).map(|i| m[i].clone()).collect();
            rows.push(r);
            assert_eq!(rank(rows, 1e-9), 3);
        }
    }

    fn rank(mut rows: Vec<Vec<f64>>, tol: f64) -> usize {
        let ncols = rows[0].len();
        let mut rank = 0;
        for col in 0..ncols {
            let piv = (rank..rows.len())
                .max_by(|&a, &b| rows[a][col].abs().total_cmp(&rows[b][col].abs()));
            match piv {
                Some(p) if rows[p][col].abs() > tol => {
                    rows.swap(rank, p);
                    let prow = rows[rank].clone();
                    for r in rows.iter_mut().skip(rank + 1) {
                        let f = r[col] / prow[col];
                        for c in col..ncols {
                            r[c] -= f * prow[c];
                        }
                    }
                    rank += 1;
                }
                _ => continue,
            }
        }
        rank
    }

    #[test]
    fn contact_form_round_trip_on_canonical_example() {
        let (jet, pair) = canonical(1);
        let n = jet.chart().dim();
        for x in cube_points(51, 30, n, 2.0) {
            let theta = contact_form_of_pair(&pair, &x).unwrap();
            // canonical orientation: theta = (p, 0, -1)
            assert!((theta[0] - x[1]).abs() < 1e-9);
            assert!(theta[1].abs() < 1e-9);
            assert!((theta[2] + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_eta_is_rejected() {
        let chart = ChartDomain::new(vec!["q", "p", "z"]).unwrap();
        let samples = cube_points(52, 10, 3, 2.0);
        // theta = dz alone: eta singular
        let res = ContactForm::new(
            &chart,
            vec![
                ScalarField::constant(&chart, 0.0),
                ScalarField::constant(&chart, 0.0),
                ScalarField::constant(&chart, 1.0),
            ],
            &samples,
        );
        assert!(matches!(res, Err(JacobiError::DegenerateEta { .. })));
    }

    #[test]
    fn bracket_relations_hold_on_canonical_pair() {
        let (jet, pair) = canonical(1);
        let base = jet.base().clone();
        let a = Derivation::new(
            VectorField::new(&base, vec![ScalarField::parse("q^2", &base).unwrap()]).unwrap(),
            ScalarField::parse("sin(q)", &base).unwrap(),
        )
        .unwrap();
        let b = Derivation::new(
            VectorField::new(&base, vec![ScalarField::parse("1 - q", &base).unwrap()]).unwrap(),
            ScalarField::parse("q^3", &base).unwrap(),
        )
        .unwrap();
        let s = ScalarField::parse("cos(q)", &base).unwrap();
        let r = ScalarField::parse("q^2 - q", &base).unwrap();
        let samples = cube_points(53, 100, 3, 2.0);
        let report = check_bracket_relations(&pair, &jet, &a, &b, &s, &r, &samples, 1e-9).unwrap();
        assert!(report.passed, "{report}");
        // a = b: first relation reads {l_a, l_a} = 0
        let report2 = check_bracket_relations(&pair, &jet, &a, &a, &s, &r, &samples, 1e-9).unwrap();
        assert!(report2.passed);
    }

    #[test]
    fn bracket_relations_hold_in_higher_dimension() {
        // same relations on the n = 2 jet chart, multi-component symbols
        let (jet, pair) = canonical(2);
        let base = jet.base().clone();
        let a = Derivation::new(
            VectorField::new(
                &base,
                vec![
                    ScalarField::parse("q1*q2", &base).unwrap(),
                    ScalarField::parse("1 - q1^2", &base).unwrap(),
                ],
            )
            .unwrap(),
            ScalarField::parse("sin(q2)", &base).unwrap(),
        )
        .unwrap();
        let b = Derivation::new(
            VectorField::new(
                &base,
                vec![
                    ScalarField::parse("q2^2", &base).unwrap(),
                    ScalarField::parse("0.5*q1", &base).unwrap(),
                ],
            )
            .unwrap(),
            ScalarField::parse("q1 - q2", &base).unwrap(),
        )
        .unwrap();
        let s = ScalarField::parse("cos(q1)*q2", &base).unwrap();
        let r = ScalarField::parse("q1^2 - q2", &base).unwrap();
        let samples = cube_points(58, 80, 5, 2.0);
        let report = check_bracket_relations(&pair, &jet, &a, &b, &s, &r, &samples, 1e-9).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn contact_to_jacobi_matches_canonical_in_dimension_five() {
        // exercises the 5x5 symbolic eta inversion
        let (jet, pair) = canonical(2);
        let samples = cube_points(59, 40, 5, 2.0);
        let theta = jet.canonical_contact_form(&samples).unwrap();
        let (recovered, report) = contact_to_jacobi(&theta, &samples, 1e-8).unwrap();
        assert!(report.passed, "{report}");
        for x in &samples {
            let a = recovered.bivector().eval_matrix(x).unwrap();
            let b = pair.bivector().eval_matrix(x).unwrap();
            let ra = recovered.reeb_field().eval(x).unwrap();
            let rb = pair.reeb_field().eval(x).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    assert!((a[i][j] - b[i][j]).abs() < 1e-9, "pi ({i},{j})");
                }
                assert!((ra[i] - rb[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn contact_to_jacobi_on_a_sheared_contact_form() {
        // theta = (p + 0.3 sin(q)) dq - dz is the canonical form in a
        // shifted momentum coordinate, so it is contact; the conversion
        // must certify and satisfy the Reeb conditions
        let chart = ChartDomain::new(vec!["q", "p", "z"]).unwrap();
        let samples = cube_points(61, 50, 3, 2.0);
        let theta = ContactForm::new(
            &chart,
            vec![
                ScalarField::parse("p + 0.3*sin(q)", &chart).unwrap(),
                ScalarField::constant(&chart, 0.0),
                ScalarField::constant(&chart, -1.0),
            ],
            &samples,
        )
        .unwrap();
        let (pair, report) = contact_to_jacobi(&theta, &samples, 1e-9).unwrap();
        assert!(report.passed, "{report}");
        for x in &samples {
            let r = pair.reeb_field().eval(x).unwrap();
            assert!((theta.pair_with(x, &r).unwrap() - 1.0).abs() < 1e-9);
            for dir in 0..3 {
                let mut e = vec![0.0; 3];
                e[dir] = 1.0;
                assert!(theta.d_theta(x, &r, &e).unwrap().abs() < 1e-9);
            }
        }
    }

    #[test]
    fn second_bracket_relation_coordinate_example() {
        // a = (d/dq (+) 0), s = q on n = 1
        let (jet, pair) = canonical(1);
        let base = jet.base().clone();
        let a = Derivation::new(
            VectorField::coordinate_direction(&base, 0),
            ScalarField::constant(&base, 0.0),
        )
        .unwrap();
        let b = a.clone();
        let s = ScalarField::coordinate(&base, 0);
        let r = ScalarField::constant(&base, 1.0);
        let samples = cube_points(54, 50, 3, 2.0);
        let report = check_bracket_relations(&pair, &jet, &a, &b, &s, &r, &samples, 1e-10).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn coisotropy_of_momentum_level_set() {
        // constraint c = p on the canonical chart passes
        let (jet, pair) = canonical(1);
        let c = ScalarField::coordinate(jet.chart(), 1);
        let sections = vec![
            ScalarField::constant(jet.chart(), 1.0),
            ScalarField::parse("q", jet.chart()).unwrap(),
            ScalarField::parse("z + q^2", jet.chart()).unwrap(),
        ];
        // samples with p = 0
        let samples: Vec<Vec<f64>> = cube_points(55, 40, 2, 2.0)
            .into_iter()
            .map(|v| vec![v[0], 0.0, v[1]])
            .collect();
        let report =
            coisotropic_check(&pair, std::slice::from_ref(&c), &samples, &sections, 1e-9)
                .unwrap();
        assert!(report.passed, "{report}");
        // zero structure: everything is coisotropic
        let chart = jet.chart();
        let zero =
            LichnerowiczPair::new(BivectorField::zero(chart), VectorField::zero(chart)).unwrap();
        let (zero, _) = zero.certify(&cube_points(56, 10, 3, 2.0), 1e-12).unwrap();
        let report = coisotropic_check(&zero, &[c], &samples, &sections, 1e-12).unwrap();
        assert!(report.passed);
    }

    #[test]
    fn z_level_set_regression_value() {
        // constraint c = z with generic test sections: the outcome is a
        // computed regression value, not an assumption. The section image
        // {z = 0} turns out coisotropic: X_{z u}|_{z=0} = (0, -p u, 0) is
        // tangent and brackets of vanishing sections vanish there.
        let (jet, pair) = canonical(1);
        let c = ScalarField::coordinate(jet.chart(), 2);
        let sections = vec![
            ScalarField::constant(jet.chart(), 1.0),
            ScalarField::parse("q + p^2", jet.chart()).unwrap(),
            ScalarField::parse("sin(q)*p", jet.chart()).unwrap(),
        ];
        let samples: Vec<Vec<f64>> = cube_points(57, 40, 2, 2.0)
            .into_iter()
            .map(|v| vec![v[0], v[1], 0.0])
            .collect();
        let report = coisotropic_check(&pair, &[c], &samples, &sections, 1e-9).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn off_surface_samples_are_rejected() {
        let (jet, pair) = canonical(1);
        let c = ScalarField::coordinate(jet.chart(), 1);
        let bad = vec![vec![0.1, 0.5, 0.2]];
        assert!(matches!(
            coisotropic_check(&pair, &[c], &bad, &[], 1e-9),
            Err(JacobiError::SampleOffSurface { .. })
        ));
    }

    #[test]
    fn product_of_canonical_pairs_certifies() {
        let (_, pair1) = canonical(1);
        let (_, pair2) = canonical(1);
        let (prod, j12) = product_jacobi(&pair1, &pair2).unwrap();
        assert_eq!(prod.chart().dim(), 7);
        let windows = prod.chart().sampling_windows();
        let samples = crate::sampling::low_discrepancy_points(58, 100, &windows);
        let (j12, report) = j12.certify(&samples, 1e-8).unwrap();
        assert!(report.passed, "{report}");
        assert!(j12.is_certified());
    }

    #[test]
    fn product_of_zero_structures_has_zero_bracket_on_pullbacks() {
        let chart = ChartDomain::new(vec!["x", "y"]).unwrap();
        let zero = LichnerowiczPair::new(BivectorField::zero(&chart), VectorField::zero(&chart))
            .unwrap();
        let (zero, _) = zero.certify(&cube_points(70, 10, 2, 2.0), 1e-12).unwrap();
        let (prod, j12) = product_jacobi(&zero, &zero).unwrap();
        let windows = prod.chart().sampling_windows();
        let samples = crate::sampling::low_discrepancy_points(71, 30, &windows);
        let fields = test_fields(&chart, 0x72, 4);
        for (s, t) in [(&fields[0], &fields[1]), (&fields[2], &fields[3])] {
            let b11 = j12
                .bracket(&prod.pullback_p1(s).unwrap(), &prod.pullback_p1(t).unwrap())
                .unwrap();
            let b22 = j12
                .bracket(&prod.pullback_p2(s).unwrap(), &prod.pullback_p2(t).unwrap())
                .unwrap();
            let b12 = j12
                .bracket(&prod.pullback_p1(s).unwrap(), &prod.pullback_p2(t).unwrap())
                .unwrap();
            for x in &samples {
                assert_eq!(b11.eval(x).unwrap(), 0.0);
                assert_eq!(b22.eval(x).unwrap(), 0.0);
                assert_eq!(b12.eval(x).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn identity_factor_is_a_jacobi_map() {
        let (jet, pair) = canonical(1);
        let bundle = TrivialLineBundle::new(jet.chart());
        let id = Factor::identity(&bundle);
        let fields = test_fields(jet.chart(), 0x75, 4);
        let pairs = vec![
            (fields[0].clone(), fields[1].clone()),
            (fields[2].clone(), fields[3].clone()),
        ];
        let samples = cube_points(76, 30, 3, 2.0);
        let report = jacobi_map_check(&id, &pair, &pair, &pairs, &samples, 1e-12).unwrap();
        assert!(report.passed);
        assert_eq!(report.residual("morphism"), Some(0.0));
    }

    #[test]
    fn product_on_negative_branch_certifies() {
        let (_, pair1) = canonical(1);
        let (_, pair2) = canonical(1);
        let (prod, j12) =
            product_jacobi_on_branch(&pair1, &pair2, RatioBranch::Negative).unwrap();
        let windows = prod.chart().sampling_windows();
        assert!(windows[prod.fibre_index()].1 < 0.0, "negative branch window");
        let samples = crate::sampling::low_discrepancy_points(62, 60, &windows);
        let (_, report) = j12.certify(&samples, 1e-8).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn product_defining_relations() {
        let (jet1, pair1) = canonical(1);
        let (jet2, pair2) = canonical(1);
        let (prod, j12) = product_jacobi(&pair1, &pair2).unwrap();
        let windows = prod.chart().sampling_windows();
        let samples = crate::sampling::low_discrepancy_points(59, 50, &windows);
        let (j12, _) = j12.certify(&samples, 1e-8).unwrap();
        let f1 = test_fields(jet1.chart(), 0x51, 4);
        let f2 = test_fields(jet2.chart(), 0x52, 4);
        let sections_1 = vec![
            (f1[0].clone(), f1[1].clone()),
            (f1[2].clone(), f1[3].clone()),
        ];
        let sections_2 = vec![
            (f2[0].clone(), f2[1].clone()),
            (f2[2].clone(), f2[3].clone()),
        ];
        let report = product_relations_check(
            &prod, &pair1, &pair2, &j12, &sections_1, &sections_2, &samples, 1e-9,
        )
        .unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn projections_are_jacobi_maps() {
        let (jet1, pair1) = canonical(1);
        let (jet2, pair2) = canonical(1);
        let (prod, j12) = product_jacobi(&pair1, &pair2).unwrap();
        let windows = prod.chart().sampling_windows();
        let samples = crate::sampling::low_discrepancy_points(60, 50, &windows);
        let (j12, _) = j12.certify(&samples, 1e-8).unwrap();
        let l1 = TrivialLineBundle::new(jet1.chart());
        let l2 = TrivialLineBundle::new(jet2.chart());
        let p1 = prod.projection_factor_1(&l1).unwrap();
        let p2 = prod.projection_factor_2(&l2).unwrap();
        let f1 = test_fields(jet1.chart(), 0x61, 4);
        let f2 = test_fields(jet2.chart(), 0x62, 4);
        let pairs1 = vec![
            (f1[0].clone(), f1[1].clone()),
            (f1[2].clone(), f1[3].clone()),
        ];
        let pairs2 = vec![
            (f2[0].clone(), f2[1].clone()),
            (f2[2].clone(), f2[3].clone()),
        ];
        let r1 = jacobi_map_check(&p1, &j12, &pair1, &pairs1, &samples, 1e-8).unwrap();
        assert!(r1.passed, "{r1}");
        let r2 = jacobi_map_check(&p2, &j12, &pair2, &pairs2, &samples, 1e-8).unwrap();
        assert!(r2.passed, "{r2}");
    }

    fn diffeo_factor_1d(
        source: &Arc<ChartDomain>,
        target: &Arc<ChartDomain>,
        a: f64,
        c: f64,
        beta: &str,
    ) -> Factor {
        let x = &source.coord_names()[0];
        let y = &target.coord_names()[0];
        let map = SmoothMap::parse(source, target, &[&format!("{a}*{x} + {c}")]).unwrap();
        let inv = SmoothMap::parse(target, source, &[&format!("({y} - {c})/{a}")]).unwrap();
        Factor::new(map, ScalarField::parse(beta, source).unwrap(), Some(inv)).unwrap()
    }

    #[test]
    fn jet_lift_transformation_rules() {
        // J1B* l_a = l_{B_* a} and J1B* pi*u = pi*(B^{-1})* u
        let src = ChartDomain::new(vec!["x"]).unwrap();
        let tgt = ChartDomain::new(vec!["y"]).unwrap();
        let f = diffeo_factor_1d(&src, &tgt, 1.4, 0.3, "2 + 0.4*x");
        let jet_src = JetChart::for_base(&src).unwrap();
        let jet_tgt = JetChart::for_base(&tgt).unwrap();
        let lift = jet_lift_diffeo(&f, &jet_src, &jet_tgt).unwrap();

        let a = Derivation::new(
            VectorField::new(&src, vec![ScalarField::parse("0.5 + x^2", &src).unwrap()]).unwrap(),
            ScalarField::parse("sin(x)", &src).unwrap(),
        )
        .unwrap();
        let la = jet_src.fibrewise_linear(&a).unwrap();
        let lifted_la = lift.pullback_section(la.as_field()).unwrap();
        let pushed = f.der_pushforward(&a).unwrap();
        let l_pushed = jet_tgt.fibrewise_linear(&pushed).unwrap();
        for x in cube_points(63, 50, 3, 1.5) {
            let lhs = lifted_la.eval(&x).unwrap();
            let rhs = l_pushed.eval(&x).unwrap();
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        }

        let u = ScalarField::parse("x^2 - 0.5", &src).unwrap();
        let pu = jet_src.lift_section(&u).unwrap();
        let lifted_pu = lift.pullback_section(&pu).unwrap();
        let inv_f = inverse_factor(&f).unwrap();
        let rhs = jet_tgt
            .lift_section(&inv_f.pullback_section(&u).unwrap())
            .unwrap();
        for x in cube_points(64, 50, 3, 1.5) {
            assert!((lifted_pu.eval(&x).unwrap() - rhs.eval(&x).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn jet_lift_identity_and_composition() {
        let src = ChartDomain::new(vec!["x"]).unwrap();
        let bundle = TrivialLineBundle::new(&src);
        let jet = JetChart::for_base(&src).unwrap();
        let id = Factor::identity(&bundle);
        let lifted_id = jet_lift_diffeo(&id, &jet, &jet).unwrap();
        for x in cube_points(65, 20, 3, 2.0) {
            let y = lifted_id.map().eval(&x).unwrap();
            for i in 0..3 {
                assert!((x[i] - y[i]).abs() < 1e-14);
            }
            assert!((lifted_id.beta().eval(&x).unwrap() - 1.0).abs() < 1e-14);
        }
        // constant scale c: z divides by c in the pull-back direction,
        // p scales by c, q unchanged
        let tgt = ChartDomain::new(vec!["y"]).unwrap();
        let cfac = diffeo_factor_1d(&src, &tgt, 1.0, 0.0, "2");
        let jet_tgt = JetChart::for_base(&tgt).unwrap();
        let lift = jet_lift_diffeo(&cfac, &jet, &jet_tgt).unwrap();
        let img = lift.map().eval(&[0.5, 0.7, 0.9]).unwrap();
        assert!((img[0] - 0.5).abs() < 1e-14);
        assert!((img[1] - 0.35).abs() < 1e-14, "p divides by beta");
        assert!((img[2] - 0.45).abs() < 1e-14, "z divides by beta");

        // J1(B o F) = J1F o J1B at random points
        let mid = ChartDomain::new(vec!["m"]).unwrap();
        let jet_mid = JetChart::for_base(&mid).unwrap();
        let f1 = diffeo_factor_1d(&src, &mid, 0.8, 0.1, "1.5 + 0.2*x");
        let f2 = diffeo_factor_1d(&mid, &tgt, 1.6, -0.4, "2 - 0.3*m");
        let composed = f2.compose(&f1).unwrap();
        let lift_composed = jet_lift_diffeo(&composed, &jet, &jet_tgt).unwrap();
        let lift1 = jet_lift_diffeo(&f1, &jet, &jet_mid).unwrap();
        let lift2 = jet_lift_diffeo(&f2, &jet_mid, &jet_tgt).unwrap();
        let chained = lift1.compose(&lift2).unwrap();
        for x in cube_points(66, 50, 3, 1.2) {
            let a = lift_composed.map().eval(&x).unwrap();
            let b = chained.map().eval(&x).unwrap();
            for i in 0..3 {
                assert!(
                    (a[i] - b[i]).abs() < 1e-10,
                    "component {i}: {} vs {}",
                    a[i],
                    b[i]
                );
            }
            let ba = lift_composed.beta().eval(&x).unwrap();
            let bb = chained.beta().eval(&x).unwrap();
            assert!((ba - bb).abs() < 1e-10);
        }
    }

    #[test]
    fn jet_lift_is_jacobi_map() {
        let src = ChartDomain::new(vec!["x"]).unwrap();
        let tgt = ChartDomain::new(vec!["y"]).unwrap();
        let f = diffeo_factor_1d(&src, &tgt, 1.3, 0.2, "1.5 + 0.25*x");
        let jet_src = JetChart::for_base(&src).unwrap();
        let jet_tgt = JetChart::for_base(&tgt).unwrap();
        let (_, pair_src, _) = canonical_contact(&src, 71, 100, 1e-9).unwrap();
        let (_, pair_tgt, _) = canonical_contact(&tgt, 72, 100, 1e-9).unwrap();
        let lift = jet_lift_diffeo(&f, &jet_src, &jet_tgt).unwrap();
        // lift: target-jet -> source-jet, so the source structure is the
        // target bundle's canonical pair
        let fields = test_fields(jet_src.chart(), 0x73, 4);
        let pairs = vec![
            (fields[0].clone(), fields[1].clone()),
            (fields[2].clone(), fields[3].clone()),
        ];
        let samples = cube_points(74, 50, 3, 1.2);
        let report = jacobi_map_check(&lift, &pair_tgt, &pair_src, &pairs, &samples, 1e-8).unwrap();
        assert!(report.passed, "{report}");
        // negative control: perturb the lift's beta
        let bad = Factor::new(
            lift.map().clone(),
            ScalarField::new(
                jet_tgt.chart(),
                Expr::mul(
                    lift.beta().expr().clone(),
                    crate::expr::parse_expr("1 + 0.1*y", jet_tgt.chart()).unwrap(),
                ),
            ),
            None,
        )
        .unwrap();
        let report = jacobi_map_check(&bad, &pair_tgt, &pair_src, &pairs, &samples, 1e-8).unwrap();
        assert!(!report.passed);
        assert!(report.max_residual() > 1e-4);
    }

    #[test]
    fn jet_lift_graph_is_coisotropic() {
        let src = ChartDomain::new(vec!["x"]).unwrap();
        let tgt = ChartDomain::new(vec!["y"]).unwrap();
        let f = diffeo_factor_1d(&src, &tgt, 1.2, 0.3, "2 + 0.5*x");
        let jet_src = JetChart::for_base(&src).unwrap();
        let jet_tgt = JetChart::for_base(&tgt).unwrap();
        let (_, pair_src, _) = canonical_contact(&src, 81, 100, 1e-9).unwrap();
        let (_, pair_tgt, _) = canonical_contact(&tgt, 82, 100, 1e-9).unwrap();
        let lift = jet_lift_diffeo(&f, &jet_src, &jet_tgt).unwrap();

        // test sections on the lift's target (the source-jet chart):
        // fibre-wise linear sections of derivations and lifted sections
        let a1 = Derivation::new(
            VectorField::new(&src, vec![ScalarField::parse("1 + 0.3*x", &src).unwrap()]).unwrap(),
            ScalarField::parse("0.5*x", &src).unwrap(),
        )
        .unwrap();
        let a2 = Derivation::new(
            VectorField::new(&src, vec![ScalarField::parse("x^2 - 1", &src).unwrap()]).unwrap(),
            ScalarField::constant(&src, 0.25),
        )
        .unwrap();
        let u1 = ScalarField::parse("x^2", &src).unwrap();
        let u2 = ScalarField::parse("1 - 0.2*x", &src).unwrap();
        let sections = vec![
            jet_src.fibrewise_linear(&a1).unwrap().as_field().clone(),
            jet_src.fibrewise_linear(&a2).unwrap().as_field().clone(),
            jet_src.lift_section(&u1).unwrap(),
            jet_src.lift_section(&u2).unwrap(),
        ];
        let l_tgt_jet = TrivialLineBundle::new(jet_tgt.chart());
        let l_src_jet = TrivialLineBundle::new(jet_src.chart());
        let prod = BaseProduct::new(&l_tgt_jet, &l_src_jet).unwrap();
        let samples = lgraph_samples(&lift, &prod, 83, 40).unwrap();
        let report =
            lgraph_coisotropy_check(&lift, &pair_tgt, &pair_src, &sections, &samples, 1e-8)
                .unwrap();
        assert!(report.passed, "{report}");

        // beta-perturbed control: same base map, scaled fibre map is not
        // a Jacobi map, so its own L-graph fails coisotropy
        let bad = Factor::new(
            lift.map().clone(),
            ScalarField::new(
                jet_tgt.chart(),
                Expr::mul(
                    lift.beta().expr().clone(),
                    crate::expr::parse_expr("1 + 0.1*y", jet_tgt.chart()).unwrap(),
                ),
            ),
            None,
        )
        .unwrap();
        let bad_samples = lgraph_samples(&bad, &prod, 84, 40).unwrap();
        let report =
            lgraph_coisotropy_check(&bad, &pair_tgt, &pair_src, &sections, &bad_samples, 1e-8)
                .unwrap();
        assert!(!report.passed);
        assert!(report.residual("section_vanishing").unwrap() < 1e-10);
        assert!(report.max_residual() > 1e-3);

        // samples perturbed off the graph are rejected
        let mut off = lgraph_samples(&lift, &prod, 85, 5).unwrap();
        for p in &mut off {
            p[3] += 1e-2;
        }
        assert!(matches!(
            lgraph_coisotropy_check(&lift, &pair_tgt, &pair_src, &sections, &off, 1e-8),
            Err(JacobiError::SampleOffSurface { .. })
        ));
    }

    #[test]
    fn jet_lift_graph_check_pipeline() {
        let src = ChartDomain::new(vec!["x"]).unwrap();
        let tgt = ChartDomain::new(vec!["y"]).unwrap();
        let f = diffeo_factor_1d(&src, &tgt, 0.9, -0.2, "1.5 + 0.3*x");
        let report = jet_lift_graph_check(&f, 0x99, 30, 1e-8).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn identity_factor_graph_is_coisotropic() {
        let src = ChartDomain::new(vec!["x"]).unwrap();
        let jet = JetChart::for_base(&src).unwrap();
        let (_, pair, _) = canonical_contact(&src, 86, 100, 1e-9).unwrap();
        let bundle = TrivialLineBundle::new(jet.chart());
        let id = Factor::identity(&bundle);
        let prod = BaseProduct::new(&bundle, &bundle).unwrap();
        let samples = lgraph_samples(&id, &prod, 87, 30).unwrap();
        let sections = test_fields(jet.chart(), 0x88, 4);
        let report =
            lgraph_coisotropy_check(&id, &pair, &pair, &sections, &samples, 1e-8).unwrap();
        assert!(report.passed, "{report}");
    }

    #[test]
    fn comoment_of_translation_is_momentum() {
        let src = ChartDomain::new(vec!["q"]).unwrap();
        let jet = JetChart::for_base(&src).unwrap();
        let translation = Derivation::new(
            VectorField::coordinate_direction(&src, 0),
            ScalarField::constant(&src, 0.0),
        )
        .unwrap();
        let mu = comoment(&[translation], &[1.0], &jet).unwrap();
        for x in cube_points(91, 20, 3, 2.0) {
            assert!((mu.eval(&x).unwrap() - x[1]).abs() < 1e-14, "mu = p");
            assert!(mu.zero_locus_contains(&[x[0], 0.0, x[2]], 1e-12).unwrap());
        }
        // xi = 0 gives the zero section, whose zero locus is everything
        let zero = comoment(&[mu.generator().clone()], &[0.0], &jet).unwrap();
        for x in cube_points(92, 10, 3, 2.0) {
            assert!(zero.zero_locus_contains(&x, 1e-15).unwrap());
        }
    }

    #[test]
    fn comoment_bracket_compatibility() {
        // generators closed under bracket: d/dq and q d/dq
        let src = ChartDomain::new(vec!["q"]).unwrap();
        let jet = JetChart::for_base(&src).unwrap();
        let (_, pair, _) = canonical_contact(&src, 93, 100, 1e-9).unwrap();
        let g1 = Derivation::new(
            VectorField::coordinate_direction(&src, 0),
            ScalarField::constant(&src, 0.0),
        )
        .unwrap();
        let g2 = Derivation::new(
            VectorField::new(&src, vec![ScalarField::coordinate(&src, 0)]).unwrap(),
            ScalarField::constant(&src, 0.0),
        )
        .unwrap();
        let generators = [g1, g2];
        let xi = [0.7, -0.4];
        let zeta = [0.1, 1.3];
        let mu_xi = comoment(&generators, &xi, &jet).unwrap();
        let mu_zeta = comoment(&generators, &zeta, &jet).unwrap();
        // in the (translation, dilation) algebra:
        // [a d/dq + b q d/dq, c d/dq + d q d/dq] = (ad - bc) d/dq
        let lie_coeff = xi[0] * zeta[1] - xi[1] * zeta[0];
        let mu_lie = comoment(&generators, &[lie_coeff, 0.0], &jet).unwrap();
        let lhs = pair.bracket(mu_xi.as_field(), mu_zeta.as_field()).unwrap();
        for x in cube_points(94, 50, 3, 2.0) {
            let l = lhs.eval(&x).unwrap();
            let r = mu_lie.eval(&x).unwrap();
            assert!((l - r).abs() < 1e-9, "{l} vs {r}");
        }
    }

    #[test]
    fn comoment_length_mismatch() {
        let src = ChartDomain::new(vec!["q"]).unwrap();
        let jet = JetChart::for_base(&src).unwrap();
        let g = Derivation::new(
            VectorField::coordinate_direction(&src, 0),
            ScalarField::constant(&src, 0.0),
        )
        .unwrap();
        assert!(matches!(
            comoment(&[g], &[1.0, 2.0], &jet),
            Err(JacobiError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn report_display_is_flat_key_value() {
        let (_, pair) = canonical(1);
        let report = check_jacobi_pair(&pair, &cube_points(95, 10, 3, 2.0), 1e-9).unwrap();
        let text = report.to_string();
        assert!(text.contains("check: jacobi_pair"));
        assert!(text.contains("tolerance:"));
        assert!(text.contains("samples: 10"));
        assert!(text.contains("residual_lie_derivative:"));
        assert!(text.contains("residual_schouten_wedge:"));
        assert!(text.contains("pass: true"));
    }
}
