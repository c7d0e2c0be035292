//! Hamiltonian flow integration with invariant monitoring.
//!
//! The flow of `X_H = pi^#(dH) + H R` is integrated with fixed-step
//! classical RK4 (the default; deterministic output) or adaptive
//! RK45 with Dormand-Prince coefficients. Along the trajectory two
//! invariants are tracked:
//!
//! - the pointwise identity `X_H[H] = H R[H]` (exact up to rounding,
//!   since `pi(dH,dH) = 0`), a correctness gate for the vector field;
//! - the discrete drift `|dH/dt - H R[H]|` from trajectory differences,
//!   a convergence gate for the integrator.
//!
//! State updates use Neumaier-compensated accumulation so that the
//! fixed-step convergence order stays visible above the rounding floor.

#![allow(clippy::needless_range_loop)]

use thiserror::Error;

use crate::expr::{check_same_chart, ExprError, ScalarField, VectorField};
use crate::jacobi::{JacobiError, LichnerowiczPair};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Jacobi(#[from] JacobiError),
    #[error("trajectory left the chart domain at t = {t}: {state:?}")]
    LeftDomain { t: f64, state: Vec<f64> },
    #[error("adaptive step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid flow problem: {0}")]
    InvalidProblem(String),
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),
}

/// Integration method. RK4 is the deterministic fixed-step default;
/// RK45 is adaptive with Dormand-Prince coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Rk4 { step: f64 },
    Rk45 { rtol: f64, atol: f64 },
}

impl Method {
    pub fn rk45_default() -> Self {
        Method::Rk45 {
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

/// A flow problem: a certified pair, a Hamiltonian on its chart, an
/// initial state and a time span.
#[derive(Debug, Clone)]
pub struct FlowProblem {
    pair: LichnerowiczPair,
    hamiltonian: ScalarField,
    x0: Vec<f64>,
    t_span: (f64, f64),
    method: Method,
}

impl FlowProblem {
    pub fn new(
        pair: LichnerowiczPair,
        hamiltonian: ScalarField,
        x0: Vec<f64>,
        t_span: (f64, f64),
        method: Method,
    ) -> Result<Self, FlowError> {
        if !pair.is_certified() {
            return Err(FlowError::Jacobi(JacobiError::UncertifiedInput));
        }
        check_same_chart(pair.chart(), hamiltonian.chart()).map_err(FlowError::Expr)?;
        if !pair.chart().contains(&x0) {
            return Err(FlowError::LeftDomain {
                t: t_span.0,
                state: x0,
            });
        }
        if t_span.0.is_nan() || t_span.1.is_nan() || t_span.1 <= t_span.0 {
            return Err(FlowError::InvalidProblem(format!(
                "need t1 > t0, got ({}, {})",
                t_span.0, t_span.1
            )));
        }
        if let Method::Rk4 { step } = method {
            if step.is_nan() || step <= 0.0 {
                return Err(FlowError::InvalidProblem(format!(
                    "step must be positive, got {step}"
                )));
            }
        }
        Ok(Self {
            pair,
            hamiltonian,
            x0,
            t_span,
            method,
        })
    }

    pub fn pair(&self) -> &LichnerowiczPair {
        &self.pair
    }

    pub fn hamiltonian(&self) -> &ScalarField {
        &self.hamiltonian
    }
}

/// A monitored trajectory: times, states, Hamiltonian values and the
/// pointwise energy-identity residuals `|X_H[H] - H R[H]|` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub h_values: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl Trajectory {
    /// CSV serialization: header `t,<coord names...>,H,drift_residual`,
    /// floats with 17 significant digits, `\n` newlines.
    pub fn to_csv(&self, coord_names: &[String]) -> String {
        let mut out = String::new();
        out.push('t');
        for n in coord_names {
            out.push(',');
            out.push_str(n);
        }
        out.push_str(",H,drift_residual\n");
        for i in 0..self.times.len() {
            out.push_str(&format!("{:.16e}", self.times[i]));
            for v in &self.states[i] {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push_str(&format!(
                ",{:.16e},{:.16e}\n",
                self.h_values[i], self.residuals[i]
            ));
        }
        out
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("nonempty trajectory")
    }
}

struct Monitor {
    x_h: VectorField,
    h: ScalarField,
    // X_H[H] - H R[H], evaluated exactly; sits at rounding level
    pointwise_residual: ScalarField,
    h_rh: ScalarField,
}

impl Monitor {
    fn new(pair: &LichnerowiczPair, h: &ScalarField) -> Result<Self, FlowError> {
        let x_h = pair.hamiltonian_vf(h)?;
        let xhh = x_h.apply(h)?;
        let h_rh = h.mul(&pair.reeb_field().apply(h)?)?;
        let pointwise_residual = xhh.sub(&h_rh)?;
        Ok(Self {
            x_h,
            h: h.clone(),
            pointwise_residual,
            h_rh,
        })
    }

    fn record(&self, t: f64, x: &[f64], traj: &mut Trajectory) -> Result<(), FlowError> {
        let h = self.h.eval(x)?;
        let res = self.pointwise_residual.eval(x)?.abs();
        traj.times.push(t);
        traj.states.push(x.to_vec());
        traj.h_values.push(h);
        traj.residuals.push(res);
        Ok(())
    }
}

/// Neumaier-compensated state vector: `value + carry` tracks the exact
/// sum of increments to well below one ulp per step.
#[derive(Clone)]
struct CompensatedState {
    value: Vec<f64>,
    carry: Vec<f64>,
}

impl CompensatedState {
    fn new(x: &[f64]) -> Self {
        Self {
            value: x.to_vec(),
            carry: vec![0.0; x.len()],
        }
    }

    fn add(&mut self, delta: &[f64]) {
        for i in 0..self.value.len() {
            let y = delta[i] + self.carry[i];
            let s = self.value[i] + y;
            self.carry[i] = if self.value[i].abs() >= y.abs() {
                (self.value[i] - s) + y
            } else {
                (y - s) + self.value[i]
            };
            self.value[i] = s;
        }
    }
}

fn eval_rhs(x_h: &VectorField, x: &[f64], t: f64) -> Result<Vec<f64>, FlowError> {
    match x_h.eval(x) {
        Ok(v) => {
            if v.iter().any(|c| !c.is_finite()) {
                Err(FlowError::NonFinite { t })
            } else {
                Ok(v)
            }
        }
        Err(ExprError::DomainError(_)) => Err(FlowError::LeftDomain {
            t,
            state: x.to_vec(),
        }),
        Err(e) => Err(FlowError::Expr(e)),
    }
}

/// Integrates the Hamiltonian flow of the problem, recording the state,
/// `H` and the pointwise identity residual at every accepted step.
pub fn integrate_flow(prob: &FlowProblem) -> Result<Trajectory, FlowError> {
    let monitor = Monitor::new(&prob.pair, &prob.hamiltonian)?;
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        h_values: Vec::new(),
        residuals: Vec::new(),
    };
    match prob.method {
        Method::Rk4 { step } => {
            integrate_rk4(prob, &monitor, step, &mut traj)?;
        }
        Method::Rk45 { rtol, atol } => {
            integrate_rk45(prob, &monitor, rtol, atol, &mut traj)?;
        }
    }
    Ok(traj)
}

fn check_in_domain(prob: &FlowProblem, t: f64, x: &[f64]) -> Result<(), FlowError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FlowError::NonFinite { t });
    }
    if !prob.pair.chart().contains(x) {
        return Err(FlowError::LeftDomain {
            t,
            state: x.to_vec(),
        });
    }
    Ok(())
}

fn rk4_increment(x_h: &VectorField, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>, FlowError> {
    let n = x.len();
    let k1 = eval_rhs(x_h, x, t)?;
    let mut stage = vec![0.0; n];
    for i in 0..n {
        stage[i] = x[i] + 0.5 * h * k1[i];
    }
    let k2 = eval_rhs(x_h, &stage, t + 0.5 * h)?;
    for i in 0..n {
        stage[i] = x[i] + 0.5 * h * k2[i];
    }
    let k3 = eval_rhs(x_h, &stage, t + 0.5 * h)?;
    for i in 0..n {
        stage[i] = x[i] + h * k3[i];
    }
    let k4 = eval_rhs(x_h, &stage, t + h)?;
    Ok((0..n)
        .map(|i| h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

fn integrate_rk4(
    prob: &FlowProblem,
    monitor: &Monitor,
    step: f64,
    traj: &mut Trajectory,
) -> Result<(), FlowError> {
    let (t0, t1) = prob.t_span;
    let total = t1 - t0;
    let n_steps = (total / step).round().max(1.0) as usize;
    let mut state = CompensatedState::new(&prob.x0);
    monitor.record(t0, &state.value, traj)?;
    for k in 0..n_steps {
        let t = t0 + total * (k as f64) / (n_steps as f64);
        let t_next = if k + 1 == n_steps {
            t1
        } else {
            t0 + total * ((k + 1) as f64) / (n_steps as f64)
        };
        let h = t_next - t;
        let delta = rk4_increment(&monitor.x_h, t, &state.value, h)?;
        state.add(&delta);
        check_in_domain(prob, t_next, &state.value)?;
        monitor.record(t_next, &state.value, traj)?;
    }
    Ok(())
}

// Dormand-Prince 5(4) coefficients
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn integrate_rk45(
    prob: &FlowProblem,
    monitor: &Monitor,
    rtol: f64,
    atol: f64,
    traj: &mut Trajectory,
) -> Result<(), FlowError> {
    let (t0, t1) = prob.t_span;
    let n = prob.x0.len();
    let mut t = t0;
    let mut state = CompensatedState::new(&prob.x0);
    let mut h = (t1 - t0) / 100.0;
    let h_min = (t1 - t0) * 1e-14;
    monitor.record(t, &state.value, traj)?;
    let mut k = vec![vec![0.0; n]; 7];
    while t < t1 {
        if h < h_min {
            return Err(FlowError::StepUnderflow { t });
        }
        if t + h > t1 {
            h = t1 - t;
        }
        let x = state.value.clone();
        k[0] = eval_rhs(&monitor.x_h, &x, t)?;
        for s in 1..7 {
            let mut stage = x.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = DP_A[s][j];
                if a != 0.0 {
                    for i in 0..n {
                        stage[i] += h * a * kj[i];
                    }
                }
            }
            k[s] = eval_rhs(&monitor.x_h, &stage, t + DP_C[s] * h)?;
        }
        let mut err: f64 = 0.0;
        let mut delta = vec![0.0; n];
        for i in 0..n {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += DP_B5[s] * k[s][i];
                d4 += DP_B4[s] * k[s][i];
            }
            delta[i] = h * d5;
            let scale = atol + rtol * (x[i].abs().max((x[i] + delta[i]).abs()));
            let e = h * (d5 - d4) / scale;
            err += e * e;
        }
        err = (err / n as f64).sqrt();
        if err <= 1.0 {
            state.add(&delta);
            t += h;
            check_in_domain(prob, t, &state.value)?;
            monitor.record(t, &state.value, traj)?;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    Ok(())
}

/// Energy-law summary of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySummary {
    /// Max over samples of `|X_H[H] - H R[H]|`, evaluated exactly; an
    /// algebraic identity that must sit at rounding level.
    pub max_pointwise_residual: f64,
    /// Max over samples of `|dH/dt - H R[H]|` with `dH/dt` from centered
    /// trajectory differences; bounded by the integration order.
    pub max_discrete_drift: f64,
}

/// Recomputes the pointwise identity residual along the trajectory and
/// the discrete energy drift from trajectory differences.
pub fn monitor_energy(
    traj: &Trajectory,
    pair: &LichnerowiczPair,
    h: &ScalarField,
) -> Result<EnergySummary, FlowError> {
    check_same_chart(pair.chart(), h.chart()).map_err(FlowError::Expr)?;
    let len = traj.times.len();
    if len != traj.states.len() || len != traj.h_values.len() {
        return Err(FlowError::InconsistentInputs(
            "trajectory arrays have different lengths".into(),
        ));
    }
    if len < 3 {
        return Err(FlowError::InconsistentInputs(
            "trajectory too short to estimate drift".into(),
        ));
    }
    for s in &traj.states {
        if s.len() != pair.chart().dim() {
            return Err(FlowError::InconsistentInputs(
                "state dimension does not match the chart".into(),
            ));
        }
    }
    let monitor = Monitor::new(pair, h)?;
    let mut max_pointwise = 0.0f64;
    let mut max_drift = 0.0f64;
    for i in 0..len {
        let x = &traj.states[i];
        max_pointwise = max_pointwise.max(monitor.pointwise_residual.eval(x)?.abs());
        let rate = monitor.h_rh.eval(x)?;
        let dhdt = if i == 0 {
            (traj.h_values[1] - traj.h_values[0]) / (traj.times[1] - traj.times[0])
        } else if i + 1 == len {
            (traj.h_values[len - 1] - traj.h_values[len - 2])
                / (traj.times[len - 1] - traj.times[len - 2])
        } else {
            (traj.h_values[i + 1] - traj.h_values[i - 1])
                / (traj.times[i + 1] - traj.times[i - 1])
        };
        max_drift = max_drift.max((dhdt - rate).abs());
    }
    Ok(EnergySummary {
        max_pointwise_residual: max_pointwise,
        max_discrete_drift: max_drift,
    })
}

/// Closed-form solution of `q'' + gamma q' + q = 0` (underdamped,
/// `gamma < 2`) with `q(0) = q0`, `q'(0) = p0`; returns `(q, p)(t)`.
pub fn damped_oscillator_exact(gamma: f64, q0: f64, p0: f64, t: f64) -> (f64, f64) {
    let omega = (1.0 - gamma * gamma / 4.0).sqrt();
    let a = q0;
    let b = (p0 + gamma * q0 / 2.0) / omega;
    let e = (-gamma * t / 2.0).exp();
    let (s, c) = (omega * t).sin_cos();
    let q = e * (a * c + b * s);
    let p = e * ((-gamma / 2.0) * (a * c + b * s) + omega * (b * c - a * s));
    (q, p)
}
