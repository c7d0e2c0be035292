//! Dimensioned Hamiltonian mechanics at desk scale.
//!
//! The crate is organised around five layers:
//!
//! - [`measurand`] — typed-field arithmetic for dimensioned numbers:
//!   measurand spaces, integer dimension vectors, unit systems, unit
//!   conversion and ratio maps.
//! - [`expr`] — an expression language for smooth scalar, vector and
//!   bivector fields on chart domains, with exact first and second
//!   derivatives by forward propagation through the tree.
//! - [`bundle`] — trivialized line-bundle calculus: factors, pull-backs,
//!   derivations, der maps and push-forwards, jet prolongation and the
//!   base/line product of trivial bundles.
//! - [`jacobi`] — Lichnerowicz pairs (trivialized Jacobi structures):
//!   brackets, Hamiltonian fields, sample-based integrability
//!   certification, contact forms, canonical contact structures on jet
//!   charts, coisotropy and product structures, jet lifts and comoments.
//! - [`dynamics`] — Runge-Kutta integration of Hamiltonian flows with
//!   invariant monitoring.
//!
//! [`sampling`] provides the deterministic low-discrepancy point sets used
//! by every certification routine.

pub mod bundle;
pub mod dynamics;
pub mod expr;
pub mod jacobi;
pub mod measurand;
pub mod sampling;
