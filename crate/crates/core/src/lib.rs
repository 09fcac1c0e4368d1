//! Most probable transition paths between critical points of a potential in
//! the small-noise limit of overdamped Langevin dynamics.
//!
//! The crate covers potential evaluation with derivatives, critical point
//! search, discretized path functionals, a gradient flow for minimizing them,
//! heteroclinic orbit computation and the zero-noise limit functional.

pub mod critical_points;
mod error;
pub mod functionals;
pub mod gamma_limit;
pub mod heteroclinics;
pub mod optimizer;
pub mod potential;
mod ode;
mod tridiagonal;

pub use error::{ConvergenceDiagnostics, Error, Result};
