use std::fmt;

use serde::Serialize;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An evaluator received a non-finite coordinate.
    #[error("domain error: {0}")]
    Domain(String),

    /// A precondition on the arguments does not hold.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no critical points found in the search box")]
    NoCriticalPoints,

    #[error("trajectory escaped the search box at t = {time:.6} (x = {position:?})")]
    Escaped { time: f64, position: Vec<f64> },

    #[error("trajectory exceeded the maximum arclength {limit} without reaching a critical point")]
    ArclengthExceeded { limit: f64 },

    #[error("non-finite objective: {0}")]
    NonFinite(String),

    #[error("tridiagonal solve failed: zero pivot at row {0}")]
    LinearSolve(usize),

    #[error("connection did not converge: {0}")]
    NotConverged(Box<ConvergenceDiagnostics>),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Residuals carried by a failed connection computation.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceDiagnostics {
    pub action: f64,
    pub euler_lagrange_residual: f64,
    pub energy_residual: f64,
    pub iterations: usize,
    pub interval: f64,
}

impl fmt::Display for ConvergenceDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "J = {:.6e}, Euler-Lagrange residual = {:.3e}, energy residual = {:.3e} after {} iterations on [-{T}, {T}]",
            self.action,
            self.euler_lagrange_residual,
            self.energy_residual,
            self.iterations,
            T = self.interval
        )
    }
}

pub(crate) fn ensure_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite coordinate in {x:?}")))
    }
}
