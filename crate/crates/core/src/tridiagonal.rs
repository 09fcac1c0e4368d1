//! Thomas algorithm for constant-coefficient symmetric tridiagonal systems.

use crate::error::{Error, Result};

/// Solves `(diag · I + off · (shift_up + shift_down)) x = rhs` in place, where
/// the system size is `rhs.len() / stride` and unknowns of one system are
/// `stride` apart. `scratch` must hold at least `rhs.len() / stride` values.
pub(crate) fn solve_strided(
    diag: f64,
    off: f64,
    rhs: &mut [f64],
    offset: usize,
    stride: usize,
    scratch: &mut [f64],
) -> Result<()> {
    let n = rhs.len() / stride;
    if n == 0 {
        return Ok(());
    }
    let at = |k: usize| k * stride + offset;
    // forward sweep: scratch holds the modified super-diagonal
    let mut pivot = diag;
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(Error::LinearSolve(0));
    }
    scratch[0] = off / pivot;
    rhs[at(0)] /= pivot;
    for k in 1..n {
        pivot = diag - off * scratch[k - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::LinearSolve(k));
        }
        scratch[k] = off / pivot;
        rhs[at(k)] = (rhs[at(k)] - off * rhs[at(k - 1)]) / pivot;
    }
    for k in (0..n - 1).rev() {
        rhs[at(k)] -= scratch[k] * rhs[at(k + 1)];
    }
    Ok(())
}
