//! Linearly implicit gradient flow on the interior nodes of a path.
//!
//! One step with timestep `τ` solves, per spatial component,
//!
//! ```text
//! (I + τ (ε/h) T) x_new = x_old − τ (h/ε) ∇G(x_old) + τ (ε/h) b
//! ```
//!
//! where `T = tridiag(−1, 2, −1)` and `b` carries the pinned endpoints. The
//! step is accepted only if the objective strictly decreases.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{DiscretePath, Objective, Workspace};
use crate::potential::Potential;
use crate::tridiagonal::solve_strided;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub objective: Objective,
    pub eps: f64,
    /// Initial timestep `τ₀`.
    pub initial_step: f64,
    pub shrink: f64,
    pub grow: f64,
    /// Upper bound on `τ`.
    pub max_step: f64,
    /// Stop once the L² gradient norm falls to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Stop once repeated rejections push `τ` below this value.
    pub min_step: f64,
}

impl FlowConfig {
    pub fn new(objective: Objective, eps: f64) -> Self {
        Self {
            objective,
            eps,
            initial_step: 1e-2,
            shrink: 0.5,
            grow: 1.2,
            max_step: 1e3,
            tolerance: 1e-8,
            max_iterations: 400_000,
            min_step: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be positive");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial step must be positive");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0 && self.grow > 1.0) {
            return bad("need 0 < shrink < 1 < grow");
        }
        if !(self.max_step >= self.initial_step && self.min_step > 0.0) {
            return bad("need min_step > 0 and max_step >= initial step");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    Converged,
    MaxIterations,
    /// Every trial step was rejected down to the minimum timestep: the
    /// objective cannot decrease further in floating point.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub iteration: usize,
    pub eps: f64,
    /// Objective at the trial point.
    pub objective: f64,
    pub step: f64,
    /// Gradient norm at the point the trial step started from.
    pub grad_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    /// Objective of the starting path.
    pub initial_objective: f64,
    pub records: Vec<FlowRecord>,
    pub status: FlowStatus,
    pub final_objective: f64,
    pub final_grad_norm: f64,
}

impl FlowTrace {
    pub fn converged(&self) -> bool {
        self.status == FlowStatus::Converged
    }

    /// Converged, or stopped at the floating-point floor of the objective.
    pub fn terminated_normally(&self) -> bool {
        self.status != FlowStatus::MaxIterations
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Objective values after each accepted step, preceded by the initial one.
    pub fn accepted_objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.records.iter().filter(|r| r.accepted).map(|r| r.objective))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "eps", "objective", "step", "gradnorm", "accepted"])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                format!("{:e}", r.eps),
                format!("{:.17e}", r.objective),
                format!("{:e}", r.step),
                format!("{:e}", r.grad_norm),
                (r.accepted as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A trial step as seen by an observer of [`minimize_observed`].
pub struct StepEvent<'a> {
    pub iteration: usize,
    /// Interior coordinates before the step.
    pub before: &'a [f64],
    /// Interior coordinates of the trial point.
    pub after: &'a [f64],
    pub accepted: bool,
}

/// Minimizes the configured objective over the interior nodes of `start`.
pub fn minimize(
    p: &dyn Potential,
    start: &DiscretePath,
    cfg: &FlowConfig,
) -> Result<(DiscretePath, FlowTrace)> {
    minimize_observed(p, start, cfg, |_| {})
}

/// [`minimize`] with a callback on every trial step.
pub fn minimize_observed(
    p: &dyn Potential,
    start: &DiscretePath,
    cfg: &FlowConfig,
    mut observe: impl FnMut(&StepEvent<'_>),
) -> Result<(DiscretePath, FlowTrace)> {
    cfg.validate()?;
    if start.dim() != p.dim() {
        return Err(Error::InvalidArgument(format!(
            "path dimension {} does not match potential dimension {}",
            start.dim(),
            p.dim()
        )));
    }
    if start.segments() < 3 {
        return Err(Error::InvalidArgument("minimization needs M >= 3".into()));
    }
    let dim = start.dim();
    let h = start.step();
    let eps = cfg.eps;
    let stiff = eps / h;
    let mut ws = Workspace::new(dim, start.node_count());

    let mut path = start.clone();
    let mut trial = start.clone();
    let mut value = ws.value(p, path.coordinates(), h, eps, cfg.objective);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("initial objective is {value}")));
    }
    let initial_objective = value;

    let n = path.interior().len();
    let mut nonstiff = vec![0.0; n];
    let mut grad_norm = 0.0;
    let mut scratch = vec![0.0; n / dim];
    let mut tau = cfg.initial_step;
    let mut records = Vec::new();
    let mut status = FlowStatus::MaxIterations;
    let mut fresh = false;
    let (first, last) = (path.first().to_vec(), path.last().to_vec());

    for iteration in 0..cfg.max_iterations {
        if !fresh {
            ws.nonstiff_gradient(p, path.coordinates(), h, eps, cfg.objective, &mut nonstiff);
            grad_norm = l2_norm(&full_gradient(path.coordinates(), &nonstiff, dim, stiff), h);
            fresh = true;
        }
        if grad_norm <= cfg.tolerance {
            status = FlowStatus::Converged;
            break;
        }
        if tau < cfg.min_step {
            status = FlowStatus::Stalled;
            break;
        }

        let rhs = trial.interior_mut();
        let x = &path.coordinates()[dim..dim + n];
        for k in 0..n {
            rhs[k] = x[k] - tau * nonstiff[k];
        }
        for i in 0..dim {
            rhs[i] += tau * stiff * first[i];
            rhs[n - dim + i] += tau * stiff * last[i];
        }
        let diag = 1.0 + 2.0 * tau * stiff;
        let off = -tau * stiff;
        for i in 0..dim {
            solve_strided(diag, off, rhs, i, dim, &mut scratch)?;
        }

        let trial_value = ws.value(p, trial.coordinates(), h, eps, cfg.objective);
        let accepted = trial_value.is_finite() && trial_value < value;
        observe(&StepEvent {
            iteration,
            before: path.interior(),
            after: trial.interior(),
            accepted,
        });
        records.push(FlowRecord {
            iteration,
            eps,
            objective: trial_value,
            step: tau,
            grad_norm,
            accepted,
        });
        if accepted {
            std::mem::swap(&mut path, &mut trial);
            value = trial_value;
            fresh = false;
            tau = (tau * cfg.grow).min(cfg.max_step);
        } else {
            tau *= cfg.shrink;
        }
    }
    if !fresh {
        ws.nonstiff_gradient(p, path.coordinates(), h, eps, cfg.objective, &mut nonstiff);
        grad_norm = l2_norm(&full_gradient(path.coordinates(), &nonstiff, dim, stiff), h);
        if grad_norm <= cfg.tolerance {
            status = FlowStatus::Converged;
        }
    }
    let trace = FlowTrace {
        initial_objective,
        records,
        status,
        final_objective: value,
        final_grad_norm: grad_norm,
    };
    Ok((path, trace))
}

fn full_gradient(x: &[f64], nonstiff: &[f64], dim: usize, stiff: f64) -> Vec<f64> {
    nonstiff
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let j = k + dim;
            g + stiff * (2.0 * x[j] - x[j - dim] - x[j + dim])
        })
        .collect()
}

/// Discrete L² norm `sqrt(Σ|g_k|² / h)` of a nodal gradient.
pub fn l2_norm(grad: &[f64], h: f64) -> f64 {
    (grad.iter().map(|g| g * g).sum::<f64>() / h).sqrt()
}

/// Runs [`minimize`] for each ε of a strictly decreasing schedule, warm
/// starting each stage from the previous result. `cfg.eps` is replaced by the
/// schedule entries; the trace concatenates all stages.
pub fn continuation_minimize(
    p: &dyn Potential,
    start: &DiscretePath,
    cfg: &FlowConfig,
    schedule: &[f64],
) -> Result<(DiscretePath, FlowTrace)> {
    if schedule.is_empty() {
        return Err(Error::InvalidArgument("empty eps schedule".into()));
    }
    if !schedule.windows(2).all(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(format!(
            "eps schedule {schedule:?} must be strictly decreasing"
        )));
    }
    let mut path = start.clone();
    let mut combined: Option<FlowTrace> = None;
    for &eps in schedule {
        let stage_cfg = FlowConfig { eps, ..*cfg };
        let (next, trace) = minimize(p, &path, &stage_cfg)?;
        path = next;
        combined = Some(match combined {
            None => trace,
            Some(mut all) => {
                let offset = all.records.len();
                all.records.extend(trace.records.into_iter().map(|mut r| {
                    r.iteration += offset;
                    r
                }));
                all.status = trace.status;
                all.final_objective = trace.final_objective;
                all.final_grad_norm = trace.final_grad_norm;
                all
            }
        });
    }
    Ok((path, combined.expect("schedule is non-empty")))
}
