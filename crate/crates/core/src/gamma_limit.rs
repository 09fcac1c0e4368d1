//! The zero-noise limit functional on piecewise-constant paths through
//! critical points:
//!
//! ```text
//! I₀(x) = Σ_jumps Φ(x(τ⁻), x(τ⁺)) − ∫₀¹ ΔV(x(s)) ds
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{DiscretePath, FunctionalReport};
use crate::heteroclinics::TransitionGraph;

/// Spacing used for jump times of points that receive no dwell time.
pub const DEGENERATE_DWELL: f64 = 1e-6;

/// Distance within which a node counts as sitting on a support point.
pub const SUPPORT_RADIUS: f64 = 0.05;

/// Step function on `[0, 1]` with values in a critical-point set, given by
/// indices into the transition graph's points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BVStepPath {
    pub jump_times: Vec<f64>,
    pub values: Vec<usize>,
}

impl BVStepPath {
    pub fn new(jump_times: Vec<f64>, values: Vec<usize>) -> Result<Self> {
        if values.len() != jump_times.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} values need {} jump times, got {}",
                values.len(),
                values.len().saturating_sub(1),
                jump_times.len()
            )));
        }
        let mut previous = 0.0;
        for &t in &jump_times {
            if !(t > previous && t < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "jump times {jump_times:?} must increase strictly inside (0, 1)"
                )));
            }
            previous = t;
        }
        if values.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!(
                "consecutive values of {values:?} must differ"
            )));
        }
        Ok(Self { jump_times, values })
    }

    /// Constant path without jumps.
    pub fn constant(value: usize) -> Self {
        Self {
            jump_times: Vec::new(),
            values: vec![value],
        }
    }

    /// Time spent at each value.
    pub fn dwell_times(&self) -> Vec<f64> {
        let mut bounds = vec![0.0];
        bounds.extend_from_slice(&self.jump_times);
        bounds.push(1.0);
        bounds.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Builds a path from its visit sequence and dwell times, which must be
    /// positive and sum to one.
    pub fn from_dwell_times(values: Vec<usize>, dwell: &[f64]) -> Result<Self> {
        if dwell.len() != values.len() || dwell.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidArgument("need one positive dwell time per value".into()));
        }
        let mut t = 0.0;
        let jump_times = dwell[..dwell.len() - 1]
            .iter()
            .map(|d| {
                t += d;
                t
            })
            .collect();
        Self::new(jump_times, values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    /// `Σ Φ` over the jumps.
    pub jump_cost: f64,
    /// `∫ ΔV`, exact for step functions.
    pub laplacian_integral: f64,
    /// `jump_cost − laplacian_integral`; infinite when a jump has no finite `Φ`.
    #[serde(rename = "I0")]
    pub i0: f64,
    /// Jumps whose `Φ` is infinite.
    pub missing: Vec<(usize, usize)>,
}

/// Evaluates the limit functional on `path` with `Φ` from `graph`.
pub fn eval_i0(graph: &TransitionGraph, path: &BVStepPath) -> Result<GammaReport> {
    if let Some(v) = path.values.iter().find(|v| **v >= graph.len()) {
        return Err(Error::InvalidArgument(format!("value {v} is not a node of the graph")));
    }
    let mut jump_cost = 0.0;
    let mut missing = Vec::new();
    for w in path.values.windows(2) {
        let phi = graph.phi(w[0], w[1]);
        if !phi.is_finite() {
            missing.push((w[0], w[1]));
        }
        jump_cost += phi;
    }
    let points = graph.points.points();
    let laplacian_integral = path
        .values
        .iter()
        .zip(path.dwell_times())
        .map(|(v, d)| d * points[*v].laplacian)
        .sum::<f64>();
    Ok(GammaReport {
        jump_cost,
        laplacian_integral,
        i0: jump_cost - laplacian_integral,
        missing,
    })
}

/// Jump times minimizing the limit functional for a fixed visit sequence: all
/// time goes to the visited points of largest `ΔV`, split equally between
/// them; the rest keep only the degenerate spacing.
pub fn optimize_support(graph: &TransitionGraph, sequence: &[usize]) -> Result<BVStepPath> {
    if sequence.is_empty() {
        return Err(Error::InvalidArgument("empty visit sequence".into()));
    }
    if let Some(v) = sequence.iter().find(|v| **v >= graph.len()) {
        return Err(Error::InvalidArgument(format!("value {v} is not a node of the graph")));
    }
    let lap: Vec<f64> = sequence.iter().map(|v| graph.points.points()[*v].laplacian).collect();
    let best = lap.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let top: Vec<bool> = lap.iter().map(|l| *l >= best - 1e-9).collect();
    let n_top = top.iter().filter(|t| **t).count();
    let rest = (sequence.len() - n_top) as f64 * DEGENERATE_DWELL;
    let share = (1.0 - rest) / n_top as f64;
    let dwell: Vec<f64> = top.iter().map(|t| if *t { share } else { DEGENERATE_DWELL }).collect();
    BVStepPath::from_dwell_times(sequence.to_vec(), &dwell)
}

/// Points held for more than the degenerate spacing.
pub fn support(path: &BVStepPath) -> Vec<usize> {
    let mut s: Vec<usize> = path
        .values
        .iter()
        .zip(path.dwell_times())
        .filter(|(_, d)| *d > 10.0 * DEGENERATE_DWELL)
        .map(|(v, _)| *v)
        .collect();
    s.sort_unstable();
    s.dedup();
    s
}

/// Fraction of nodes of `path` within `radius` of any of `centers`.
pub fn fraction_near(path: &DiscretePath, centers: &[Vec<f64>], radius: f64) -> f64 {
    let near = path
        .nodes()
        .filter(|x| {
            centers.iter().any(|c| {
                c.iter().zip(*x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= radius
            })
        })
        .count();
    near as f64 / path.node_count() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsComparison {
    pub eps: f64,
    pub i_eps: f64,
    #[serde(rename = "I0")]
    pub i0: f64,
    /// `|I_ε − I₀|`.
    pub discrepancy: f64,
    /// Fraction of nodes within [`SUPPORT_RADIUS`] of the predicted support.
    pub support_score: f64,
    pub support: Vec<usize>,
}

/// Compares a minimizer at finite `ε` with the predicted limit path.
pub fn compare_with_eps(
    graph: &TransitionGraph,
    path: &DiscretePath,
    report: &FunctionalReport,
    predicted: &BVStepPath,
    limit: &GammaReport,
) -> EpsComparison {
    let support = support(predicted);
    let centers: Vec<Vec<f64>> = support
        .iter()
        .map(|v| graph.points.points()[*v].location.clone())
        .collect();
    EpsComparison {
        eps: report.eps,
        i_eps: report.i_eps,
        i0: limit.i0,
        discrepancy: (report.i_eps - limit.i0).abs(),
        support_score: fraction_near(path, &centers, SUPPORT_RADIUS),
        support,
    }
}
