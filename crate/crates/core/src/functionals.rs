//! Discretized path functionals and their exact discrete gradients.
//!
//! On a uniform mesh `s_k = a + k h`, `k = 0..=M`, the kinetic term uses
//! forward differences and node terms use the composite trapezoid rule:
//!
//! ```text
//! kinetic   = Σ_k  ε/(2h) |x_{k+1} − x_k|²
//! force     = (h/ε) Σ_k w_k ½|∇V(x_k)|²
//! laplacian =  h    Σ_k w_k ΔV(x_k)
//! J_ε = kinetic + force,   I_ε = J_ε − laplacian
//! ```
//!
//! With `ε = 1` on an interval `[−T, T]` the same sums give the truncated
//! ε-free action used for heteroclinic orbits.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::critical_points::{newton_refine, NewtonOptions};
use crate::error::{ensure_finite, Error, Result};
use crate::potential::{Jet, Potential};

/// Uniformly sampled path on `[start, end]` with `M + 1` nodes, endpoints
/// included. Coordinates are stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    start: f64,
    end: f64,
    dim: usize,
    nodes: Vec<f64>,
}

impl DiscretePath {
    pub fn new(start: f64, end: f64, dim: usize, nodes: Vec<f64>) -> Result<Self> {
        if !(start < end) || !start.is_finite() || !end.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "path interval [{start}, {end}] must satisfy start < end"
            )));
        }
        if dim == 0 || !nodes.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not split into points of dimension {dim}",
                nodes.len()
            )));
        }
        if nodes.len() / dim < 3 {
            return Err(Error::InvalidArgument(
                "a path needs at least two segments (three nodes)".into(),
            ));
        }
        ensure_finite(&nodes)?;
        Ok(Self {
            start,
            end,
            dim,
            nodes,
        })
    }

    /// Path constantly equal to `x`.
    pub fn constant(x: &[f64], segments: usize, start: f64, end: f64) -> Result<Self> {
        let nodes = x.iter().copied().cycle().take(x.len() * (segments + 1)).collect();
        Self::new(start, end, x.len(), nodes)
    }

    /// Piecewise-linear path through `waypoints`. With `knots = None` the
    /// waypoints sit at equally spaced times; otherwise `knots` gives their
    /// times as fractions of the interval, strictly increasing from 0 to 1.
    pub fn through_waypoints(
        waypoints: &[Vec<f64>],
        knots: Option<&[f64]>,
        segments: usize,
        start: f64,
        end: f64,
    ) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidArgument("need at least two waypoints".into()));
        }
        let dim = waypoints[0].len();
        if waypoints.iter().any(|w| w.len() != dim) {
            return Err(Error::InvalidArgument("waypoints differ in dimension".into()));
        }
        let knots: Vec<f64> = match knots {
            Some(k) => {
                let ok = k.len() == waypoints.len()
                    && k[0] == 0.0
                    && k[k.len() - 1] == 1.0
                    && k.windows(2).all(|w| w[0] < w[1]);
                if !ok {
                    return Err(Error::InvalidArgument(format!(
                        "knots {k:?} must increase strictly from 0 to 1, one per waypoint"
                    )));
                }
                k.to_vec()
            }
            None => {
                let n = waypoints.len() - 1;
                (0..=n).map(|i| i as f64 / n as f64).collect()
            }
        };
        let mut nodes = Vec::with_capacity(dim * (segments + 1));
        let mut seg = 0;
        for k in 0..=segments {
            let u = k as f64 / segments as f64;
            while seg + 2 < knots.len() && u > knots[seg + 1] {
                seg += 1;
            }
            let t = ((u - knots[seg]) / (knots[seg + 1] - knots[seg])).clamp(0.0, 1.0);
            let (a, b) = (&waypoints[seg], &waypoints[seg + 1]);
            nodes.extend(a.iter().zip(b).map(|(p, q)| p + t * (q - p)));
        }
        // pin endpoints exactly
        nodes[..dim].copy_from_slice(&waypoints[0]);
        let last = waypoints.len() - 1;
        nodes[segments * dim..].copy_from_slice(&waypoints[last]);
        Self::new(start, end, dim, nodes)
    }

    /// Number of segments `M`.
    pub fn segments(&self) -> usize {
        self.nodes.len() / self.dim - 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    /// Mesh width `h = (end − start) / M`.
    pub fn step(&self) -> f64 {
        (self.end - self.start) / self.segments() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.nodes.chunks_exact(self.dim)
    }

    pub fn coordinates(&self) -> &[f64] {
        &self.nodes
    }

    pub fn first(&self) -> &[f64] {
        self.node(0)
    }

    pub fn last(&self) -> &[f64] {
        self.node(self.segments())
    }

    /// Interior coordinates, nodes `1..M`.
    pub fn interior(&self) -> &[f64] {
        &self.nodes[self.dim..self.nodes.len() - self.dim]
    }

    pub(crate) fn interior_mut(&mut self) -> &mut [f64] {
        let n = self.nodes.len();
        &mut self.nodes[self.dim..n - self.dim]
    }

    /// Same nodes in reverse order on the same interval.
    pub fn reversed(&self) -> Self {
        let nodes = self.nodes.chunks_exact(self.dim).rev().flatten().copied().collect();
        Self {
            nodes,
            ..self.clone()
        }
    }

    /// Applies `f` to every node.
    pub fn map_nodes(&self, f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let nodes: Vec<f64> = self.nodes().flat_map(f).collect();
        let dim = nodes.len() / self.node_count();
        Self::new(self.start, self.end, dim, nodes)
    }

    /// The same path viewed on another interval.
    pub fn with_interval(&self, start: f64, end: f64) -> Result<Self> {
        Self::new(start, end, self.dim, self.nodes.clone())
    }

    /// Linear interpolation at time `s`, clamped to the interval.
    pub fn sample(&self, s: f64) -> Vec<f64> {
        let m = self.segments();
        let u = ((s - self.start) / self.step()).clamp(0.0, m as f64);
        let k = (u.floor() as usize).min(m - 1);
        let t = u - k as f64;
        let (a, b) = (self.node(k), self.node(k + 1));
        a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect()
    }

    /// Linear resampling onto `segments` uniform segments of the same interval.
    pub fn resampled(&self, segments: usize) -> Result<Self> {
        let h = (self.end - self.start) / segments as f64;
        let mut nodes: Vec<f64> = (0..=segments)
            .flat_map(|k| self.sample(self.start + k as f64 * h))
            .collect();
        let d = self.dim;
        nodes[..d].copy_from_slice(self.first());
        nodes[segments * d..].copy_from_slice(self.last());
        Self::new(self.start, self.end, d, nodes)
    }

    /// Writes `s, x1, .., xN` with one row per node.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["s".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (k, x) in self.nodes().enumerate() {
            let mut row = vec![format!("{:.17e}", self.time(k))];
            row.extend(x.iter().map(|v| format!("{v:.17e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv). The interval is
    /// taken from the first and last `s` values.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let dim = r.headers()?.len().saturating_sub(1);
        let mut times = Vec::new();
        let mut nodes = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut fields = rec.iter().map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad number {f:?}: {e}")))
            });
            times.push(fields.next().ok_or_else(|| Error::InvalidArgument("empty row".into()))??);
            for v in fields {
                nodes.push(v?);
            }
        }
        let (start, end) = match (times.first(), times.last()) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return Err(Error::InvalidArgument("empty path file".into())),
        };
        Self::new(start, end, dim, nodes)
    }
}

/// Which functional to evaluate or minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// `I_ε = J_ε − ∫ΔV`.
    #[serde(rename = "I")]
    OnsagerMachlup,
    /// `J_ε`, the functional without the Laplacian term.
    #[serde(rename = "J")]
    LaplacianFree,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "i" => Ok(Self::OnsagerMachlup),
            "J" | "j" => Ok(Self::LaplacianFree),
            other => Err(Error::InvalidArgument(format!("unknown objective {other:?}, expected I or J"))),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::OnsagerMachlup => "I",
            Self::LaplacianFree => "J",
        })
    }
}

/// Terms of the discrete functional on one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub eps: f64,
    /// `∫ ε/2 |ẋ|²`.
    pub kinetic: f64,
    /// `∫ 1/(2ε) |∇V|²`.
    pub force: f64,
    /// `∫ ΔV`.
    pub laplacian: f64,
    pub j_eps: f64,
    pub i_eps: f64,
}

impl FunctionalReport {
    pub fn objective(&self, objective: Objective) -> f64 {
        match objective {
            Objective::OnsagerMachlup => self.i_eps,
            Objective::LaplacianFree => self.j_eps,
        }
    }
}

/// Path potential `G(x; ε) = ½|∇V(x)|² − ε ΔV(x)`.
pub fn eval_g(p: &dyn Potential, x: &[f64], eps: f64) -> Result<f64> {
    crate::potential::check_point(p, x)?;
    check_eps(eps)?;
    let mut g = vec![0.0; p.dim()];
    p.gradient(x, &mut g);
    Ok(0.5 * g.iter().map(|v| v * v).sum::<f64>() - eps * p.laplacian(x))
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")))
    }
}

fn check_path(p: &dyn Potential, path: &DiscretePath) -> Result<()> {
    if path.dim() != p.dim() {
        return Err(Error::InvalidArgument(format!(
            "path dimension {} does not match potential dimension {}",
            path.dim(),
            p.dim()
        )));
    }
    Ok(())
}

/// Evaluates all terms of `I_ε` and `J_ε` on `path`.
pub fn eval_i(p: &dyn Potential, path: &DiscretePath, eps: f64) -> Result<FunctionalReport> {
    check_eps(eps)?;
    check_path(p, path)?;
    let mut ws = Workspace::new(p.dim(), path.node_count());
    Ok(ws.report(p, path.coordinates(), path.step(), eps))
}

/// Value of the selected objective.
pub fn eval_objective(
    p: &dyn Potential,
    path: &DiscretePath,
    eps: f64,
    objective: Objective,
) -> Result<f64> {
    Ok(eval_i(p, path, eps)?.objective(objective))
}

/// Exact gradient of the discrete `I_ε` with respect to the interior nodes,
/// laid out like [`DiscretePath::interior`].
pub fn grad_i(p: &dyn Potential, path: &DiscretePath, eps: f64) -> Result<Vec<f64>> {
    objective_gradient(p, path, eps, Objective::OnsagerMachlup)
}

/// Exact gradient of the selected discrete objective with respect to the
/// interior nodes.
pub fn objective_gradient(
    p: &dyn Potential,
    path: &DiscretePath,
    eps: f64,
    objective: Objective,
) -> Result<Vec<f64>> {
    check_eps(eps)?;
    check_path(p, path)?;
    let mut ws = Workspace::new(p.dim(), path.node_count());
    let mut grad = vec![0.0; path.interior().len()];
    ws.value_and_gradient(p, path.coordinates(), path.step(), eps, objective, &mut grad);
    Ok(grad)
}

/// The truncated ε-free action of a path, with the distance of each endpoint
/// from the critical point Newton finds next to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitAction {
    pub value: f64,
    pub start_gap: f64,
    pub end_gap: f64,
    /// Set when an endpoint is farther than `1e-4` from a critical point.
    pub warning: bool,
}

/// Endpoint distance above which [`eval_j_infinite`] raises its warning.
pub const ENDPOINT_TOLERANCE: f64 = 1e-4;

/// `Σ ½(|ẋ|² + |∇V|²)` over the path, read as the action of an orbit on the
/// whole line truncated to the path's interval.
pub fn eval_j_infinite(p: &dyn Potential, path: &DiscretePath) -> Result<OrbitAction> {
    check_path(p, path)?;
    let mut ws = Workspace::new(p.dim(), path.node_count());
    let value = ws.report(p, path.coordinates(), path.step(), 1.0).j_eps;
    let gap = |x: &[f64]| {
        newton_refine(p, x, &NewtonOptions::default())
            .map(|c| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .unwrap_or(f64::INFINITY)
    };
    let start_gap = gap(path.first());
    let end_gap = gap(path.last());
    Ok(OrbitAction {
        value,
        start_gap,
        end_gap,
        warning: start_gap > ENDPOINT_TOLERANCE || end_gap > ENDPOINT_TOLERANCE,
    })
}

/// Sum of `c` pairing index `k` with `n − 1 − k`, so a reversed sequence
/// gives a bitwise identical result.
fn symmetric_sum(c: &[f64]) -> f64 {
    let n = c.len();
    let mut s = 0.0;
    for k in 0..n / 2 {
        s += c[k] + c[n - 1 - k];
    }
    if n % 2 == 1 {
        s += c[n / 2];
    }
    s
}

/// Reusable buffers for repeated evaluations on paths of a fixed size.
pub(crate) struct Workspace {
    jet: Jet,
    hg: Vec<f64>,
    segment: Vec<f64>,
    half_grad_sq: Vec<f64>,
    lap: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(dim: usize, nodes: usize) -> Self {
        Self {
            jet: Jet::new(dim),
            hg: vec![0.0; dim],
            segment: vec![0.0; nodes - 1],
            half_grad_sq: vec![0.0; nodes],
            lap: vec![0.0; nodes],
        }
    }

    fn kinetic(&mut self, x: &[f64], dim: usize, h: f64, eps: f64) -> f64 {
        for (k, s) in self.segment.iter_mut().enumerate() {
            let a = &x[k * dim..(k + 1) * dim];
            let b = &x[(k + 1) * dim..(k + 2) * dim];
            *s = a.iter().zip(b).map(|(u, v)| (v - u) * (v - u)).sum();
        }
        eps / (2.0 * h) * symmetric_sum(&self.segment)
    }

    fn trapezoid(values: &mut [f64]) -> f64 {
        let m = values.len() - 1;
        values[0] *= 0.5;
        values[m] *= 0.5;
        symmetric_sum(values)
    }

    /// Full report; node terms need only `∇V` and `ΔV`.
    pub(crate) fn report(&mut self, p: &dyn Potential, x: &[f64], h: f64, eps: f64) -> FunctionalReport {
        let dim = self.jet.dim();
        let kinetic = self.kinetic(x, dim, h, eps);
        for (k, xk) in x.chunks_exact(dim).enumerate() {
            p.gradient(xk, &mut self.jet.gradient);
            self.half_grad_sq[k] = 0.5 * self.jet.gradient_norm_sq();
            self.lap[k] = p.laplacian(xk);
        }
        let force = h / eps * Self::trapezoid(&mut self.half_grad_sq);
        let laplacian = h * Self::trapezoid(&mut self.lap);
        let j_eps = kinetic + force;
        FunctionalReport {
            eps,
            kinetic,
            force,
            laplacian,
            j_eps,
            i_eps: j_eps - laplacian,
        }
    }

    pub(crate) fn value(
        &mut self,
        p: &dyn Potential,
        x: &[f64],
        h: f64,
        eps: f64,
        objective: Objective,
    ) -> f64 {
        self.report(p, x, h, eps).objective(objective)
    }

    /// Objective value plus its gradient over interior nodes (written to
    /// `grad`, length `(M − 1) N`).
    pub(crate) fn value_and_gradient(
        &mut self,
        p: &dyn Potential,
        x: &[f64],
        h: f64,
        eps: f64,
        objective: Objective,
        grad: &mut [f64],
    ) -> f64 {
        let value = self.value(p, x, h, eps, objective);
        self.nonstiff_gradient(p, x, h, eps, objective, grad);
        let dim = self.jet.dim();
        let c = eps / h;
        let interior = x.len() / dim - 2;
        for k in 0..interior {
            for i in 0..dim {
                let j = (k + 1) * dim + i;
                grad[k * dim + i] += c * (2.0 * x[j] - x[j - dim] - x[j + dim]);
            }
        }
        value
    }

    /// `(h/ε) ∇_x G` at each interior node: the potential part of the gradient.
    pub(crate) fn nonstiff_gradient(
        &mut self,
        p: &dyn Potential,
        x: &[f64],
        h: f64,
        eps: f64,
        objective: Objective,
        out: &mut [f64],
    ) {
        let dim = self.jet.dim();
        let c = h / eps;
        let with_laplacian = objective == Objective::OnsagerMachlup;
        for (k, o) in out.chunks_exact_mut(dim).enumerate() {
            let xk = &x[(k + 1) * dim..(k + 2) * dim];
            if with_laplacian {
                p.jet(xk, &mut self.jet);
            } else {
                p.gradient(xk, &mut self.jet.gradient);
                p.hessian(xk, &mut self.jet.hessian);
            }
            self.jet.hessian_times_gradient(&mut self.hg);
            for i in 0..dim {
                let lap_term = if with_laplacian {
                    eps * self.jet.laplacian_gradient[i]
                } else {
                    0.0
                };
                o[i] = c * (self.hg[i] - lap_term);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{DoubleWell, Quadratic, TripleWell};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn path_potential_examples() {
        let tw = TripleWell;
        assert!((eval_g(&tw, &[0.0, 0.0], 1e-3).unwrap() + 0.004).abs() < 1e-15);
        let s = TripleWell::saddle_low();
        for eps in [1e-3, 0.1, 1.0] {
            assert!(eval_g(&tw, &s, eps).unwrap().abs() < 1e-12);
        }
        let q = Quadratic::new(2);
        assert!((eval_g(&q, &[1.0, 0.0], 0.1).unwrap() - 0.3).abs() < 1e-15);
        assert!(eval_g(&q, &[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn constant_paths() {
        let tw = TripleWell;
        for m in [2, 10, 1000] {
            let path = DiscretePath::constant(&[0.0, 0.0], m, 0.0, 1.0).unwrap();
            let r = eval_i(&tw, &path, 1e-3).unwrap();
            assert_eq!(r.j_eps, 0.0);
            assert!((r.laplacian - 4.0).abs() < 1e-12);
            assert!((r.i_eps + 4.0).abs() < 1e-12);
        }
        let path = DiscretePath::constant(&TripleWell::saddle_low(), 100, 0.0, 1.0).unwrap();
        let r = eval_i(&tw, &path, 1e-3).unwrap();
        assert!(r.i_eps.abs() < 1e-10 && r.j_eps.abs() < 1e-20);
    }

    #[test]
    fn decomposition_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nodes: Vec<f64> = (0..2 * 51).map(|_| rng.gen_range(-0.5..1.5)).collect();
        let path = DiscretePath::new(0.0, 1.0, 2, nodes).unwrap();
        let r = eval_i(&TripleWell, &path, 0.01).unwrap();
        assert_eq!(r.i_eps, r.j_eps - r.laplacian);
        assert_eq!(r.j_eps, r.kinetic + r.force);
    }

    #[test]
    fn reversal_leaves_both_functionals_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for m in [2, 3, 40, 41] {
            let nodes: Vec<f64> = (0..2 * (m + 1)).map(|_| rng.gen_range(-0.5..1.5)).collect();
            let path = DiscretePath::new(0.0, 1.0, 2, nodes).unwrap();
            let a = eval_i(&TripleWell, &path, 0.05).unwrap();
            let b = eval_i(&TripleWell, &path.reversed(), 0.05).unwrap();
            assert_eq!(a.j_eps, b.j_eps);
            assert_eq!(a.i_eps, b.i_eps);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nodes: Vec<f64> = (0..2 * 51).map(|_| rng.gen_range(-0.2..1.2)).collect();
        let path = DiscretePath::new(0.0, 1.0, 2, nodes).unwrap();
        for objective in [Objective::OnsagerMachlup, Objective::LaplacianFree] {
            let eps = 0.01;
            let g = objective_gradient(&TripleWell, &path, eps, objective).unwrap();
            let fd = fd_gradient(&TripleWell, &path, eps, objective);
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err / scale <= 1e-6, "{objective}: {err} vs {scale}");
        }
    }

    fn fd_gradient(p: &dyn Potential, path: &DiscretePath, eps: f64, objective: Objective) -> Vec<f64> {
        let n = path.interior().len();
        (0..n)
            .map(|i| {
                let h = 1e-6;
                let mut plus = path.clone();
                plus.interior_mut()[i] += h;
                let mut minus = path.clone();
                minus.interior_mut()[i] -= h;
                (eval_objective(p, &plus, eps, objective).unwrap()
                    - eval_objective(p, &minus, eps, objective).unwrap())
                    / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_vanishes_on_constant_critical_paths() {
        // ∇ΔV vanishes at the saddles by the swap symmetry only along the
        // diagonal, so check the J gradient there and the full gradient at M0
        // against differences.
        let path = DiscretePath::constant(&TripleWell::saddle_low(), 20, 0.0, 1.0).unwrap();
        let g = objective_gradient(&TripleWell, &path, 1e-3, Objective::LaplacianFree).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-14));
        let path = DiscretePath::constant(&[0.0, 0.0], 20, 0.0, 1.0).unwrap();
        let g = grad_i(&TripleWell, &path, 1e-3).unwrap();
        let fd = fd_gradient(&TripleWell, &path, 1e-3, Objective::OnsagerMachlup);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn quadratic_segment_gradient_is_analytic() {
        // V = |x|²/2: D²V∇V = x and ∇ΔV = 0, so the gradient at interior node k
        // is (ε/h)(2x_k − x_{k−1} − x_{k+1}) + (h/ε) x_k.
        let q = Quadratic::new(2);
        let path = DiscretePath::through_waypoints(&[vec![0.0, 0.0], vec![1.0, 2.0]], None, 10, 0.0, 1.0)
            .unwrap();
        let (eps, h) = (0.1, 0.1);
        let g = grad_i(&q, &path, eps).unwrap();
        for k in 1..10 {
            for i in 0..2 {
                let x = |j: usize| path.node(j)[i];
                let expected = eps / h * (2.0 * x(k) - x(k - 1) - x(k + 1)) + h / eps * x(k);
                assert!((g[(k - 1) * 2 + i] - expected).abs() < 1e-12);
            }
        }
    }

    /// Composite Simpson on `n` (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn linear_path_matches_quadrature() {
        let tw = TripleWell;
        let eps = 0.1;
        let path = DiscretePath::through_waypoints(&[vec![0.0, 0.0], vec![1.0, 0.0]], None, 2000, 0.0, 1.0)
            .unwrap();
        let r = eval_i(&tw, &path, eps).unwrap();
        // x(s) = (s, 0), |ẋ| = 1.
        let oracle = eps / 2.0
            + simpson(
                |s| {
                    let x = [s, 0.0];
                    let mut g = [0.0; 2];
                    tw.gradient(&x, &mut g);
                    (0.5 * (g[0] * g[0] + g[1] * g[1]) - eps * tw.laplacian(&x)) / eps
                },
                0.0,
                1.0,
                1_000_000,
            );
        assert!(((r.i_eps - oracle) / oracle).abs() <= 1e-4, "{} vs {oracle}", r.i_eps);
    }

    #[test]
    fn double_well_crossing_action() {
        // Oracle: ∫_{-1}^{1} |V'(x)| dx by Simpson.
        let oracle = simpson(|x: f64| (x * x * x - x).abs(), -1.0, 0.0, 100_000)
            + simpson(|x: f64| (x * x * x - x).abs(), 0.0, 1.0, 100_000);
        assert!((oracle - 0.5).abs() < 1e-9);

        // Two gradient orbits glued at the maximum: p(t) = (1 + e^{−2t})^{−1/2}
        // solves ẋ = x − x³.
        let orbit = |t: f64| 1.0 / (1.0 + (-2.0 * t).exp()).sqrt();
        let (shift, tail) = (9.0, 6.0);
        let t_max = shift + tail;
        let m = 60_000;
        let nodes: Vec<f64> = (0..=m)
            .map(|k| {
                let t = -t_max + 2.0 * t_max * k as f64 / m as f64;
                orbit(t - shift) - orbit(-t - shift)
            })
            .collect();
        let path = DiscretePath::new(-t_max, t_max, 1, nodes).unwrap();
        let j = eval_j_infinite(&DoubleWell, &path).unwrap();
        assert!((j.value - oracle).abs() <= 1e-6, "{}", j.value);
        assert!(!j.warning);
    }

    #[test]
    fn j_infinite_flags_endpoints_away_from_critical_points() {
        let path = DiscretePath::through_waypoints(&[vec![0.0, 0.0], vec![0.3, 0.3]], None, 10, -1.0, 1.0)
            .unwrap();
        let j = eval_j_infinite(&TripleWell, &path).unwrap();
        assert!(j.warning);
        let c = DiscretePath::constant(&[1.0, 0.0], 10, -1.0, 1.0).unwrap();
        let j = eval_j_infinite(&TripleWell, &c).unwrap();
        assert_eq!(j.value, 0.0);
        assert!(!j.warning);
    }

    #[test]
    fn waypoints_with_knots() {
        let w = [vec![0.0], vec![1.0], vec![3.0]];
        let path = DiscretePath::through_waypoints(&w, Some(&[0.0, 0.25, 1.0]), 4, 0.0, 1.0).unwrap();
        let xs: Vec<f64> = path.nodes().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 1.0 + 2.0 / 3.0, 1.0 + 4.0 / 3.0, 3.0]);
        assert!(DiscretePath::through_waypoints(&w, Some(&[0.0, 1.0, 1.0]), 4, 0.0, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let path = DiscretePath::through_waypoints(&[vec![0.0, 0.1], vec![1.0, -0.3]], None, 7, -2.0, 3.0)
            .unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("s,x1,x2\n"));
        let back = DiscretePath::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, path);
    }

    #[test]
    fn invalid_paths_are_rejected() {
        assert!(DiscretePath::new(1.0, 0.0, 1, vec![0.0; 3]).is_err());
        assert!(DiscretePath::new(0.0, 1.0, 1, vec![0.0; 2]).is_err());
        assert!(DiscretePath::new(0.0, 1.0, 2, vec![0.0; 5]).is_err());
        assert!(DiscretePath::new(0.0, 1.0, 1, vec![0.0, f64::NAN, 1.0]).is_err());
    }
}
