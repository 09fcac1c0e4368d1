//! Heteroclinic orbits between critical points and the transition graph
//! built from them.
//!
//! Gradient orbits are shot from saddles along unstable eigenvectors.
//! Connections that are not gradient orbits are found by minimizing the
//! truncated action on `[−T, T]` with the path optimizer at `ε = 1`.

use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critical_points::{CriticalPoint, CriticalPointSet, SearchBox};
use crate::error::{ConvergenceDiagnostics, Error, Result};
use crate::functionals::{eval_j_infinite, objective_gradient, DiscretePath, Objective};
use crate::ode::{integrate, OdeOptions};
use crate::optimizer::{minimize, FlowConfig};
use crate::potential::{norm, Potential};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrbitKind {
    /// `ẋ = −∇V`.
    GradientForward,
    /// `ẋ = +∇V`.
    GradientBackward,
    Hamiltonian,
}

impl OrbitKind {
    pub fn reversed(self) -> Self {
        match self {
            Self::GradientForward => Self::GradientBackward,
            Self::GradientBackward => Self::GradientForward,
            Self::Hamiltonian => Self::Hamiltonian,
        }
    }

    pub fn is_gradient(self) -> bool {
        self != Self::Hamiltonian
    }
}

impl std::fmt::Display for OrbitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::GradientForward => "gradient-forward",
            Self::GradientBackward => "gradient-backward",
            Self::Hamiltonian => "hamiltonian",
        })
    }
}

/// Pointwise residuals of a discrete orbit, evaluated on segment midpoints
/// with `ẋ ≈ Δx/h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitResiduals {
    /// `max |½|ẋ|² − ½|∇V|²|`.
    pub energy: f64,
    /// `max ||ẋ| − |∇V||`.
    pub zero_energy: f64,
    /// `min over ± of max |ẋ ∓ ∇V|`.
    pub gradient: f64,
    /// Kind of gradient flow that attains `gradient`.
    pub gradient_kind: OrbitKind,
    /// `max |ẍ − D²V ∇V|` over interior nodes.
    pub euler_lagrange: f64,
}

pub fn orbit_residuals(p: &dyn Potential, path: &DiscretePath) -> Result<OrbitResiduals> {
    let d = path.dim();
    let h = path.step();
    let mut grad = vec![0.0; d];
    let mut mid = vec![0.0; d];
    let mut vel = vec![0.0; d];
    let (mut energy, mut zero_energy, mut plus, mut minus) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..path.segments() {
        let (a, b) = (path.node(k), path.node(k + 1));
        for i in 0..d {
            mid[i] = 0.5 * (a[i] + b[i]);
            vel[i] = (b[i] - a[i]) / h;
        }
        p.gradient(&mid, &mut grad);
        let (v, g) = (norm(&vel), norm(&grad));
        energy = energy.max((0.5 * v * v - 0.5 * g * g).abs());
        zero_energy = zero_energy.max((v - g).abs());
        let dist = |s: f64| norm(&vel.iter().zip(&grad).map(|(v, g)| v - s * g).collect::<Vec<_>>());
        plus = plus.max(dist(1.0));
        minus = minus.max(dist(-1.0));
    }
    let g = objective_gradient(p, path, 1.0, Objective::LaplacianFree)?;
    let euler_lagrange = g
        .chunks_exact(d)
        .map(|c| norm(c) / h)
        .fold(0.0f64, f64::max);
    let (gradient, gradient_kind) = if minus <= plus {
        (minus, OrbitKind::GradientForward)
    } else {
        (plus, OrbitKind::GradientBackward)
    };
    Ok(OrbitResiduals {
        energy,
        zero_energy,
        gradient,
        gradient_kind,
        euler_lagrange,
    })
}

/// A computed connection between two critical points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeteroclinicOrbit {
    pub source: CriticalPoint,
    pub target: CriticalPoint,
    /// Time-uniform samples on `[−T, T]`.
    #[serde(skip)]
    pub path: DiscretePath,
    pub kind: OrbitKind,
    /// Truncated action `J` of the path.
    pub action: f64,
    pub residuals: OrbitResiduals,
}

impl HeteroclinicOrbit {
    fn assemble(
        p: &dyn Potential,
        source: CriticalPoint,
        target: CriticalPoint,
        path: DiscretePath,
        kind: OrbitKind,
    ) -> Result<Self> {
        let action = eval_j_infinite(p, &path)?.value;
        let residuals = orbit_residuals(p, &path)?;
        Ok(Self {
            source,
            target,
            path,
            kind,
            action,
            residuals,
        })
    }

    /// The trivial orbit resting at `cp` on `[−half_width, half_width]`.
    pub fn constant(p: &dyn Potential, cp: &CriticalPoint, half_width: f64, segments: usize) -> Result<Self> {
        let path = DiscretePath::constant(&cp.location, segments, -half_width, half_width)?;
        Self::assemble(p, cp.clone(), cp.clone(), path, OrbitKind::GradientForward)
    }

    /// The same orbit traversed backwards in time.
    pub fn reversed(&self) -> Self {
        let (gradient_kind, kind) = (self.residuals.gradient_kind.reversed(), self.kind.reversed());
        Self {
            source: self.target.clone(),
            target: self.source.clone(),
            path: self.path.reversed(),
            kind,
            action: self.action,
            residuals: OrbitResiduals {
                gradient_kind,
                ..self.residuals
            },
        }
    }

    /// Half width `T` of the time interval.
    pub fn half_width(&self) -> f64 {
        0.5 * (self.path.end() - self.path.start())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingOptions {
    /// Initial displacement from the saddle along the eigenvector.
    pub offset: f64,
    /// Integration stops within this distance of another critical point.
    pub capture_radius: f64,
    /// Maximal time step of the resampled path.
    pub sample_step: f64,
    pub max_arclength: f64,
    pub max_time: f64,
    /// Trajectories leaving this box fail; `None` disables the check.
    pub bounds: Option<SearchBox>,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            offset: 1e-6,
            capture_radius: 1e-6,
            sample_step: 0.005,
            max_arclength: 100.0,
            max_time: 1e4,
            bounds: None,
        }
    }
}

/// Follows `ẋ = −∇V` from `from.location + offset · sign · direction` until
/// it comes within the capture radius of another point of `cps`.
pub fn gradient_connection(
    p: &dyn Potential,
    from: &CriticalPoint,
    direction: &[f64],
    sign: f64,
    cps: &CriticalPointSet,
    opts: &ShootingOptions,
) -> Result<HeteroclinicOrbit> {
    if from.index == 0 {
        return Err(Error::InvalidArgument("gradient orbits start at a saddle (index >= 1)".into()));
    }
    if direction.len() != p.dim() || (norm(direction) - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument("direction must be a unit vector".into()));
    }
    let unstable = from
        .eigenvalues
        .iter()
        .zip(&from.eigenvectors)
        .any(|(l, v)| *l < 0.0 && v.iter().zip(direction).map(|(a, b)| a * b).sum::<f64>().abs() > 1.0 - 1e-8);
    if !unstable {
        return Err(Error::InvalidArgument(
            "direction is not an eigenvector of a negative Hessian eigenvalue".into(),
        ));
    }
    if sign != 1.0 && sign != -1.0 {
        return Err(Error::InvalidArgument(format!("sign must be +1 or -1, got {sign}")));
    }
    let source = cps.nearest(&from.location).0;
    let x0: Vec<f64> = from
        .location
        .iter()
        .zip(direction)
        .map(|(x, v)| x + opts.offset * sign * v)
        .collect();

    let mut arclength = 0.0;
    let mut previous = x0.clone();
    let mut target = None;
    let traj = integrate(
        |x, f| {
            p.gradient(x, f);
            f.iter_mut().for_each(|v| *v = -*v);
        },
        &x0,
        opts.max_time,
        &OdeOptions::default(),
        |t, x| {
            arclength += previous.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            previous.copy_from_slice(x);
            if let Some(b) = &opts.bounds {
                if !b.contains(x) {
                    return ControlFlow::Break(Err(Error::Escaped {
                        time: t,
                        position: x.to_vec(),
                    }));
                }
            }
            if arclength > opts.max_arclength {
                return ControlFlow::Break(Err(Error::ArclengthExceeded {
                    limit: opts.max_arclength,
                }));
            }
            match cps.find(x, opts.capture_radius) {
                Some(i) if i != source => {
                    target = Some(i);
                    ControlFlow::Break(Ok(()))
                }
                _ => ControlFlow::Continue(()),
            }
        },
    )?;
    let target = target.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "trajectory from {:?} reached no critical point by t = {}",
            from.location, opts.max_time
        ))
    })?;

    let duration = traj.end_time();
    let segments = ((duration / opts.sample_step).ceil() as usize).max(3);
    let h = duration / segments as f64;
    let nodes: Vec<f64> = (0..=segments).flat_map(|k| traj.sample(k as f64 * h)).collect();
    let path = DiscretePath::new(-0.5 * duration, 0.5 * duration, p.dim(), nodes)?;
    HeteroclinicOrbit::assemble(
        p,
        from.clone(),
        cps.points()[target].clone(),
        path,
        OrbitKind::GradientForward,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectionOptions {
    pub flow: FlowConfig,
    pub euler_lagrange_tolerance: f64,
    pub energy_tolerance: f64,
    /// A connection whose gradient residual is below this is reported as a
    /// gradient orbit.
    pub gradient_tolerance: f64,
    /// Interval doubling stops when `J` changes by less than this.
    pub action_tolerance: f64,
    pub initial_half_width: f64,
    /// Time step kept fixed while the interval doubles.
    pub node_spacing: f64,
    pub max_doublings: usize,
}

impl Default for ConnectionOptions {
    fn default() -> Self {
        Self {
            flow: FlowConfig::new(Objective::LaplacianFree, 1.0),
            euler_lagrange_tolerance: 1e-2,
            energy_tolerance: 1e-3,
            gradient_tolerance: 1e-3,
            action_tolerance: 1e-4,
            initial_half_width: 10.0,
            node_spacing: 0.01,
            max_doublings: 4,
        }
    }
}

/// Minimizes the truncated action over paths from `a` to `b` on the interval
/// of `start` and validates the result as a solution of `ẍ = D²V ∇V` with zero
/// energy.
pub fn hamiltonian_connection(
    p: &dyn Potential,
    a: &CriticalPoint,
    b: &CriticalPoint,
    start: &DiscretePath,
    opts: &ConnectionOptions,
) -> Result<HeteroclinicOrbit> {
    if a.distance_to(&b.location) <= 1e-12 {
        return Err(Error::InvalidArgument("connection endpoints coincide".into()));
    }
    if a.distance_to(start.first()) > 1e-12 || b.distance_to(start.last()) > 1e-12 {
        return Err(Error::InvalidArgument("start path must run from a to b".into()));
    }
    let cfg = FlowConfig {
        objective: Objective::LaplacianFree,
        eps: 1.0,
        ..opts.flow
    };
    let (path, trace) = minimize(p, start, &cfg)?;
    let mut orbit = HeteroclinicOrbit::assemble(p, a.clone(), b.clone(), path, OrbitKind::Hamiltonian)?;
    let r = orbit.residuals;
    if r.euler_lagrange > opts.euler_lagrange_tolerance || r.energy > opts.energy_tolerance {
        return Err(Error::NotConverged(Box::new(ConvergenceDiagnostics {
            action: orbit.action,
            euler_lagrange_residual: r.euler_lagrange,
            energy_residual: r.energy,
            iterations: trace.iterations(),
            interval: orbit.half_width(),
        })));
    }
    if r.gradient <= opts.gradient_tolerance {
        orbit.kind = r.gradient_kind;
    }
    Ok(orbit)
}

/// [`hamiltonian_connection`] from a piecewise-linear start through
/// `waypoints`, doubling `T` at fixed node spacing until `J` settles.
pub fn hamiltonian_connection_adaptive(
    p: &dyn Potential,
    a: &CriticalPoint,
    b: &CriticalPoint,
    waypoints: &[Vec<f64>],
    opts: &ConnectionOptions,
) -> Result<HeteroclinicOrbit> {
    let mut half = opts.initial_half_width;
    let segments = |half: f64| ((2.0 * half / opts.node_spacing).round() as usize).max(3);
    let mut all = vec![a.location.clone()];
    all.extend(waypoints.iter().cloned());
    all.push(b.location.clone());
    let mut start = DiscretePath::through_waypoints(&all, None, segments(half), -half, half)?;
    let mut previous: Option<HeteroclinicOrbit> = None;
    let mut last_err = None;
    for _ in 0..=opts.max_doublings {
        match hamiltonian_connection(p, a, b, &start, opts) {
            Ok(orbit) => {
                if let Some(prev) = &previous {
                    if (orbit.action - prev.action).abs() < opts.action_tolerance {
                        return Ok(orbit);
                    }
                }
                start = orbit.path.clone();
                previous = Some(orbit);
            }
            Err(e) => last_err = Some(e),
        }
        half *= 2.0;
        let m = segments(half);
        let h = 2.0 * half / m as f64;
        // the old path keeps its times; its endpoints extend into the new tails
        let nodes: Vec<f64> = (0..=m).flat_map(|k| start.sample(-half + k as f64 * h)).collect();
        start = DiscretePath::new(-half, half, p.dim(), nodes)?;
    }
    Err(last_err.unwrap_or_else(|| {
        let prev = previous.expect("a converged orbit exists when no error was recorded");
        Error::NotConverged(Box::new(ConvergenceDiagnostics {
            action: prev.action,
            euler_lagrange_residual: prev.residuals.euler_lagrange,
            energy_residual: prev.residuals.energy,
            iterations: 0,
            interval: prev.half_width(),
        }))
    }))
}

/// Checks on a computed orbit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitVerification {
    pub action: f64,
    pub energy_residual: f64,
    pub zero_energy_residual: f64,
    pub gradient_residual: f64,
    /// `∫|∇V|² ds` along the path.
    pub gradient_energy: f64,
    /// `|J − ∫|∇V|²| / ∫|∇V|²`.
    pub identity_gap: f64,
    /// `|J − |V(b) − V(a)||`, for gradient orbits only.
    pub sum_rule_gap: Option<f64>,
}

impl OrbitVerification {
    pub fn passes(&self, energy_tolerance: f64) -> bool {
        self.energy_residual <= energy_tolerance
            && self.identity_gap <= 1e-2
            && self.sum_rule_gap.is_none_or(|g| g <= 1e-3)
    }
}

pub fn verify_orbit(p: &dyn Potential, orbit: &HeteroclinicOrbit) -> Result<OrbitVerification> {
    let path = &orbit.path;
    let h = path.step();
    let mut grad = vec![0.0; p.dim()];
    let m = path.segments();
    let mut gradient_energy = 0.0;
    for (k, x) in path.nodes().enumerate() {
        p.gradient(x, &mut grad);
        let w = if k == 0 || k == m { 0.5 } else { 1.0 };
        gradient_energy += w * grad.iter().map(|g| g * g).sum::<f64>();
    }
    gradient_energy *= h;
    let identity_gap = if gradient_energy == 0.0 && orbit.action == 0.0 {
        0.0
    } else {
        (orbit.action - gradient_energy).abs() / gradient_energy.abs().max(f64::MIN_POSITIVE)
    };
    let sum_rule_gap = orbit
        .kind
        .is_gradient()
        .then(|| (orbit.action - (orbit.target.value - orbit.source.value).abs()).abs());
    Ok(OrbitVerification {
        action: orbit.action,
        energy_residual: orbit.residuals.energy,
        zero_energy_residual: orbit.residuals.zero_energy,
        gradient_residual: orbit.residuals.gradient,
        gradient_energy,
        identity_gap,
        sum_rule_gap,
    })
}

/// A connection to attempt by action minimization, from a start through
/// `waypoints`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianRequest {
    pub from: usize,
    pub to: usize,
    pub waypoints: Vec<Vec<f64>>,
}

/// Saddle-to-saddle requests for the triple well: one arc through the region
/// between the saddles and one around the far side of the central minimum.
pub fn triple_well_saddle_requests(cps: &CriticalPointSet) -> Vec<HamiltonianRequest> {
    let (Some(a), Some(b)) = (
        cps.find(&crate::potential::TripleWell::saddle_low(), 1e-6),
        cps.find(&crate::potential::TripleWell::saddle_high(), 1e-6),
    ) else {
        return Vec::new();
    };
    vec![
        HamiltonianRequest {
            from: a,
            to: b,
            waypoints: vec![vec![0.4, 0.4]],
        },
        HamiltonianRequest {
            from: a,
            to: b,
            waypoints: vec![vec![0.3, -0.2], vec![-0.2, -0.2], vec![-0.2, 0.3]],
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    #[serde(rename = "J")]
    pub action: f64,
    pub kind: OrbitKind,
}

/// Critical points with computed connections and the all-pairs transition
/// energy `Φ`.
#[derive(Debug, Clone)]
pub struct TransitionGraph {
    pub points: CriticalPointSet,
    /// Every computed orbit, in the direction it was computed.
    pub orbits: Vec<HeteroclinicOrbit>,
    pub edges: Vec<Edge>,
    /// Connections that were attempted and failed.
    pub failures: Vec<String>,
    weights: Vec<Vec<f64>>,
    phi: Vec<Vec<f64>>,
    next: Vec<Vec<Option<usize>>>,
}

impl TransitionGraph {
    /// Builds the graph from explicit edges; the weight of a pair is the
    /// least action among its edges.
    pub fn from_edges(points: CriticalPointSet, edges: Vec<Edge>) -> Result<Self> {
        let n = points.len();
        let mut weights = vec![vec![f64::INFINITY; n]; n];
        for e in &edges {
            if e.from >= n || e.to >= n {
                return Err(Error::InvalidArgument(format!("edge {e:?} refers to a missing node")));
            }
            if e.from != e.to && e.action < weights[e.from][e.to] {
                weights[e.from][e.to] = e.action;
            }
        }
        for (i, row) in weights.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        let (phi, next) = floyd_warshall(&weights);
        Ok(Self {
            points,
            orbits: Vec::new(),
            edges,
            failures: Vec::new(),
            weights,
            phi,
            next,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Least direct connection action; infinite when none was computed.
    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.weights[a][b]
    }

    /// Transition energy `Φ(a, b)`.
    pub fn phi(&self, a: usize, b: usize) -> f64 {
        self.phi[a][b]
    }

    pub fn phi_matrix(&self) -> &[Vec<f64>] {
        &self.phi
    }

    /// Sequence of points along a shortest route from `a` to `b`.
    pub fn route(&self, a: usize, b: usize) -> Option<Vec<usize>> {
        if !self.phi[a][b].is_finite() {
            return None;
        }
        let mut route = vec![a];
        let mut at = a;
        while at != b {
            at = self.next[at][b]?;
            route.push(at);
        }
        Some(route)
    }

    /// The computed orbit of least action from `a` to `b`, reversed if it was
    /// computed from `b` to `a`.
    pub fn orbit(&self, a: usize, b: usize) -> Option<HeteroclinicOrbit> {
        let (pa, pb) = (&self.points.points()[a], &self.points.points()[b]);
        let joins = |o: &HeteroclinicOrbit, x: &CriticalPoint, y: &CriticalPoint| {
            o.source.distance_to(&x.location) < 1e-9 && o.target.distance_to(&y.location) < 1e-9
        };
        self.orbits
            .iter()
            .filter_map(|o| {
                if joins(o, pa, pb) {
                    Some(o.clone())
                } else if joins(o, pb, pa) {
                    Some(o.reversed())
                } else {
                    None
                }
            })
            .min_by(|x, y| x.action.total_cmp(&y.action))
    }

    /// JSON with node indices, edges and the `Φ` matrix (`null` for ∞).
    pub fn to_json(&self) -> Result<String> {
        let finite = |v: f64| v.is_finite().then_some(v);
        let doc = serde_json::json!({
            "nodes": (0..self.len()).collect::<Vec<_>>(),
            "edges": self.edges,
            "phi": self.phi.iter().map(|r| r.iter().map(|v| finite(*v)).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "failures": self.failures,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

fn floyd_warshall(weights: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<Option<usize>>>) {
    let n = weights.len();
    let mut d = weights.to_vec();
    let mut next: Vec<Vec<Option<usize>>> = (0..n)
        .map(|i| (0..n).map(|j| weights[i][j].is_finite().then_some(j)).collect())
        .collect();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                    next[i][j] = next[i][k];
                }
            }
        }
    }
    (d, next)
}

#[derive(Debug, Clone, Default)]
pub struct GraphOptions {
    pub shooting: ShootingOptions,
    pub connection: ConnectionOptions,
}

/// Shoots every unstable mode of every saddle in both directions, attempts
/// the requested action-minimizing connections, and assembles `Φ`.
/// Connections run in parallel; the result does not depend on scheduling.
pub fn build_transition_graph(
    p: &dyn Potential,
    cps: &CriticalPointSet,
    requests: &[HamiltonianRequest],
    opts: &GraphOptions,
) -> Result<TransitionGraph> {
    for r in requests {
        if r.from >= cps.len() || r.to >= cps.len() || r.from == r.to {
            return Err(Error::InvalidArgument(format!("bad connection request {r:?}")));
        }
    }
    let mut shooting = opts.shooting.clone();
    if shooting.bounds.is_none() {
        shooting.bounds = Some(default_bounds(cps));
    }

    enum Task<'a> {
        Shoot(&'a CriticalPoint, &'a [f64], f64),
        Connect(&'a HamiltonianRequest),
    }
    let mut tasks = Vec::new();
    for cp in cps.iter().filter(|c| c.index >= 1) {
        for v in cp.unstable_directions() {
            tasks.push(Task::Shoot(cp, v, 1.0));
            tasks.push(Task::Shoot(cp, v, -1.0));
        }
    }
    tasks.extend(requests.iter().map(Task::Connect));

    let results: Vec<(String, Result<HeteroclinicOrbit>)> = tasks
        .par_iter()
        .map(|t| match t {
            Task::Shoot(cp, v, s) => (
                format!("gradient orbit from {:?} (sign {s:+})", cp.location),
                gradient_connection(p, cp, v, *s, cps, &shooting),
            ),
            Task::Connect(r) => (
                format!("connection {} -> {} via {:?}", r.from, r.to, r.waypoints),
                hamiltonian_connection_adaptive(
                    p,
                    &cps.points()[r.from],
                    &cps.points()[r.to],
                    &r.waypoints,
                    &opts.connection,
                ),
            ),
        })
        .collect();

    let mut orbits = Vec::new();
    let mut edges = Vec::new();
    let mut failures = Vec::new();
    for (label, result) in results {
        match result {
            Ok(orbit) => {
                let from = cps.nearest(&orbit.source.location).0;
                let to = cps.nearest(&orbit.target.location).0;
                edges.push(Edge {
                    from,
                    to,
                    action: orbit.action,
                    kind: orbit.kind,
                });
                edges.push(Edge {
                    from: to,
                    to: from,
                    action: orbit.action,
                    kind: orbit.kind.reversed(),
                });
                orbits.push(orbit);
            }
            Err(e) => failures.push(format!("{label}: {e}")),
        }
    }
    let mut graph = TransitionGraph::from_edges(cps.clone(), edges)?;
    graph.orbits = orbits;
    graph.failures = failures;
    Ok(graph)
}

fn default_bounds(cps: &CriticalPointSet) -> SearchBox {
    let d = cps.points()[0].location.len();
    let mut lower = vec![f64::INFINITY; d];
    let mut upper = vec![f64::NEG_INFINITY; d];
    for c in cps {
        for i in 0..d {
            lower[i] = lower[i].min(c.location[i]);
            upper[i] = upper[i].max(c.location[i]);
        }
    }
    let extent = lower.iter().zip(&upper).map(|(l, u)| u - l).fold(0.0, f64::max);
    SearchBox::new(lower, upper)
        .expect("bounds of a nonempty set are ordered")
        .inflated(1.0 + extent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical_points::{classify, find_critical_points};
    use crate::potential::{DoubleWell, TripleWell};

    const TWO_27: f64 = 2.0 / 27.0;

    fn triple_well_points() -> CriticalPointSet {
        find_critical_points(&TripleWell, &SearchBox::cube(2, -0.5, 1.5).unwrap(), 40).unwrap()
    }

    fn named(cps: &CriticalPointSet, x: &[f64]) -> usize {
        cps.find(x, 1e-6).unwrap()
    }

    #[test]
    fn saddle_orbits_obey_the_sum_rule() {
        let cps = triple_well_points();
        let s1 = &cps.points()[named(&cps, &TripleWell::saddle_low())];
        let v = s1.unstable_directions().next().unwrap().to_vec();
        let mut targets = Vec::new();
        for sign in [1.0, -1.0] {
            let o = gradient_connection(&TripleWell, s1, &v, sign, &cps, &ShootingOptions::default()).unwrap();
            assert!((o.action - TWO_27).abs() <= 1e-3, "{}", o.action);
            assert!(o.residuals.energy <= 1e-3);
            assert!(o.residuals.gradient <= 1e-3);
            let check = verify_orbit(&TripleWell, &o).unwrap();
            assert!(check.passes(1e-3), "{check:?}");
            targets.push(cps.nearest(&o.target.location).0);
        }
        targets.sort();
        let mut expected = vec![named(&cps, &[0.0, 0.0]), named(&cps, &[1.0, 0.0])];
        expected.sort();
        assert_eq!(targets, expected);
    }

    #[test]
    fn double_well_orbit_from_the_maximum() {
        let cps = find_critical_points(&DoubleWell, &SearchBox::cube(1, -2.0, 2.0).unwrap(), 41).unwrap();
        let top = &cps.points()[named(&cps, &[0.0])];
        let o = gradient_connection(&DoubleWell, top, &[1.0], 1.0, &cps, &ShootingOptions::default()).unwrap();
        assert!((o.target.location[0] - 1.0).abs() < 1e-12);
        assert!((o.action - 0.25).abs() <= 1e-4, "{}", o.action);
    }

    #[test]
    fn shooting_rejects_bad_arguments() {
        let cps = triple_well_points();
        let m0 = &cps.points()[named(&cps, &[0.0, 0.0])];
        let opts = ShootingOptions::default();
        assert!(gradient_connection(&TripleWell, m0, &[1.0, 0.0], 1.0, &cps, &opts).is_err());
        let s1 = &cps.points()[named(&cps, &TripleWell::saddle_low())];
        let stable = s1.eigenvectors[1].clone();
        assert!(gradient_connection(&TripleWell, s1, &stable, 1.0, &cps, &opts).is_err());
        let v = s1.eigenvectors[0].clone();
        let tight = ShootingOptions {
            bounds: Some(SearchBox::new(vec![0.5, 0.0], vec![0.6, 0.2]).unwrap()),
            ..opts.clone()
        };
        assert!(matches!(
            gradient_connection(&TripleWell, s1, &v, 1.0, &cps, &tight),
            Err(Error::Escaped { .. })
        ));
        let short = ShootingOptions {
            max_arclength: 0.01,
            ..opts
        };
        assert!(matches!(
            gradient_connection(&TripleWell, s1, &v, 1.0, &cps, &short),
            Err(Error::ArclengthExceeded { .. })
        ));
    }

    #[test]
    fn reversal_keeps_the_action() {
        let cps = triple_well_points();
        let s2 = &cps.points()[named(&cps, &TripleWell::saddle_high())];
        let v = s2.eigenvectors[0].clone();
        let o = gradient_connection(&TripleWell, s2, &v, 1.0, &cps, &ShootingOptions::default()).unwrap();
        let r = o.reversed();
        assert_eq!(eval_j_infinite(&TripleWell, &r.path).unwrap().value, o.action);
        assert_eq!(r.kind, OrbitKind::GradientBackward);
        assert_eq!(orbit_residuals(&TripleWell, &r.path).unwrap().gradient_kind, OrbitKind::GradientBackward);
    }

    #[test]
    fn constant_orbit_has_zero_residuals() {
        let m1 = classify(&TripleWell, &[1.0, 0.0]).unwrap();
        let o = HeteroclinicOrbit::constant(&TripleWell, &m1, 5.0, 100).unwrap();
        let v = verify_orbit(&TripleWell, &o).unwrap();
        assert_eq!(v.action, 0.0);
        assert_eq!(v.energy_residual, 0.0);
        assert_eq!(v.zero_energy_residual, 0.0);
        assert_eq!(v.identity_gap, 0.0);
        assert_eq!(v.sum_rule_gap, Some(0.0));
    }

    #[test]
    fn saddle_to_saddle_connection_is_not_a_gradient_orbit() {
        let cps = triple_well_points();
        let s1 = &cps.points()[named(&cps, &TripleWell::saddle_low())];
        let s2 = &cps.points()[named(&cps, &TripleWell::saddle_high())];
        let o = hamiltonian_connection_adaptive(&TripleWell, s1, s2, &[vec![0.4, 0.4]], &ConnectionOptions::default())
            .unwrap();
        assert_eq!(o.kind, OrbitKind::Hamiltonian);
        assert!(o.residuals.energy <= 1e-3);
        assert!(o.residuals.gradient > 0.1);
        assert!(o.action > 0.0 && o.action < 2.0 * TWO_27);
        let v = verify_orbit(&TripleWell, &o).unwrap();
        assert!(v.sum_rule_gap.is_none());
        assert!(v.identity_gap <= 1e-2);
    }

    #[test]
    fn minimized_saddle_to_minimum_connection_is_a_gradient_orbit() {
        let cps = triple_well_points();
        let s1 = &cps.points()[named(&cps, &TripleWell::saddle_low())];
        let m0 = &cps.points()[named(&cps, &[0.0, 0.0])];
        let o = hamiltonian_connection_adaptive(&TripleWell, s1, m0, &[], &ConnectionOptions::default()).unwrap();
        assert!((o.action - TWO_27).abs() <= 1e-3, "{}", o.action);
        assert_eq!(o.kind, OrbitKind::GradientForward);
        let start = DiscretePath::constant(&s1.location, 10, -1.0, 1.0).unwrap();
        assert!(hamiltonian_connection(&TripleWell, s1, s1, &start, &ConnectionOptions::default()).is_err());
    }

    /// Least total weight over sequences of distinct intermediate nodes.
    fn brute_force_phi(w: &[Vec<f64>], a: usize, b: usize, max_len: usize) -> f64 {
        fn go(w: &[Vec<f64>], at: usize, b: usize, used: &mut Vec<usize>, cost: f64, left: usize, best: &mut f64) {
            if at == b {
                *best = best.min(cost);
                return;
            }
            if left == 0 {
                return;
            }
            for next in 0..w.len() {
                if !used.contains(&next) && w[at][next].is_finite() {
                    used.push(next);
                    go(w, next, b, used, cost + w[at][next], left - 1, best);
                    used.pop();
                }
            }
        }
        let mut best = f64::INFINITY;
        go(w, a, b, &mut vec![a], 0.0, max_len - 1, &mut best);
        best
    }

    #[test]
    fn triple_well_transition_graph() {
        let cps = triple_well_points();
        let g = build_transition_graph(&TripleWell, &cps, &triple_well_saddle_requests(&cps), &GraphOptions::default())
            .unwrap();
        let (m0, m1, m2) = (named(&cps, &[0.0, 0.0]), named(&cps, &[1.0, 0.0]), named(&cps, &[0.0, 1.0]));
        let (s1, s2) = (named(&cps, &TripleWell::saddle_low()), named(&cps, &TripleWell::saddle_high()));
        assert!((g.phi(m1, m0) - 2.0 * TWO_27).abs() <= 2e-3);
        let direct = g.weight(s1, s2);
        assert!(direct.is_finite());
        let expected = (4.0 * TWO_27).min(2.0 * TWO_27 + direct);
        assert!((g.phi(m1, m2) - expected).abs() <= 2e-3);
        assert!(g.failures.is_empty(), "{:?}", g.failures);
        let back = g.orbit(m1, s1).unwrap();
        assert_eq!(back.kind, OrbitKind::GradientBackward);
        assert_eq!(back.action, g.weight(m1, s1));
        assert_eq!(g.route(m1, m2).unwrap(), vec![m1, s1, s2, m2]);
        assert!((g.weight(s1, m1) - g.weight(s2, m2)).abs() <= 1e-6);
        let w: Vec<Vec<f64>> = (0..g.len()).map(|i| (0..g.len()).map(|j| g.weight(i, j)).collect()).collect();
        for a in 0..g.len() {
            assert_eq!(g.phi(a, a), 0.0);
            for b in 0..g.len() {
                let oracle = brute_force_phi(&w, a, b, 5);
                assert!((g.phi(a, b) - oracle).abs() <= 1e-12);
                assert!(g.phi(a, b) >= (cps.points()[a].value - cps.points()[b].value).abs() - 1e-3);
                assert_eq!(g.weight(a, b), g.weight(b, a));
                if a != b {
                    assert!(g.phi(a, b) > 0.0);
                }
            }
        }
        let json: serde_json::Value = serde_json::from_str(&g.to_json().unwrap()).unwrap();
        assert_eq!(json["nodes"].as_array().unwrap().len(), 5);
        assert!(json["edges"][0]["J"].is_f64());
        assert!(json["edges"][0]["kind"].is_string());
        assert_eq!(json["phi"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn missing_edges_stay_infinite() {
        let cps = triple_well_points();
        let g = TransitionGraph::from_edges(
            cps.clone(),
            vec![Edge {
                from: 0,
                to: 1,
                action: 0.5,
                kind: OrbitKind::Hamiltonian,
            }],
        )
        .unwrap();
        assert_eq!(g.phi(0, 1), 0.5);
        assert!(g.phi(1, 0).is_infinite());
        assert!(g.route(1, 0).is_none());
        let json: serde_json::Value = serde_json::from_str(&g.to_json().unwrap()).unwrap();
        assert!(json["phi"][1][0].is_null());
    }
}
