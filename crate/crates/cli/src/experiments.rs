//! Runners for the triple-well experiments behind each figure, plus the
//! shared minimization and output helpers.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use transpath::critical_points::{find_critical_points, CriticalPointSet, SearchBox};
use transpath::functionals::{eval_i, DiscretePath, FunctionalReport, Objective};
use transpath::gamma_limit::{compare_with_eps, eval_i0, fraction_near, optimize_support, BVStepPath, EpsComparison, GammaReport};
use transpath::heteroclinics::{build_transition_graph, triple_well_saddle_requests, verify_orbit, GraphOptions, TransitionGraph};
use transpath::optimizer::{continuation_minimize, minimize, FlowConfig, FlowTrace};
use transpath::potential::{Potential, TripleWell};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Where an experiment writes its files; `None` keeps everything in memory.
#[derive(Debug, Clone)]
pub struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    pub fn in_dir(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn none() -> Self {
        Self { dir: None }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn file(&self, name: &str) -> Result<Option<std::fs::File>, CliError> {
        match &self.dir {
            Some(d) => Ok(Some(std::fs::File::create(d.join(name))?)),
            None => Ok(None),
        }
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        if let Some(mut f) = self.file(name)? {
            serde_json::to_writer_pretty(&mut f, value).map_err(transpath::Error::from)?;
            std::io::Write::write_all(&mut f, b"\n")?;
        }
        Ok(())
    }

    pub fn text(&self, name: &str, text: &str) -> Result<(), CliError> {
        if let Some(mut f) = self.file(name)? {
            std::io::Write::write_all(&mut f, text.as_bytes())?;
        }
        Ok(())
    }

    pub fn path(&self, name: &str, path: &DiscretePath) -> Result<(), CliError> {
        if let Some(f) = self.file(name)? {
            path.write_csv(f)?;
        }
        Ok(())
    }

    pub fn trace(&self, name: &str, trace: &FlowTrace) -> Result<(), CliError> {
        if let Some(f) = self.file(name)? {
            trace.write_csv(f)?;
        }
        Ok(())
    }
}

/// A finished minimization.
#[derive(Debug, Clone)]
pub struct Minimized {
    pub label: String,
    pub path: DiscretePath,
    pub trace: FlowTrace,
    pub report: FunctionalReport,
}

impl Minimized {
    pub fn summary(&self) -> Value {
        json!({
            "label": self.label,
            "status": self.trace.status,
            "iterations": self.trace.iterations(),
            "final_grad_norm": self.trace.final_grad_norm,
            "report": self.report,
        })
    }

    /// Writes `<label>.csv` and `<label>_trace.csv`.
    pub fn write(&self, out: &Output) -> Result<(), CliError> {
        out.path(&format!("{}.csv", self.label), &self.path)?;
        out.trace(&format!("{}_trace.csv", self.label), &self.trace)
    }
}

/// Settings of one minimization.
#[derive(Debug, Clone)]
pub struct MinimizeSpec {
    pub label: String,
    pub objective: Objective,
    pub eps: f64,
    pub schedule: Vec<f64>,
    pub max_iterations: usize,
}

impl MinimizeSpec {
    pub fn from_config(label: &str, objective: Objective, cfg: &ExperimentConfig) -> Self {
        Self {
            label: label.to_string(),
            objective,
            eps: cfg.eps,
            schedule: cfg.schedule.clone(),
            max_iterations: cfg.max_iterations,
        }
    }
}

/// Runs the gradient flow; hitting the iteration cap is an error carrying
/// the trace and the last path.
pub fn run_minimization(p: &dyn Potential, start: &DiscretePath, spec: &MinimizeSpec) -> Result<Minimized, CliError> {
    let mut cfg = FlowConfig::new(spec.objective, spec.eps);
    cfg.max_iterations = spec.max_iterations;
    let (path, trace) = if spec.schedule.is_empty() {
        minimize(p, start, &cfg)?
    } else {
        let mut schedule = spec.schedule.clone();
        if schedule.last() != Some(&spec.eps) {
            schedule.push(spec.eps);
        }
        continuation_minimize(p, start, &cfg, &schedule)?
    };
    if !trace.terminated_normally() {
        return Err(CliError::NotConverged {
            label: spec.label.clone(),
            trace: Box::new(trace),
            path: Box::new(path),
        });
    }
    let report = eval_i(p, &path, spec.eps)?;
    Ok(Minimized {
        label: spec.label.clone(),
        path,
        trace,
        report,
    })
}

/// Start path through `waypoints` on `[0, 1]`, optionally with seeded noise
/// of amplitude `jitter` on interior nodes.
pub fn start_path(
    waypoints: &[Vec<f64>],
    knots: Option<&[f64]>,
    segments: usize,
    jitter: f64,
    seed: u64,
) -> Result<DiscretePath, CliError> {
    let path = DiscretePath::through_waypoints(waypoints, knots, segments, 0.0, 1.0)?;
    if jitter == 0.0 {
        return Ok(path);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = path.dim();
    let mut nodes = path.coordinates().to_vec();
    let n = nodes.len();
    for v in &mut nodes[d..n - d] {
        *v += jitter * rng.gen_range(-1.0..1.0);
    }
    Ok(DiscretePath::new(0.0, 1.0, d, nodes)?)
}

/// Critical points of the triple well and the indices of the named ones.
#[derive(Debug, Clone)]
pub struct TripleWellSetup {
    pub cps: CriticalPointSet,
    pub m0: usize,
    pub m1: usize,
    pub m2: usize,
    pub s1: usize,
    pub s2: usize,
}

impl TripleWellSetup {
    pub fn new() -> Result<Self, CliError> {
        let cps = find_critical_points(&TripleWell, &SearchBox::cube(2, -0.5, 1.5)?, 40)?;
        let id = |x: &[f64]| {
            cps.find(x, 1e-6)
                .ok_or(CliError::Core(transpath::Error::NoCriticalPoints))
        };
        Ok(Self {
            m0: id(&[0.0, 0.0])?,
            m1: id(&[1.0, 0.0])?,
            m2: id(&[0.0, 1.0])?,
            s1: id(&TripleWell::saddle_low())?,
            s2: id(&TripleWell::saddle_high())?,
            cps,
        })
    }

    pub fn location(&self, i: usize) -> Vec<f64> {
        self.cps.points()[i].location.clone()
    }

    pub fn locations(&self, seq: &[usize]) -> Vec<Vec<f64>> {
        seq.iter().map(|i| self.location(*i)).collect()
    }

    pub fn name(&self, i: usize) -> &'static str {
        [(self.m0, "M0"), (self.m1, "M1"), (self.m2, "M2"), (self.s1, "S1"), (self.s2, "S2")]
            .iter()
            .find(|(j, _)| *j == i)
            .map(|(_, n)| *n)
            .unwrap_or("?")
    }

    /// Gradient orbits of both saddles and the saddle-to-saddle connections.
    pub fn graph(&self) -> Result<TransitionGraph, CliError> {
        Ok(build_transition_graph(
            &TripleWell,
            &self.cps,
            &triple_well_saddle_requests(&self.cps),
            &GraphOptions::default(),
        )?)
    }
}

/// Point inside the triangle of minima, away from the centre, used to route
/// saddle-to-saddle starts around `M₀`.
pub const AVOIDING_WAYPOINT: [f64; 2] = [0.4, 0.4];

/// Interior nodes outside the balls of radius `radius` around the path's
/// endpoints, from the first exit of the start ball to the last exit of the
/// end ball, as a fraction of all nodes.
pub fn transition_fraction(path: &DiscretePath, radius: f64) -> f64 {
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let (a, b) = (path.first().to_vec(), path.last().to_vec());
    let nodes: Vec<&[f64]> = path.nodes().collect();
    let Some(first) = nodes.iter().position(|x| dist(x, &a) > radius) else {
        return 0.0;
    };
    let last = nodes.iter().rposition(|x| dist(x, &b) > radius).unwrap_or(first);
    (last + 1 - first) as f64 / nodes.len() as f64
}

/// Limit prediction for a visit sequence compared with a finite-ε minimizer.
#[derive(Debug, Clone, Serialize)]
pub struct LimitCheck {
    pub sequence: Vec<&'static str>,
    pub predicted: BVStepPath,
    pub gamma: GammaReport,
    pub comparison: EpsComparison,
}

fn limit_check(setup: &TripleWellSetup, graph: &TransitionGraph, seq: &[usize], run: &Minimized) -> Result<LimitCheck, CliError> {
    let predicted = optimize_support(graph, seq)?;
    let gamma = eval_i0(graph, &predicted)?;
    let comparison = compare_with_eps(graph, &run.path, &run.report, &predicted, &gamma);
    Ok(LimitCheck {
        sequence: seq.iter().map(|i| setup.name(*i)).collect(),
        predicted,
        gamma,
        comparison,
    })
}

pub struct Figure1 {
    pub grid: Vec<[f64; 3]>,
    pub setup: TripleWellSetup,
}

/// Potential values on a 201 × 201 grid over `[−0.5, 1.5]²` and the critical
/// points.
pub fn figure1(out: &Output) -> Result<Figure1, CliError> {
    let setup = TripleWellSetup::new()?;
    let n = 201;
    let grid: Vec<[f64; 3]> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| {
            let (x, y) = (-0.5 + 2.0 * i as f64 / (n - 1) as f64, -0.5 + 2.0 * j as f64 / (n - 1) as f64);
            [x, y, TripleWell.value(&[x, y])]
        })
        .collect();
    let mut csv = String::from("x1,x2,V\n");
    for [x, y, v] in &grid {
        csv.push_str(&format!("{x:.6},{y:.6},{v:.17e}\n"));
    }
    out.text("potential_grid.csv", &csv)?;
    out.json("critical_points.json", &setup.cps)?;
    out.json(
        "summary.json",
        &json!({"figure": 1, "grid": n, "range": [-0.5, 1.5], "critical_points": setup.cps}),
    )?;
    Ok(Figure1 { grid, setup })
}

pub struct Figure2 {
    pub setup: TripleWellSetup,
    pub graph: TransitionGraph,
}

/// Every gradient orbit from the saddles and the saddle-to-saddle
/// connection, with their checks.
pub fn figure2(out: &Output) -> Result<Figure2, CliError> {
    let setup = TripleWellSetup::new()?;
    let graph = setup.graph()?;
    let mut orbits = Vec::new();
    for o in &graph.orbits {
        let (a, b) = (setup.cps.nearest(&o.source.location).0, setup.cps.nearest(&o.target.location).0);
        let name = format!("orbit_{}_{}_{}.csv", setup.name(a), setup.name(b), o.kind);
        out.path(&name, &o.path)?;
        orbits.push(json!({
            "file": name,
            "from": setup.name(a),
            "to": setup.name(b),
            "orbit": o,
            "check": verify_orbit(&TripleWell, o)?,
        }));
    }
    out.text("graph.json", &graph.to_json()?)?;
    out.json("summary.json", &json!({"figure": 2, "orbits": orbits}))?;
    Ok(Figure2 { setup, graph })
}

pub struct Figure3 {
    pub via_centre: Minimized,
    pub avoiding: Minimized,
    /// Action of the saddle-to-saddle connection.
    pub saddle_pair: f64,
}

/// `J_ε` minimizers from `M₁` to `M₂`: one start through `M₀`, one through
/// both saddles.
pub fn figure3(cfg: &ExperimentConfig, out: &Output) -> Result<Figure3, CliError> {
    let setup = TripleWellSetup::new()?;
    let graph = setup.graph()?;
    let saddle_pair = graph.weight(setup.s1, setup.s2);
    let spec = |label: &str| MinimizeSpec::from_config(label, Objective::LaplacianFree, cfg);
    let via = setup.locations(&[setup.m1, setup.m0, setup.m2]);
    let around = setup.locations(&[setup.m1, setup.s1, setup.s2, setup.m2]);
    let via_centre = run_minimization(&TripleWell, &start_path(&via, None, cfg.nodes, 0.0, 0)?, &spec("via_m0"))?;
    let avoiding = run_minimization(&TripleWell, &start_path(&around, None, cfg.nodes, 0.0, 0)?, &spec("avoiding_m0"))?;
    via_centre.write(out)?;
    avoiding.write(out)?;
    out.json(
        "summary.json",
        &json!({
            "figure": 3,
            "via_m0": via_centre.summary(),
            "avoiding_m0": avoiding.summary(),
            "saddle_pair_action": saddle_pair,
            "four_gradient_segments": 8.0 / 27.0,
            "two_gradient_segments_plus_saddle_pair": 4.0 / 27.0 + saddle_pair,
        }),
    )?;
    Ok(Figure3 {
        via_centre,
        avoiding,
        saddle_pair,
    })
}

/// Knots of the three saddle-to-saddle starts; the first is symmetric.
pub const SADDLE_PAIR_KNOTS: [[f64; 3]; 3] = [[0.0, 0.5, 1.0], [0.0, 0.3, 1.0], [0.0, 0.7, 1.0]];

fn saddle_pair_runs(setup: &TripleWellSetup, cfg: &ExperimentConfig, objective: Objective) -> Result<Vec<Minimized>, CliError> {
    let waypoints = vec![setup.location(setup.s1), AVOIDING_WAYPOINT.to_vec(), setup.location(setup.s2)];
    let tag = if objective == Objective::LaplacianFree { "J" } else { "I" };
    SADDLE_PAIR_KNOTS
        .iter()
        .enumerate()
        .map(|(i, knots)| {
            let label = if i == 0 { format!("{tag}_symmetric") } else { format!("{tag}_start{i}") };
            let start = start_path(&waypoints, Some(knots), cfg.nodes, 0.0, 0)?;
            run_minimization(&TripleWell, &start, &MinimizeSpec::from_config(&label, objective, cfg))
        })
        .collect()
}

pub struct Figure4 {
    pub runs: Vec<Minimized>,
}

/// `J_ε` minimizers from `S₁` to `S₂` from three starts avoiding `M₀`.
pub fn figure4(cfg: &ExperimentConfig, out: &Output) -> Result<Figure4, CliError> {
    let setup = TripleWellSetup::new()?;
    let runs = saddle_pair_runs(&setup, cfg, Objective::LaplacianFree)?;
    for r in &runs {
        r.write(out)?;
    }
    out.json(
        "summary.json",
        &json!({"figure": 4, "runs": runs.iter().map(Minimized::summary).collect::<Vec<_>>()}),
    )?;
    Ok(Figure4 { runs })
}

/// Comparison of the symmetric `I_ε` and `J_ε` saddle-to-saddle minimizers.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Equivalence {
    /// `|I_ε(x_I) − J_ε(x_J)|`: each minimizer in its own objective.
    pub objective_gap: f64,
    /// `|J_ε(x_I) − J_ε(x_J)|`.
    pub same_functional_gap: f64,
    /// `∫ΔV` along the `I_ε` minimizer.
    pub laplacian_term: f64,
    /// Largest node distance between the two minimizers.
    pub path_distance: f64,
}

pub struct Figure5 {
    pub runs: Vec<Minimized>,
    pub reference: Minimized,
    pub equivalence: Equivalence,
}

/// `I_ε` minimizers from the same starts as figure 4, compared with the
/// symmetric `J_ε` minimizer.
pub fn figure5(cfg: &ExperimentConfig, out: &Output) -> Result<Figure5, CliError> {
    let setup = TripleWellSetup::new()?;
    let runs = saddle_pair_runs(&setup, cfg, Objective::OnsagerMachlup)?;
    let reference = saddle_pair_runs(&setup, cfg, Objective::LaplacianFree)?.swap_remove(0);
    let (xi, xj) = (&runs[0], &reference);
    let path_distance = xi
        .path
        .nodes()
        .zip(xj.path.nodes())
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let equivalence = Equivalence {
        objective_gap: (xi.report.i_eps - xj.report.j_eps).abs(),
        same_functional_gap: (xi.report.j_eps - xj.report.j_eps).abs(),
        laplacian_term: xi.report.laplacian,
        path_distance,
    };
    for r in &runs {
        r.write(out)?;
    }
    out.json(
        "summary.json",
        &json!({
            "figure": 5,
            "runs": runs.iter().map(Minimized::summary).collect::<Vec<_>>(),
            "J_symmetric": reference.summary(),
            "equivalence": equivalence,
        }),
    )?;
    Ok(Figure5 {
        runs,
        reference,
        equivalence,
    })
}

/// Knots of the two through-centre `J_ε` starts: the crossing of `M₀` at
/// mid-interval and early.
pub const CENTRE_KNOTS: [[f64; 3]; 2] = [[0.0, 0.5, 1.0], [0.0, 0.3, 1.0]];

pub struct Figure6 {
    pub runs: Vec<Minimized>,
}

/// `J_ε` minimizers from `S₁` to `S₂` through `M₀` with two dwell
/// allocations of the start.
pub fn figure6(cfg: &ExperimentConfig, out: &Output) -> Result<Figure6, CliError> {
    let setup = TripleWellSetup::new()?;
    let waypoints = setup.locations(&[setup.s1, setup.m0, setup.s2]);
    let runs = CENTRE_KNOTS
        .iter()
        .zip(["symmetric", "early_crossing"])
        .map(|(knots, label)| {
            let start = start_path(&waypoints, Some(knots), cfg.nodes, 0.0, 0)?;
            run_minimization(&TripleWell, &start, &MinimizeSpec::from_config(label, Objective::LaplacianFree, cfg))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for r in &runs {
        r.write(out)?;
    }
    out.json(
        "summary.json",
        &json!({
            "figure": 6,
            "runs": runs.iter().map(Minimized::summary).collect::<Vec<_>>(),
            "J_gap": (runs[0].report.j_eps - runs[1].report.j_eps).abs(),
        }),
    )?;
    Ok(Figure6 { runs })
}

pub struct LimitFigure {
    pub run: Minimized,
    pub limit: LimitCheck,
    /// Fraction of nodes within 0.05 of the predicted support.
    pub support_share: f64,
    pub transition_fraction: f64,
}

fn limit_figure(
    n: u8,
    cfg: &ExperimentConfig,
    out: &Output,
    seq: impl Fn(&TripleWellSetup) -> Vec<usize>,
) -> Result<LimitFigure, CliError> {
    let setup = TripleWellSetup::new()?;
    let graph = setup.graph()?;
    let seq = seq(&setup);
    let start = start_path(&setup.locations(&seq), None, cfg.nodes, 0.0, 0)?;
    let run = run_minimization(&TripleWell, &start, &MinimizeSpec::from_config("I_minimizer", Objective::OnsagerMachlup, cfg))?;
    let limit = limit_check(&setup, &graph, &seq, &run)?;
    let centers = setup.locations(&limit.comparison.support);
    let support_share = fraction_near(&run.path, &centers, transpath::gamma_limit::SUPPORT_RADIUS);
    let transition_fraction = transition_fraction(&run.path, transpath::gamma_limit::SUPPORT_RADIUS);
    run.write(out)?;
    out.json(
        "summary.json",
        &json!({
            "figure": n,
            "run": run.summary(),
            "limit": limit,
            "support_share": support_share,
            "transition_fraction": transition_fraction,
        }),
    )?;
    Ok(LimitFigure {
        run,
        limit,
        support_share,
        transition_fraction,
    })
}

/// `I_ε` minimizer from `S₁` to `S₂` through `M₀` against its limit.
pub fn figure7(cfg: &ExperimentConfig, out: &Output) -> Result<LimitFigure, CliError> {
    limit_figure(7, cfg, out, |s| vec![s.s1, s.m0, s.s2])
}

pub struct Figure8 {
    pub run: Minimized,
}

/// `J_ε` minimizer from `M₁` to `M₂` through all five critical points.
pub fn figure8(cfg: &ExperimentConfig, out: &Output) -> Result<Figure8, CliError> {
    let setup = TripleWellSetup::new()?;
    let seq = [setup.m1, setup.s1, setup.m0, setup.s2, setup.m2];
    let start = start_path(&setup.locations(&seq), None, cfg.nodes, 0.0, 0)?;
    let run = run_minimization(&TripleWell, &start, &MinimizeSpec::from_config("J_minimizer", Objective::LaplacianFree, cfg))?;
    run.write(out)?;
    let near = setup.locations(&seq);
    out.json(
        "summary.json",
        &json!({
            "figure": 8,
            "run": run.summary(),
            "four_gradient_segments": 8.0 / 27.0,
            "share_near_critical_points": fraction_near(&run.path, &near, transpath::gamma_limit::SUPPORT_RADIUS),
        }),
    )?;
    Ok(Figure8 { run })
}

/// `I_ε` minimizer from `M₁` to `M₂` from a start avoiding `M₀`, against its
/// limit.
pub fn figure9(cfg: &ExperimentConfig, out: &Output) -> Result<LimitFigure, CliError> {
    limit_figure(9, cfg, out, |s| vec![s.m1, s.s1, s.s2, s.m2])
}

/// Runs figure `n`, writing its files into `out`.
pub fn run_figure(n: u8, cfg: &ExperimentConfig, out: &Output) -> Result<(), CliError> {
    if cfg.potential != "triple-well" {
        return Err(CliError::Usage("figures use the triple-well potential".into()));
    }
    match n {
        1 => figure1(out).map(|_| ()),
        2 => figure2(out).map(|_| ()),
        3 => figure3(cfg, out).map(|_| ()),
        4 => figure4(cfg, out).map(|_| ()),
        5 => figure5(cfg, out).map(|_| ()),
        6 => figure6(cfg, out).map(|_| ()),
        7 => figure7(cfg, out).map(|_| ()),
        8 => figure8(cfg, out).map(|_| ()),
        9 => figure9(cfg, out).map(|_| ()),
        other => Err(CliError::Usage(format!("no figure {other}; choose 1 to 9"))),
    }
}
