//! Command-line front end: one subcommand per library module, figure
//! runners, and a parallel batch mode.

pub mod config;
pub mod experiments;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};
use transpath::critical_points::{check_admissibility, find_critical_points, CriticalPointSet, SearchBox};
use transpath::functionals::DiscretePath;
use transpath::gamma_limit::{compare_with_eps, eval_i0, optimize_support};
use transpath::heteroclinics::{
    build_transition_graph, gradient_connection, hamiltonian_connection_adaptive, triple_well_saddle_requests,
    verify_orbit, ConnectionOptions, GraphOptions, HamiltonianRequest, ShootingOptions, TransitionGraph,
};
use transpath::optimizer::FlowTrace;
use transpath::potential::Potential;

use crate::config::{resolve_critical, resolve_point, ExperimentConfig};
use crate::experiments::{run_figure, run_minimization, start_path, MinimizeSpec, Output};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{label}: minimization stopped at the iteration limit")]
    NotConverged {
        label: String,
        trace: Box<FlowTrace>,
        path: Box<DiscretePath>,
    },

    #[error(transparent)]
    Core(#[from] transpath::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::NotConverged { .. } | CliError::Core(transpath::Error::NotConverged(_)) => 3,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::NotConverged { .. } | CliError::Core(transpath::Error::NotConverged(_)) => "not-converged",
            CliError::Core(_) => "numerical",
            CliError::Io(_) => "io",
        }
    }

    /// Diagnostic document; non-convergence also dumps the trace and last
    /// path into `out` when possible.
    fn diagnostic(&self, out: Option<&Path>) -> Value {
        let mut doc = json!({"error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code()});
        match self {
            CliError::NotConverged { label, trace, path } => {
                doc["iterations"] = json!(trace.iterations());
                doc["final_objective"] = json!(trace.final_objective);
                doc["final_grad_norm"] = json!(trace.final_grad_norm);
                if let Some(dir) = out {
                    let dump = || -> Result<PathBuf, CliError> {
                        let o = Output::in_dir(dir)?;
                        o.trace(&format!("{label}_trace.csv"), trace)?;
                        o.path(&format!("{label}_last.csv"), path)?;
                        Ok(dir.join(format!("{label}_trace.csv")))
                    };
                    if let Ok(file) = dump() {
                        doc["trace"] = json!(file);
                    }
                }
            }
            CliError::Core(transpath::Error::NotConverged(d)) => doc["diagnostics"] = json!(d),
            _ => {}
        }
        doc
    }
}

#[derive(Debug, Parser)]
#[command(name = "transpath", version, about = "Most probable transition paths and their small-noise limit")]
struct Cli {
    #[command(flatten)]
    settings: Settings,

    #[command(subcommand)]
    command: Command,
}

/// Settings shared by all subcommands; they override the config file.
#[derive(Debug, Args)]
struct Settings {
    /// Flat `key = value` file applied before the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    potential: Option<String>,
    #[arg(long, global = true)]
    eps: Option<String>,
    /// Number of path segments.
    #[arg(long, global = true)]
    nodes: Option<String>,
    /// Start point: a name such as M1, coordinates such as 0.5,0.2, or a
    /// critical-point index.
    #[arg(long, global = true)]
    from: Option<String>,
    #[arg(long, global = true)]
    to: Option<String>,
    /// Interior waypoints separated by `;`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    waypoints: Option<String>,
    /// Waypoint times in [0, 1], including both ends.
    #[arg(long, global = true)]
    knots: Option<String>,
    /// I (Onsager-Machlup) or J (without the Laplacian term).
    #[arg(long, global = true)]
    objective: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Amplitude of seeded noise on the start path.
    #[arg(long, global = true)]
    jitter: Option<String>,
    /// Decreasing eps values ending at --eps, comma-separated.
    #[arg(long, global = true)]
    schedule: Option<String>,
    #[arg(long, global = true)]
    max_iterations: Option<String>,
}

impl Settings {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let pairs = [
            ("potential", &self.potential),
            ("eps", &self.eps),
            ("nodes", &self.nodes),
            ("from", &self.from),
            ("to", &self.to),
            ("waypoints", &self.waypoints),
            ("knots", &self.knots),
            ("objective", &self.objective),
            ("out", &self.out),
            ("seed", &self.seed),
            ("jitter", &self.jitter),
            ("schedule", &self.schedule),
            ("max_iterations", &self.max_iterations),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Locate and classify critical points in a box.
    CriticalPoints {
        #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
        lower: f64,
        #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
        upper: f64,
        /// Seeds per axis.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Minimize I or J over paths from --from to --to.
    Minimize,
    /// Gradient orbits out of a saddle, or a connection to --to.
    Heteroclinic,
    /// Transition graph with all gradient orbits and the transition energy.
    Graph,
    /// Limit functional on a visit sequence.
    Gamma {
        /// Comma-separated critical points.
        #[arg(long)]
        route: Option<String>,
        /// Also minimize I at --eps from a start through the route and compare.
        #[arg(long)]
        crosscheck: bool,
    },
    /// Data behind figure N of the triple-well study.
    Figure {
        #[arg(value_parser = clap::value_parser!(u8).range(1..=9))]
        n: u8,
    },
    /// Runs config files in parallel, each into --out/<file stem>.
    Batch {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

impl Command {
    /// The command a batch config names with `command` (and `figure`).
    fn from_config(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let name = cfg
            .command
            .as_deref()
            .ok_or_else(|| CliError::Usage("config has no command".into()))?;
        Ok(match name {
            "critical-points" => Command::CriticalPoints {
                lower: -2.0,
                upper: 2.0,
                grid: None,
            },
            "minimize" => Command::Minimize,
            "heteroclinic" => Command::Heteroclinic,
            "graph" => Command::Graph,
            "gamma" => Command::Gamma {
                route: None,
                crosscheck: false,
            },
            "figure" => Command::Figure {
                n: cfg.figure.ok_or_else(|| CliError::Usage("figure config needs `figure = N`".into()))?,
            },
            other => return Err(CliError::Usage(format!("unknown command {other:?} in config"))),
        })
    }
}

/// Parses `args` (including the program name), runs, prints the result
/// document to stdout or a diagnostic to stderr, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut cfg = ExperimentConfig::default();
    let result = cli.settings.apply(&mut cfg).and_then(|_| match &cli.command {
        Command::Batch { configs } => batch(&cfg, configs),
        command => execute(command, &cfg, &cfg.out),
    });
    match result {
        Ok((doc, code)) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&doc).unwrap_or_default());
            code
        }
        Err(e) => {
            let doc = e.diagnostic(Some(&cfg.out));
            eprintln!("{}", serde_json::to_string_pretty(&doc).unwrap_or_default());
            e.exit_code()
        }
    }
}

fn execute(command: &Command, cfg: &ExperimentConfig, dir: &Path) -> Result<(Value, i32), CliError> {
    cfg.validate()?;
    let out = Output::in_dir(dir)?;
    let p = cfg.potential()?;
    let p = p.as_ref();
    let doc = match command {
        Command::CriticalPoints { lower, upper, grid } => critical_points(p, *lower, *upper, *grid, &out)?,
        Command::Minimize => minimize(p, cfg, &out)?,
        Command::Heteroclinic => heteroclinic(p, cfg, &out)?,
        Command::Graph => {
            let (_, graph) = graph(p, cfg)?;
            out.json("critical_points.json", &graph.points)?;
            let doc: Value = serde_json::from_str(&graph.to_json()?).map_err(transpath::Error::from)?;
            out.json("graph.json", &doc)?;
            doc
        }
        Command::Gamma { route, crosscheck } => gamma(p, cfg, route.as_deref(), *crosscheck, &out)?,
        Command::Figure { n } => {
            run_figure(*n, cfg, &out)?;
            json!({"figure": n, "out": dir})
        }
        Command::Batch { .. } => return Err(CliError::Usage("batch configs cannot run batch".into())),
    };
    Ok((doc, 0))
}

fn batch(base: &ExperimentConfig, configs: &[PathBuf]) -> Result<(Value, i32), CliError> {
    let results: Vec<(Value, i32)> = configs
        .par_iter()
        .map(|file| {
            let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let dir = base.out.join(&stem);
            let mut cfg = base.clone();
            let outcome = cfg
                .apply_file(file)
                .and_then(|_| Command::from_config(&cfg))
                .and_then(|c| execute(&c, &cfg, &dir));
            match outcome {
                Ok((doc, code)) => (json!({"config": file, "out": dir, "exit_code": code, "result": doc}), code),
                Err(e) => {
                    let code = e.exit_code();
                    (json!({"config": file, "out": dir, "exit_code": code, "error": e.diagnostic(Some(&dir))}), code)
                }
            }
        })
        .collect();
    let code = results.iter().map(|(_, c)| *c).max().unwrap_or(0);
    Ok((Value::Array(results.into_iter().map(|(d, _)| d).collect()), code))
}

fn critical_points(p: &dyn Potential, lower: f64, upper: f64, grid: Option<usize>, out: &Output) -> Result<Value, CliError> {
    let grid = grid.unwrap_or(if p.dim() == 1 { 201 } else { 61 });
    let cps = find_critical_points(p, &SearchBox::cube(p.dim(), lower, upper)?, grid)?;
    let admissibility = check_admissibility(p, &cps, 2.0 * upper.abs().max(lower.abs()));
    out.json("critical_points.json", &cps)?;
    out.json("admissibility.json", &admissibility)?;
    Ok(json!({"critical_points": cps, "admissibility": admissibility}))
}

fn required<'a>(value: &'a Option<String>, flag: &str) -> Result<&'a str, CliError> {
    value.as_deref().ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn minimize(p: &dyn Potential, cfg: &ExperimentConfig, out: &Output) -> Result<Value, CliError> {
    let mut waypoints = vec![resolve_point(p, required(&cfg.from, "from")?)?];
    for w in &cfg.waypoints {
        waypoints.push(resolve_point(p, w)?);
    }
    waypoints.push(resolve_point(p, required(&cfg.to, "to")?)?);
    let start = start_path(&waypoints, cfg.knots.as_deref(), cfg.nodes, cfg.jitter, cfg.seed)?;
    let run = run_minimization(p, &start, &MinimizeSpec::from_config("minimize", cfg.objective, cfg))?;
    out.path("path.csv", &run.path)?;
    out.trace("trace.csv", &run.trace)?;
    let doc = json!({"objective": cfg.objective, "config": cfg, "summary": run.summary()});
    out.json("summary.json", &doc)?;
    Ok(doc)
}

fn search_box(p: &dyn Potential) -> Result<SearchBox, CliError> {
    Ok(SearchBox::cube(p.dim(), -2.0, 2.0)?)
}

fn points(p: &dyn Potential) -> Result<CriticalPointSet, CliError> {
    let grid = if p.dim() == 1 { 201 } else { 61 };
    Ok(find_critical_points(p, &search_box(p)?, grid)?)
}

fn heteroclinic(p: &dyn Potential, cfg: &ExperimentConfig, out: &Output) -> Result<Value, CliError> {
    let cps = points(p)?;
    let from = resolve_critical(p, &cps, required(&cfg.from, "from")?)?;
    let a = &cps.points()[from];
    let orbits = match &cfg.to {
        None => {
            let opts = ShootingOptions {
                bounds: Some(search_box(p)?.inflated(1.0)),
                ..ShootingOptions::default()
            };
            let mut orbits = Vec::new();
            for v in a.unstable_directions() {
                for sign in [1.0, -1.0] {
                    orbits.push(gradient_connection(p, a, v, sign, &cps, &opts)?);
                }
            }
            if orbits.is_empty() {
                return Err(CliError::Usage(format!("{:?} has no unstable direction; give --to", a.location)));
            }
            orbits
        }
        Some(to) => {
            let b = &cps.points()[resolve_critical(p, &cps, to)?];
            let waypoints = cfg
                .waypoints
                .iter()
                .map(|w| resolve_point(p, w))
                .collect::<Result<Vec<_>, _>>()?;
            vec![hamiltonian_connection_adaptive(p, a, b, &waypoints, &ConnectionOptions::default())?]
        }
    };
    let mut docs = Vec::new();
    for (k, o) in orbits.iter().enumerate() {
        let file = format!("orbit_{k}.csv");
        out.path(&file, &o.path)?;
        docs.push(json!({"file": file, "orbit": o, "check": verify_orbit(p, o)?}));
    }
    let doc = json!({"from": from, "orbits": docs});
    out.json("orbits.json", &doc)?;
    Ok(doc)
}

/// Graph with the triple-well saddle connections, plus the connection from
/// --from to --to when both are given.
fn graph(p: &dyn Potential, cfg: &ExperimentConfig) -> Result<(CriticalPointSet, TransitionGraph), CliError> {
    let cps = points(p)?;
    let mut requests = if p.name() == "triple-well" {
        triple_well_saddle_requests(&cps)
    } else {
        Vec::new()
    };
    if let (Some(from), Some(to)) = (&cfg.from, &cfg.to) {
        requests.push(HamiltonianRequest {
            from: resolve_critical(p, &cps, from)?,
            to: resolve_critical(p, &cps, to)?,
            waypoints: cfg
                .waypoints
                .iter()
                .map(|w| resolve_point(p, w))
                .collect::<Result<_, _>>()?,
        });
    }
    let graph = build_transition_graph(p, &cps, &requests, &GraphOptions::default())?;
    Ok((cps, graph))
}

fn gamma(p: &dyn Potential, cfg: &ExperimentConfig, route: Option<&str>, crosscheck: bool, out: &Output) -> Result<Value, CliError> {
    let names: Vec<String> = match route {
        Some(r) => r.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        None => cfg.route.clone(),
    };
    if names.is_empty() {
        return Err(CliError::Usage("--route is required".into()));
    }
    let plain = ExperimentConfig {
        from: None,
        to: None,
        ..cfg.clone()
    };
    let (cps, graph) = graph(p, &plain)?;
    let sequence = names
        .iter()
        .map(|n| resolve_critical(p, &cps, n))
        .collect::<Result<Vec<_>, _>>()?;
    let predicted = optimize_support(&graph, &sequence)?;
    let report = eval_i0(&graph, &predicted)?;
    let mut doc = json!({"route": names, "sequence": sequence, "path": predicted, "report": report});
    if crosscheck {
        let waypoints: Vec<Vec<f64>> = sequence.iter().map(|i| cps.points()[*i].location.clone()).collect();
        let start = start_path(&waypoints, None, cfg.nodes, cfg.jitter, cfg.seed)?;
        let spec = MinimizeSpec::from_config("crosscheck", transpath::functionals::Objective::OnsagerMachlup, cfg);
        let run = run_minimization(p, &start, &spec)?;
        out.path("path.csv", &run.path)?;
        out.trace("trace.csv", &run.trace)?;
        doc["comparison"] = json!(compare_with_eps(&graph, &run.path, &run.report, &predicted, &report));
        doc["minimizer"] = run.summary();
    }
    out.json("gamma.json", &doc)?;
    Ok(doc)
}
