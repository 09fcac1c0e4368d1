//! Experiment configuration: defaults, a flat `key = value` file, then
//! command-line overrides.

use std::path::{Path, PathBuf};

use serde::Serialize;
use transpath::critical_points::CriticalPointSet;
use transpath::functionals::Objective;
use transpath::potential::{builtin, Potential, BUILTIN_NAMES};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub potential: String,
    pub eps: f64,
    /// Number of path segments `M`.
    pub nodes: usize,
    pub from: Option<String>,
    pub to: Option<String>,
    /// Interior waypoints of the start path, `;`-separated.
    pub waypoints: Vec<String>,
    /// Waypoint times as fractions of the interval, including 0 and 1.
    pub knots: Option<Vec<f64>>,
    pub objective: Objective,
    pub out: PathBuf,
    pub seed: u64,
    /// Amplitude of seeded uniform noise added to the interior of the start.
    pub jitter: f64,
    /// Decreasing ε values for warm-started minimization.
    pub schedule: Vec<f64>,
    pub max_iterations: usize,
    /// Visit sequence for the limit functional, `,`-separated.
    pub route: Vec<String>,
    /// Subcommand run by `batch`.
    pub command: Option<String>,
    /// Figure number run by `batch` when `command = figure`.
    pub figure: Option<u8>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            potential: "triple-well".into(),
            eps: 1e-3,
            nodes: 4000,
            from: None,
            to: None,
            waypoints: Vec::new(),
            knots: None,
            objective: Objective::OnsagerMachlup,
            out: PathBuf::from("out"),
            seed: 0,
            jitter: 0.0,
            schedule: Vec::new(),
            max_iterations: 400_000,
            route: Vec::new(),
            command: None,
            figure: None,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| usage(format!("bad value {value:?} for {key}")))
}

fn split_list(value: &str, sep: char) -> Vec<String> {
    value
        .split(sep)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

impl ExperimentConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        match key {
            "potential" => self.potential = value.to_string(),
            "eps" => self.eps = parse_num(key, value)?,
            "nodes" => self.nodes = parse_num(key, value)?,
            "from" => self.from = Some(value.to_string()),
            "to" => self.to = Some(value.to_string()),
            "waypoints" => self.waypoints = split_list(value, ';'),
            "knots" => {
                self.knots = Some(
                    split_list(value, ',')
                        .iter()
                        .map(|v| parse_num(key, v))
                        .collect::<Result<_, _>>()?,
                )
            }
            "objective" => self.objective = value.parse().map_err(|e| usage(format!("{e}")))?,
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse_num(key, value)?,
            "jitter" => self.jitter = parse_num(key, value)?,
            "schedule" => {
                self.schedule = split_list(value, ',')
                    .iter()
                    .map(|v| parse_num(key, v))
                    .collect::<Result<_, _>>()?
            }
            "max_iterations" => self.max_iterations = parse_num(key, value)?,
            "route" => self.route = split_list(value, ','),
            "command" => self.command = Some(value.to_string()),
            "figure" => self.figure = Some(parse_num(key, value)?),
            other => return Err(usage(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(usage(format!("eps must be positive, got {}", self.eps)));
        }
        if self.nodes < 3 {
            return Err(usage(format!("nodes must be at least 3, got {}", self.nodes)));
        }
        if !BUILTIN_NAMES.contains(&self.potential.as_str()) {
            return Err(usage(format!(
                "unknown potential {:?}; available: {}",
                self.potential,
                BUILTIN_NAMES.join(", ")
            )));
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<Box<dyn Potential>, CliError> {
        builtin(&self.potential).ok_or_else(|| usage(format!("unknown potential {:?}", self.potential)))
    }
}

/// Resolves a point given by name (`M0`) or by coordinates (`0.5,0.2`).
pub fn resolve_point(p: &dyn Potential, spec: &str) -> Result<Vec<f64>, CliError> {
    if let Some((_, x)) = p.named_points().into_iter().find(|(n, _)| n.eq_ignore_ascii_case(spec)) {
        return Ok(x);
    }
    let coords: Vec<f64> = split_list(spec, ',')
        .iter()
        .map(|v| v.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("{spec:?} is neither a named point nor coordinates")))?;
    if coords.len() != p.dim() {
        return Err(usage(format!(
            "point {spec:?} has {} coordinates, potential has dimension {}",
            coords.len(),
            p.dim()
        )));
    }
    Ok(coords)
}

/// Resolves a critical point by name, coordinates or index into `cps`.
pub fn resolve_critical(p: &dyn Potential, cps: &CriticalPointSet, spec: &str) -> Result<usize, CliError> {
    if let Ok(i) = spec.trim().parse::<usize>() {
        if i < cps.len() && p.dim() > 1 {
            return Ok(i);
        }
    }
    let x = resolve_point(p, spec)?;
    cps.find(&x, 1e-6)
        .ok_or_else(|| usage(format!("{spec:?} is not a critical point of {}", p.name())))
}
