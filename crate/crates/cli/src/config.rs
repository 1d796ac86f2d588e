//! Experiment configuration files.
//!
//! A config is TOML with a top-level `experiment` and `seed`, and the
//! sections `[model]`, `[numerics]` and `[output]`:
//!
//! ```toml
//! experiment = "zeno-sweep"
//! seed = 2024
//!
//! [model]
//! epsilon = 0.5
//! alpha_x = 1.0          # or { offset = 2.0, amplitude = 1.0, period = 0.1 }
//!
//! [numerics]
//! alpha_y_values = { start = 0.0, stop = 2.0, count = 11 }
//! ```
//!
//! Omitted numerics take experiment-specific defaults. [`resolve`] fills them
//! in, so the resolved config written to the run manifest is complete.

use std::f64::consts::TAU;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zeno_core::fpe::linspace;
use zeno_core::{ModelParams, Schedule};

/// Version of the config dialect, recorded in every manifest.
pub const CONFIG_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ZenoSweep,
    Stationary,
    EvolvePdf,
    PeriodicCycle,
    EntropyComponents,
    Trajectory,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::ZenoSweep => "zeno-sweep",
            Experiment::Stationary => "stationary",
            Experiment::EvolvePdf => "evolve-pdf",
            Experiment::PeriodicCycle => "periodic-cycle",
            Experiment::EntropyComponents => "entropy-components",
            Experiment::Trajectory => "trajectory",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSection,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub epsilon: Option<f64>,
    pub alpha_y: Option<f64>,
    pub alpha_x: Option<AlphaX>,
}

/// sigma_x strength: a number, or a sinusoid given by its period or its
/// angular frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaX {
    Constant(f64),
    Sinusoidal(Sinusoid),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    pub offset: f64,
    pub amplitude: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angular_frequency: Option<f64>,
}

/// Either an explicit list or `count` evenly spaced values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    List(Vec<f64>),
    Range { start: f64, stop: f64, count: usize },
}

impl Values {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Values::List(v) => v.clone(),
            Values::Range { start, stop, count } => linspace(*start, *stop, *count),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepping {
    Implicit,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    Phi,
    Bloch,
}

/// Initial density of `evolve-pdf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialPdf {
    Uniform,
    /// Wrapped Gaussian bump.
    Gaussian { center: f64, width: f64 },
    /// Stationary density at the schedule's value at t = 0.
    Stationary,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub n_traj: Option<usize>,
    pub batches: Option<usize>,
    pub n_cells: Option<usize>,
    pub alpha_y_values: Option<Values>,
    pub alpha_grid: Option<Values>,
    pub tolerance: Option<f64>,
    pub max_periods: Option<usize>,
    pub record_stride: Option<usize>,
    pub record_periods: Option<usize>,
    pub sum_rule_tolerance: Option<f64>,
    pub initial_phi: Option<f64>,
    pub initial_pdf: Option<InitialPdf>,
    pub stepping: Option<Stepping>,
    pub representation: Option<Representation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

/// One problem with a config, tied to the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config:\n{}", format_list(.0))]
    Invalid(Vec<Diagnostic>),
}

fn format_list(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse(text: &str) -> Result<ExperimentConfig, toml::de::Error> {
    toml::from_str(text)
}

/// Problems that would make [`resolve`] reject the config; empty when the
/// config is runnable.
pub fn validate(config: &ExperimentConfig) -> Vec<Diagnostic> {
    resolve(config, false).err().unwrap_or_default()
}

/// Schedule described by the model section.
pub fn schedule(alpha_x: &AlphaX) -> Result<Schedule, String> {
    match *alpha_x {
        AlphaX::Constant(c) => Schedule::constant(c).map_err(|e| e.to_string()),
        AlphaX::Sinusoidal(s) => {
            let omega = match (s.period, s.angular_frequency) {
                (Some(p), None) if p > 0.0 && p.is_finite() => TAU / p,
                (None, Some(w)) => w,
                (Some(_), None) => return Err("period must be positive".into()),
                _ => return Err("give exactly one of period and angular_frequency".into()),
            };
            Schedule::sinusoidal(s.offset, s.amplitude, omega).map_err(|e| e.to_string())
        }
    }
}

pub fn model_params(config: &ExperimentConfig) -> Result<ModelParams, String> {
    let m = &config.model;
    let alpha_x = m.alpha_x.as_ref().ok_or("alpha_x missing")?;
    ModelParams::new(
        m.epsilon.ok_or("epsilon missing")?,
        m.alpha_y.unwrap_or(0.0),
        schedule(alpha_x)?,
    )
    .map_err(|e| e.to_string())
}

/// Fill in experiment defaults and check every field. `paper_scale` switches
/// the Zeno sweep to a single averaging interval of 1e5 per strength.
pub fn resolve(config: &ExperimentConfig, paper_scale: bool) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut out = config.clone();
    let exp = config.experiment;

    let epsilon = match config.model.epsilon {
        Some(e) if e.is_finite() => e,
        Some(e) => {
            diags.push(Diagnostic::new("model.epsilon", format!("must be finite, got {e}")));
            0.0
        }
        None => {
            diags.push(Diagnostic::new("model.epsilon", "missing"));
            0.0
        }
    };
    out.model.alpha_y = Some(config.model.alpha_y.unwrap_or(0.0));
    let sched = match &config.model.alpha_x {
        None => {
            diags.push(Diagnostic::new("model.alpha_x", "missing alpha_x schedule"));
            None
        }
        Some(a) => match schedule(a) {
            Ok(s) => Some(s),
            Err(e) => {
                diags.push(Diagnostic::new("model.alpha_x", e));
                None
            }
        },
    };
    if let Err(e) = model_params(&out) {
        if sched.is_some() && config.model.epsilon.is_some() {
            diags.push(Diagnostic::new("model.alpha_y", e));
        }
    }

    let strong = epsilon.abs() >= 5.0;
    let n = &mut out.numerics;
    let positive = |diags: &mut Vec<Diagnostic>, field: &str, v: f64| {
        if !(v > 0.0 && v.is_finite()) {
            diags.push(Diagnostic::new(field, format!("must be positive, got {v}")));
        }
    };
    let at_least_one = |diags: &mut Vec<Diagnostic>, field: &str, v: usize| {
        if v == 0 {
            diags.push(Diagnostic::new(field, "must be >= 1"));
        }
    };
    let needs_constant = |diags: &mut Vec<Diagnostic>| {
        if let Some(s) = sched {
            if !s.is_constant() {
                diags.push(Diagnostic::new(
                    "model.alpha_x",
                    format!("{} needs a time-independent alpha_x", exp.name()),
                ));
            }
        }
    };
    let needs_periodic = |diags: &mut Vec<Diagnostic>| {
        if let Some(s) = sched {
            if s.is_constant() {
                diags.push(Diagnostic::new(
                    "model.alpha_x",
                    format!("{} needs a periodic alpha_x schedule", exp.name()),
                ));
            }
        }
    };
    let default_cells = if strong { 1024 } else { 256 };
    let default_dt = if strong { 1e-5 } else { 1e-4 };

    match exp {
        Experiment::ZenoSweep => {
            needs_constant(&mut diags);
            n.dt = Some(n.dt.unwrap_or(1e-3));
            if paper_scale {
                n.t_end = Some(1e5);
                n.n_traj = Some(1);
            } else {
                n.t_end = Some(n.t_end.unwrap_or(1e4));
                n.n_traj = Some(n.n_traj.unwrap_or(32));
            }
            n.batches = Some(n.batches.unwrap_or(10));
            n.initial_phi = Some(n.initial_phi.unwrap_or(0.0));
            positive(&mut diags, "numerics.dt", n.dt.unwrap());
            positive(&mut diags, "numerics.t_end", n.t_end.unwrap());
            at_least_one(&mut diags, "numerics.n_traj", n.n_traj.unwrap());
            at_least_one(&mut diags, "numerics.batches", n.batches.unwrap());
            match &n.alpha_y_values {
                None => diags.push(Diagnostic::new("numerics.alpha_y_values", "missing")),
                Some(v) => {
                    let v = v.to_vec();
                    if v.is_empty() || v.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                        diags.push(Diagnostic::new(
                            "numerics.alpha_y_values",
                            "need at least one finite value >= 0",
                        ));
                    }
                }
            }
        }
        Experiment::Stationary => {
            needs_constant(&mut diags);
            n.n_cells = Some(n.n_cells.unwrap_or(default_cells));
        }
        Experiment::EvolvePdf => {
            n.n_cells = Some(n.n_cells.unwrap_or(default_cells));
            n.dt = Some(n.dt.unwrap_or(default_dt));
            n.record_stride = Some(n.record_stride.unwrap_or(100));
            n.stepping = Some(n.stepping.unwrap_or(Stepping::Implicit));
            n.initial_pdf = Some(n.initial_pdf.clone().unwrap_or(InitialPdf::Uniform));
            match n.t_end {
                None => diags.push(Diagnostic::new("numerics.t_end", "missing")),
                Some(t) => positive(&mut diags, "numerics.t_end", t),
            }
            positive(&mut diags, "numerics.dt", n.dt.unwrap());
            at_least_one(&mut diags, "numerics.record_stride", n.record_stride.unwrap());
            if let Some(InitialPdf::Gaussian { width, .. }) = n.initial_pdf {
                positive(&mut diags, "numerics.initial_pdf.width", width);
            }
        }
        Experiment::PeriodicCycle | Experiment::EntropyComponents => {
            needs_periodic(&mut diags);
            n.n_cells = Some(n.n_cells.unwrap_or(default_cells));
            n.dt = Some(n.dt.unwrap_or(default_dt));
            n.tolerance = Some(n.tolerance.unwrap_or(1e-4));
            n.max_periods = Some(n.max_periods.unwrap_or(200));
            n.record_stride = Some(n.record_stride.unwrap_or(10));
            n.record_periods = Some(n.record_periods.unwrap_or(1));
            n.stepping = Some(n.stepping.unwrap_or(Stepping::Implicit));
            positive(&mut diags, "numerics.dt", n.dt.unwrap());
            positive(&mut diags, "numerics.tolerance", n.tolerance.unwrap());
            at_least_one(&mut diags, "numerics.max_periods", n.max_periods.unwrap());
            at_least_one(&mut diags, "numerics.record_stride", n.record_stride.unwrap());
            at_least_one(&mut diags, "numerics.record_periods", n.record_periods.unwrap());
            if exp == Experiment::EntropyComponents {
                if let Some(s) = sched {
                    let (lo, hi) = s.range();
                    let grid = n.alpha_grid.clone().unwrap_or(Values::Range {
                        start: lo,
                        stop: hi,
                        count: 81,
                    });
                    let v = grid.to_vec();
                    if v.len() < 2 || v.windows(2).any(|w| !(w[1] > w[0])) {
                        diags.push(Diagnostic::new(
                            "numerics.alpha_grid",
                            "need at least two strictly increasing values",
                        ));
                    } else if v[0] > lo || v[v.len() - 1] < hi {
                        diags.push(Diagnostic::new(
                            "numerics.alpha_grid",
                            format!(
                                "grid [{}, {}] does not cover the schedule range [{lo}, {hi}]",
                                v[0],
                                v[v.len() - 1]
                            ),
                        ));
                    }
                    n.alpha_grid = Some(grid);
                }
                if let Some(t) = n.sum_rule_tolerance {
                    positive(&mut diags, "numerics.sum_rule_tolerance", t);
                }
            }
        }
        Experiment::Trajectory => {
            n.dt = Some(n.dt.unwrap_or(default_dt));
            n.record_stride = Some(n.record_stride.unwrap_or(1));
            n.initial_phi = Some(n.initial_phi.unwrap_or(0.0));
            n.representation = Some(n.representation.unwrap_or(Representation::Phi));
            match n.t_end {
                None => diags.push(Diagnostic::new("numerics.t_end", "missing")),
                Some(t) => positive(&mut diags, "numerics.t_end", t),
            }
            positive(&mut diags, "numerics.dt", n.dt.unwrap());
            at_least_one(&mut diags, "numerics.record_stride", n.record_stride.unwrap());
            if !n.initial_phi.unwrap().is_finite() {
                diags.push(Diagnostic::new("numerics.initial_phi", "must be finite"));
            }
        }
    }
    if let Some(cells) = n.n_cells {
        if cells < 4 || cells % 2 != 0 {
            diags.push(Diagnostic::new(
                "numerics.n_cells",
                format!("must be even and >= 4, got {cells}"),
            ));
        }
    }
    if diags.is_empty() {
        Ok(out)
    } else {
        Err(diags)
    }
}
