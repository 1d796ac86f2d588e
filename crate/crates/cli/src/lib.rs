//! Config-driven runner for the measured-qubit experiments.

pub mod config;
pub mod experiments;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use crate::config::{ConfigError, ExperimentConfig, CONFIG_FORMAT};
use crate::experiments::{run_experiment, Outcome, RunError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
}

impl CliError {
    /// 2 for configuration problems, 3 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 3,
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paper_scale: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub outcome: Outcome,
}

/// Resolve, run and write the manifest next to the output tables.
pub fn run(config: &ExperimentConfig, overrides: &Overrides) -> Result<RunReport, CliError> {
    let mut config = config.clone();
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(out) = &overrides.out {
        config.output.dir = out.clone();
    }
    let resolved = config::resolve(&config, overrides.paper_scale).map_err(ConfigError::Invalid)?;
    let dir = resolved.output.dir.clone();
    log::info!("running {} into {}", resolved.experiment.name(), dir.display());
    let start = Instant::now();
    let outcome = run_experiment(&resolved, &dir)?;
    let wall = start.elapsed().as_secs_f64();
    let manifest = write_manifest(&resolved, overrides.paper_scale, &outcome, wall, &dir)?;
    Ok(RunReport {
        dir,
        manifest,
        outcome,
    })
}

fn write_manifest(
    config: &ExperimentConfig,
    paper_scale: bool,
    outcome: &Outcome,
    wall_time: f64,
    dir: &Path,
) -> Result<PathBuf, RunError> {
    let files: Vec<String> = outcome
        .files
        .iter()
        .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
        .collect();
    let manifest = json!({
        "experiment": config.experiment.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config_format": CONFIG_FORMAT,
        "paper_scale": paper_scale,
        "config": config,
        "outputs": files,
        "summary": outcome.summary,
        "wall_time_seconds": wall_time,
    });
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is plain JSON");
    std::fs::write(&path, text + "\n").map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
