//! Experiment runners. Each writes one CSV table into the output directory
//! and returns a short summary for the manifest.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use zeno_core::entropy::{accumulate_components, EntropyError, SUM_RULE_TOLERANCE};
use zeno_core::fpe::{
    build_stationary_family, evolve_observed, fmt_num, periodic_cycle, stationary_for,
    stationary_pdf, CycleConfig, FpeError, PdfGrid, TimeStepping,
};
use zeno_core::sde::{simulate_bloch, simulate_phi, zeno_sweep, IntegratorConfig, SdeError, SweepConfig, SweepRow};
use zeno_core::{BlochState, ModelParams, PhiState};

use crate::config::{model_params, Experiment, ExperimentConfig, InitialPdf, Representation, Stepping};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Fpe(#[from] FpeError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error("model: {0}")]
    Model(String),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Files written and a summary of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

/// Run a resolved config, writing tables into `dir`.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path) -> Result<Outcome, RunError> {
    let params = model_params(config).map_err(RunError::Model)?;
    std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    match config.experiment {
        Experiment::ZenoSweep => run_sweep(config, &params, dir),
        Experiment::Stationary => run_stationary(config, &params, dir),
        Experiment::EvolvePdf => run_evolve(config, &params, dir),
        Experiment::PeriodicCycle => run_cycle(config, &params, dir),
        Experiment::EntropyComponents => run_entropy(config, &params, dir),
        Experiment::Trajectory => run_trajectory(config, &params, dir),
    }
}

fn mode(s: Option<Stepping>) -> TimeStepping {
    match s.unwrap_or(Stepping::Implicit) {
        Stepping::Implicit => TimeStepping::Implicit,
        Stepping::Explicit => TimeStepping::Explicit,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> RunError + '_ {
    move |source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["alpha_y", "mean_rate", "stderr"])?;
    for r in rows {
        let se = r.stderr.map(fmt_num).unwrap_or_default();
        w.write_record([fmt_num(r.alpha_y), fmt_num(r.mean_rate), se])?;
    }
    w.flush()?;
    Ok(())
}

fn write_pdfs(path: &Path, snapshots: &[PdfGrid]) -> Result<(), RunError> {
    PdfGrid::write_csv(snapshots, create(path)?).map_err(|e| match e {
        FpeError::Csv(source) => RunError::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => RunError::Fpe(other),
    })
}

fn run_sweep(config: &ExperimentConfig, params: &ModelParams, dir: &Path) -> Result<Outcome, RunError> {
    let n = &config.numerics;
    let values = n.alpha_y_values.as_ref().map(|v| v.to_vec()).unwrap_or_default();
    let sweep = SweepConfig {
        dt: n.dt.unwrap_or(1e-3),
        t_end: n.t_end.unwrap_or(1e4),
        n_traj: n.n_traj.unwrap_or(1),
        batches: n.batches.unwrap_or(10),
        seed: config.seed,
        initial_phi: n.initial_phi.unwrap_or(0.0),
    };
    let rows = zeno_sweep(params, &values, &sweep)?;
    let path = dir.join("zeno_sweep.csv");
    write_sweep(&rows, create(&path)?).map_err(csv_err(&path))?;
    let best = rows.iter().max_by(|a, b| a.mean_rate.total_cmp(&b.mean_rate));
    Ok(Outcome {
        files: vec![path],
        summary: json!({
            "rows": rows.len(),
            "alpha_y_at_max_rate": best.map(|r| r.alpha_y),
            "max_rate": best.map(|r| r.mean_rate),
        }),
    })
}

fn run_stationary(config: &ExperimentConfig, params: &ModelParams, dir: &Path) -> Result<Outcome, RunError> {
    let st = stationary_pdf(params, config.numerics.n_cells.unwrap_or(256))?;
    let path = dir.join("stationary.csv");
    write_pdfs(&path, std::slice::from_ref(&st.pdf))?;
    let cos2 = st.pdf.expectation(|p| p.cos().powi(2));
    Ok(Outcome {
        files: vec![path],
        summary: json!({
            "current": st.current,
            "mean_rate": 2.0 * PI * st.current,
            "cos2_mean": cos2,
            "face_residual": st.residual,
        }),
    })
}

fn initial_pdf(spec: &InitialPdf, params: &ModelParams, n_cells: usize) -> Result<PdfGrid, RunError> {
    Ok(match *spec {
        InitialPdf::Uniform => PdfGrid::uniform(n_cells)?,
        InitialPdf::Gaussian { center, width } => PdfGrid::from_fn(n_cells, |phi| {
            let d = (phi - center + PI).rem_euclid(2.0 * PI) - PI;
            (-d * d / (2.0 * width * width)).exp()
        })?,
        InitialPdf::Stationary => stationary_for(&params.at(0.0), n_cells)?.pdf,
    })
}

fn run_evolve(config: &ExperimentConfig, params: &ModelParams, dir: &Path) -> Result<Outcome, RunError> {
    let n = &config.numerics;
    let cells = n.n_cells.unwrap_or(256);
    let stride = n.record_stride.unwrap_or(100);
    let mut p = initial_pdf(n.initial_pdf.as_ref().unwrap_or(&InitialPdf::Uniform), params, cells)?;
    let mut snapshots = vec![p.clone()];
    let t_end = n.t_end.unwrap_or(1.0);
    let mut k = 0usize;
    evolve_observed(&mut p, params, t_end, n.dt.unwrap_or(1e-4), mode(n.stepping), |q| {
        k += 1;
        if k % stride == 0 || q.time() == t_end {
            snapshots.push(q.clone());
        }
    })?;
    if snapshots.last().map(|s| s.time()) != Some(p.time()) {
        snapshots.push(p.clone());
    }
    let path = dir.join("pdf.csv");
    write_pdfs(&path, &snapshots)?;
    Ok(Outcome {
        files: vec![path],
        summary: json!({ "snapshots": snapshots.len(), "final_mass": p.mass() }),
    })
}

fn cycle_config(config: &ExperimentConfig) -> CycleConfig {
    let n = &config.numerics;
    CycleConfig {
        n_cells: n.n_cells.unwrap_or(1024),
        dt: n.dt.unwrap_or(1e-5),
        tolerance: n.tolerance.unwrap_or(1e-4),
        max_periods: n.max_periods.unwrap_or(200),
        record_stride: n.record_stride.unwrap_or(10),
        record_periods: n.record_periods.unwrap_or(1),
        mode: mode(n.stepping),
    }
}

fn cycle_start(params: &ModelParams, n_cells: usize) -> Result<PdfGrid, RunError> {
    let (lo, hi) = params.schedule().range();
    let mut s = params.at(0.0);
    s.alpha_x = 0.5 * (lo + hi);
    Ok(stationary_for(&s, n_cells)?.pdf)
}

fn run_cycle(config: &ExperimentConfig, params: &ModelParams, dir: &Path) -> Result<Outcome, RunError> {
    let cfg = cycle_config(config);
    let cyc = periodic_cycle(params, &cycle_start(params, cfg.n_cells)?, &cfg)?;
    let path = dir.join("pdf.csv");
    write_pdfs(&path, &cyc.snapshots)?;
    Ok(Outcome {
        files: vec![path],
        summary: json!({
            "period": cyc.period,
            "periods_to_converge": cyc.periods_run,
            "distance_trace": cyc.distance_trace,
        }),
    })
}

fn run_entropy(config: &ExperimentConfig, params: &ModelParams, dir: &Path) -> Result<Outcome, RunError> {
    let cfg = cycle_config(config);
    let grid = config
        .numerics
        .alpha_grid
        .as_ref()
        .map(|g| g.to_vec())
        .unwrap_or_default();
    let family = build_stationary_family(params, &grid, cfg.n_cells)?;
    let cyc = periodic_cycle(params, &cycle_start(params, cfg.n_cells)?, &cfg)?;
    let tolerance = config.numerics.sum_rule_tolerance.unwrap_or(SUM_RULE_TOLERANCE);
    let ledger = accumulate_components(&cyc.snapshots, params, &family, Some(tolerance))?;
    let path = dir.join("ledger.csv");
    ledger.write_csv(create(&path)?).map_err(|e| match e {
        EntropyError::Csv(source) => RunError::Csv {
            path: path.clone(),
            source,
        },
        other => RunError::Entropy(other),
    })?;
    let last = ledger.len().saturating_sub(1);
    Ok(Outcome {
        files: vec![path],
        summary: json!({
            "period": cyc.period,
            "periods_to_converge": cyc.periods_run,
            "s_tot": ledger.s_tot.get(last),
            "s1": ledger.s1.get(last),
            "s2": ledger.s2.get(last),
            "s3": ledger.s3.get(last),
            "max_sum_rule_residual": ledger.max_sum_rule_residual(),
        }),
    })
}

fn run_trajectory(config: &ExperimentConfig, params: &ModelParams, dir: &Path) -> Result<Outcome, RunError> {
    let n = &config.numerics;
    let integ = IntegratorConfig::new(n.dt.unwrap_or(1e-4), n.t_end.unwrap_or(1.0), config.seed)
        .with_record_stride(n.record_stride.unwrap_or(1));
    let phi0 = n.initial_phi.unwrap_or(0.0);
    let path = dir.join("trajectory.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let points = match n.representation.unwrap_or(Representation::Phi) {
        Representation::Phi => {
            let traj = simulate_phi(PhiState::new(phi0), params, &integ, 0)?;
            w.write_record(["t", "phi", "phi_unwrapped"]).map_err(csv_err(&path))?;
            for (t, s) in traj.times.iter().zip(&traj.states) {
                w.write_record([fmt_num(*t), fmt_num(s.phi()), fmt_num(s.unwrapped())])
                    .map_err(csv_err(&path))?;
            }
            traj.times.len()
        }
        Representation::Bloch => {
            let traj = simulate_bloch(BlochState::equatorial(phi0), params, &integ, 0)?;
            w.write_record(["t", "x", "y", "z"]).map_err(csv_err(&path))?;
            for (t, r) in traj.times.iter().zip(&traj.states) {
                w.write_record([fmt_num(*t), fmt_num(r.x), fmt_num(r.y), fmt_num(r.z)])
                    .map_err(csv_err(&path))?;
            }
            traj.times.len()
        }
    };
    w.flush().map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(Outcome {
        files: vec![path],
        summary: json!({ "points": points }),
    })
}
