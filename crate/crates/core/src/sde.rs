//! Euler-Maruyama integration of the phi and Bloch-vector Itô processes,
//! reproducible trajectory ensembles and the Zeno / anti-Zeno rate sweep.
//!
//! Every trajectory draws its Wiener increments from its own ChaCha8 stream,
//! selected by trajectory index, so ensembles give bit-identical results for
//! any number of rayon workers. Partial statistics are formed over fixed-size
//! chunks of trajectory indices and merged in index order.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::fpe::PdfSampler;
use crate::model::{BlochState, ModelError, ModelParams, PhiState, Strengths};
use crate::stats::{RunningStats, CHUNK};

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite state at t = {time}: {state}")]
    NonFinite { time: f64, state: String },
    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: u64,
        #[source]
        source: Box<SdeError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub scheme: Scheme,
    /// Record every `record_stride`-th step (the final state is always kept).
    pub record_stride: usize,
    pub record_increments: bool,
    /// Project the Bloch vector back onto the unit sphere after each step.
    pub renormalize: bool,
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_end: f64, seed: u64) -> Self {
        Self {
            dt,
            t_end,
            seed,
            scheme: Scheme::EulerMaruyama,
            record_stride: 1,
            record_increments: false,
            renormalize: false,
        }
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_increments(mut self) -> Self {
        self.record_increments = true;
        self
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SdeError::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(SdeError::InvalidConfig(format!(
                "t_end must be >= 0, got {}",
                self.t_end
            )));
        }
        if self.record_stride == 0 {
            return Err(SdeError::InvalidConfig("record_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of steps; the last one is shortened if `t_end` is not a
    /// multiple of `dt`.
    pub fn n_steps(&self) -> usize {
        let ratio = self.t_end / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() <= 1e-9 * ratio.max(1.0) {
            n as usize
        } else {
            ratio.ceil() as usize
        }
    }

    fn step_time(&self, k: usize, n: usize) -> f64 {
        if k == n {
            self.t_end
        } else {
            k as f64 * self.dt
        }
    }
}

/// Independent, reproducible random stream for one trajectory.
pub fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn wiener<R: Rng + ?Sized>(rng: &mut R, sqrt_dt: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * sqrt_dt
}

/// One Euler-Maruyama step of the phi equation.
#[inline]
pub fn step_phi(state: PhiState, s: &Strengths, dt: f64, dw: f64) -> PhiState {
    let phi = state.phi();
    let (sin, cos) = phi.sin_cos();
    let a = s.asymmetry();
    let drift = s.drift_rev() - a * 2.0 * sin * cos;
    let weight = s.alpha_x * s.alpha_x * sin * sin + s.alpha_y * s.alpha_y * cos * cos;
    let b = -2.0 * weight.sqrt();
    state.advance(drift * dt + b * dw)
}

/// One Euler-Maruyama step of the Bloch equations.
#[inline]
pub fn step_bloch(state: &BlochState, s: &Strengths, dt: f64, dw_x: f64, dw_y: f64) -> BlochState {
    let c = s.bloch_coefficients(state);
    BlochState {
        x: state.x + c.drift[0] * dt + c.noise_x[0] * dw_x + c.noise_y[0] * dw_y,
        y: state.y + c.drift[1] * dt + c.noise_x[1] * dw_x + c.noise_y[1] * dw_y,
        z: state.z + c.drift[2] * dt + c.noise_x[2] * dw_x + c.noise_y[2] * dw_y,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    /// Wiener increments per step; `[dW, 0]` for phi, `[dW_x, dW_y]` for Bloch.
    pub increments: Option<Vec<[f64; 2]>>,
}

impl<S> Trajectory<S> {
    fn with_capacity(n: usize, increments: bool, steps: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            increments: increments.then(|| Vec::with_capacity(steps)),
        }
    }

    pub fn last(&self) -> Option<&S> {
        self.states.last()
    }
}

pub fn simulate_phi(
    initial: PhiState,
    params: &ModelParams,
    config: &IntegratorConfig,
    index: u64,
) -> Result<Trajectory<PhiState>, SdeError> {
    config.validate()?;
    let mut rng = trajectory_rng(config.seed, index);
    simulate_phi_with(initial, params, config, &mut rng)
}

fn simulate_phi_with<R: Rng + ?Sized>(
    initial: PhiState,
    params: &ModelParams,
    config: &IntegratorConfig,
    rng: &mut R,
) -> Result<Trajectory<PhiState>, SdeError> {
    let n = config.n_steps();
    let mut traj = Trajectory::with_capacity(n / config.record_stride + 2, config.record_increments, n);
    let constant = params.schedule().is_constant().then(|| params.at(0.0));
    let mut state = initial;
    traj.times.push(0.0);
    traj.states.push(state);
    for k in 0..n {
        let t = config.step_time(k, n);
        let t_next = config.step_time(k + 1, n);
        let dt = t_next - t;
        let s = constant.unwrap_or_else(|| params.at(t));
        let dw = wiener(rng, dt.sqrt());
        state = step_phi(state, &s, dt, dw);
        if !state.phi().is_finite() {
            return Err(SdeError::NonFinite {
                time: t_next,
                state: format!("{state:?}"),
            });
        }
        if let Some(inc) = traj.increments.as_mut() {
            inc.push([dw, 0.0]);
        }
        if (k + 1) % config.record_stride == 0 || k + 1 == n {
            traj.times.push(t_next);
            traj.states.push(state);
        }
    }
    Ok(traj)
}

pub fn simulate_bloch(
    initial: BlochState,
    params: &ModelParams,
    config: &IntegratorConfig,
    index: u64,
) -> Result<Trajectory<BlochState>, SdeError> {
    config.validate()?;
    let mut rng = trajectory_rng(config.seed, index);
    let n = config.n_steps();
    let mut traj = Trajectory::with_capacity(n / config.record_stride + 2, config.record_increments, n);
    let mut state = initial;
    traj.times.push(0.0);
    traj.states.push(state);
    for k in 0..n {
        let t = config.step_time(k, n);
        let t_next = config.step_time(k + 1, n);
        let dt = t_next - t;
        let sqrt_dt = dt.sqrt();
        let dw_x = wiener(&mut rng, sqrt_dt);
        let dw_y = wiener(&mut rng, sqrt_dt);
        state = step_bloch(&state, &params.at(t), dt, dw_x, dw_y);
        if config.renormalize {
            let norm = state.norm();
            if norm > 0.0 {
                state = BlochState::new(state.x / norm, state.y / norm, state.z / norm);
            }
        }
        if !state.is_finite() {
            return Err(SdeError::NonFinite {
                time: t_next,
                state: format!("{state:?}"),
            });
        }
        if let Some(inc) = traj.increments.as_mut() {
            inc.push([dw_x, dw_y]);
        }
        if (k + 1) % config.record_stride == 0 || k + 1 == n {
            traj.times.push(t_next);
            traj.states.push(state);
        }
    }
    Ok(traj)
}

/// Distribution of the initial angle of each trajectory.
#[derive(Debug, Clone)]
pub enum InitialDistribution {
    Point(f64),
    Uniform,
    /// Piecewise-constant density on the cells of a grid.
    Pdf(PdfSampler),
}

impl InitialDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PhiState {
        match self {
            InitialDistribution::Point(phi) => PhiState::new(*phi),
            InitialDistribution::Uniform => PhiState::new(rng.random_range(0.0..TAU)),
            InitialDistribution::Pdf(sampler) => PhiState::new(sampler.sample(rng)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    /// Unwrapped angle.
    UnwrappedPhi,
    /// Unwrapped angle minus its initial value.
    Displacement,
    Cos2Phi,
    Sin2Phi,
    /// `cos^2(phi)`
    CosSquared,
}

impl Observable {
    #[inline]
    fn eval(&self, state: &PhiState, start: &PhiState) -> f64 {
        match self {
            Observable::UnwrappedPhi => state.unwrapped(),
            Observable::Displacement => state.unwrapped() - start.unwrapped(),
            Observable::Cos2Phi => (2.0 * state.phi()).cos(),
            Observable::Sin2Phi => (2.0 * state.phi()).sin(),
            Observable::CosSquared => {
                let c = state.phi().cos();
                c * c
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// `None` when fewer than two samples are available.
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries {
    pub observable: Observable,
    pub estimates: Vec<Estimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub sample_count: usize,
    pub times: Vec<f64>,
    pub series: Vec<ObservableSeries>,
}

impl EnsembleStats {
    pub fn series(&self, observable: Observable) -> Option<&ObservableSeries> {
        self.series.iter().find(|s| s.observable == observable)
    }

    pub fn final_estimate(&self, observable: Observable) -> Option<Estimate> {
        self.series(observable).and_then(|s| s.estimates.last().copied())
    }
}

/// Run `n_traj` independent phi trajectories and average the requested
/// observables at every recorded time.
pub fn run_ensemble(
    initial: &InitialDistribution,
    params: &ModelParams,
    config: &IntegratorConfig,
    n_traj: usize,
    observables: &[Observable],
) -> Result<EnsembleStats, SdeError> {
    config.validate()?;
    if n_traj == 0 {
        return Err(SdeError::InvalidConfig("n_traj must be >= 1".into()));
    }
    let n = config.n_steps();
    let times: Vec<f64> = (0..=n)
        .filter(|&k| k % config.record_stride == 0 || k == n)
        .map(|k| config.step_time(k, n))
        .collect();
    let slots = times.len() * observables.len();

    let chunks: Vec<Result<Vec<RunningStats>, SdeError>> = (0..n_traj.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![RunningStats::default(); slots];
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_traj);
            for index in lo..hi {
                let mut rng = trajectory_rng(config.seed, index as u64);
                let start = initial.sample(&mut rng);
                let traj = simulate_phi_with(start, params, config, &mut rng).map_err(|e| {
                    SdeError::Trajectory {
                        index: index as u64,
                        source: Box::new(e),
                    }
                })?;
                for (ti, state) in traj.states.iter().enumerate() {
                    for (oi, obs) in observables.iter().enumerate() {
                        acc[oi * times.len() + ti].push(obs.eval(state, &start));
                    }
                }
            }
            Ok(acc)
        })
        .collect();

    let mut total = vec![RunningStats::default(); slots];
    for chunk in chunks {
        for (t, c) in total.iter_mut().zip(chunk?) {
            t.merge(&c);
        }
    }
    let series = observables
        .iter()
        .enumerate()
        .map(|(oi, &observable)| ObservableSeries {
            observable,
            estimates: total[oi * times.len()..(oi + 1) * times.len()]
                .iter()
                .map(|s| Estimate {
                    mean: s.mean(),
                    stderr: s.stderr(),
                })
                .collect(),
        })
        .collect();
    Ok(EnsembleStats {
        sample_count: n_traj,
        times,
        series,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub dt: f64,
    /// Averaging interval of each trajectory.
    pub t_end: f64,
    pub n_traj: usize,
    /// Segments per trajectory for batch-mean errors when `n_traj == 1`.
    pub batches: usize,
    pub seed: u64,
    pub initial_phi: f64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), SdeError> {
        IntegratorConfig::new(self.dt, self.t_end, self.seed).validate()?;
        if !(self.t_end > 0.0) {
            return Err(SdeError::InvalidConfig("sweep needs t_end > 0".into()));
        }
        if self.n_traj == 0 {
            return Err(SdeError::InvalidConfig("n_traj must be >= 1".into()));
        }
        if self.batches == 0 {
            return Err(SdeError::InvalidConfig("batches must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub alpha_y: f64,
    pub mean_rate: f64,
    pub stderr: Option<f64>,
}

/// Mean rate of change of the unwrapped angle for each sigma_y strength.
///
/// Each trajectory contributes `(phi(t_end) - phi(0)) / t_end`. With a single
/// trajectory per strength the error comes from equal-length batches of that
/// trajectory instead. Trajectory `k` uses random stream `k` for every
/// strength (common random numbers).
pub fn zeno_sweep(
    base: &ModelParams,
    alpha_y_values: &[f64],
    config: &SweepConfig,
) -> Result<Vec<SweepRow>, SdeError> {
    config.validate()?;
    if !base.schedule().is_constant() {
        return Err(SdeError::InvalidConfig(
            "zeno sweep needs a time-independent alpha_x".into(),
        ));
    }
    let params: Vec<ModelParams> = alpha_y_values
        .iter()
        .map(|&ay| base.with_alpha_y(ay))
        .collect::<Result<_, _>>()?;
    let integ = IntegratorConfig::new(config.dt, config.t_end, config.seed);
    let n = integ.n_steps();
    let batches = if config.n_traj == 1 { config.batches } else { 1 };
    let boundaries: Vec<usize> = (1..=batches).map(|b| b * n / batches).collect();

    let jobs: Vec<(usize, usize)> = (0..params.len())
        .flat_map(|i| (0..config.n_traj).map(move |k| (i, k)))
        .collect();
    let rates: Vec<Result<Vec<f64>, SdeError>> = jobs
        .par_iter()
        .map(|&(i, k)| {
            // Trajectory k sees the same Wiener path at every strength, so
            // differences between strengths carry less noise.
            let stream = k as u64;
            let mut rng = trajectory_rng(config.seed, stream);
            let s = params[i].at(0.0);
            let mut state = PhiState::new(config.initial_phi);
            let mut seg_start = (0usize, state.unwrapped());
            let mut out = Vec::with_capacity(batches);
            let mut next = 0;
            for step in 0..n {
                let t = integ.step_time(step, n);
                let dt = integ.step_time(step + 1, n) - t;
                state = step_phi(state, &s, dt, wiener(&mut rng, dt.sqrt()));
                if step + 1 == boundaries[next] {
                    if !state.phi().is_finite() {
                        return Err(SdeError::Trajectory {
                            index: stream,
                            source: Box::new(SdeError::NonFinite {
                                time: integ.step_time(step + 1, n),
                                state: format!("{state:?}"),
                            }),
                        });
                    }
                    let t0 = integ.step_time(seg_start.0, n);
                    let t1 = integ.step_time(step + 1, n);
                    out.push((state.unwrapped() - seg_start.1) / (t1 - t0));
                    seg_start = (step + 1, state.unwrapped());
                    next += 1;
                }
            }
            Ok(out)
        })
        .collect();

    let mut rows = Vec::with_capacity(params.len());
    let mut it = rates.into_iter();
    for &alpha_y in alpha_y_values {
        let mut stats = RunningStats::default();
        for _ in 0..config.n_traj {
            for r in it.next().expect("one result per job")? {
                stats.push(r);
            }
        }
        rows.push(SweepRow {
            alpha_y,
            mean_rate: stats.mean(),
            stderr: stats.stderr(),
        });
    }
    Ok(rows)
}
