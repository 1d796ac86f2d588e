//! Stochastic entropy production: trajectory increments, the stationary mean
//! rate, and the nonadiabatic / adiabatic / transient-housekeeping split of
//! the mean rate for a time-dependent measurement strength.
//!
//! Mean rates are midpoint quadratures on the cell-centred grid of
//! [`PdfGrid`]. Reflection `phi -> -phi` is the exact index map
//! `j -> n - 1 - j`.

use std::io;

use thiserror::Error;

use crate::fpe::{self, fmt_num, grid_sin_cos, FpeError, PdfGrid, StationaryFamily};
use crate::model::{ModelParams, PhiState, Strengths};
use crate::sde::{step_phi, trajectory_rng, Estimate};
use crate::stats::par_stats;

/// Distance from a zero of the diffusion coefficient below which trajectory
/// points are moved off the zero.
pub const DEGENERATE_OFFSET: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("diffusion vanishes at phi = {phi}")]
    DegenerateDiffusion { phi: f64 },
    #[error(
        "sum rule violated at t = {time}: total {total:e} vs s1 {s1:e} + s2 {s2:e} + s3 {s3:e} (tolerance {tolerance:e})"
    )]
    SumRule {
        time: f64,
        total: f64,
        s1: f64,
        s2: f64,
        s3: f64,
        tolerance: f64,
    },
    #[error("grids differ: {0} vs {1} cells")]
    GridMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Fpe(#[from] FpeError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Medium part of the entropy increment, term by term in the drift and
/// diffusion coefficients and the realised increment `dphi`:
///
/// ```text
/// A_irr/D dphi - A_rev A_irr/D dt + A_irr' dt - A_rev' dt - D'/D dphi
///   + (A_rev - A_irr) D'/D dt - D'' dt + D'^2/D dt
/// ```
pub fn medium_increment_general(s: &Strengths, phi: f64, dphi: f64, dt: f64) -> f64 {
    let a_rev = s.drift_rev();
    let a_irr = s.drift_irr(phi);
    let d = s.diffusion(phi);
    let d1 = s.diffusion_slope(phi);
    let d2 = s.diffusion_curvature(phi);
    let a_irr1 = s.drift_irr_slope(phi);
    let a_rev1 = 0.0;
    a_irr / d * dphi - a_rev * a_irr / d * dt + a_irr1 * dt - a_rev1 * dt - d1 / d * dphi
        + (a_rev - a_irr) * d1 / d * dt
        - d2 * dt
        + d1 * d1 / d * dt
}

/// Medium part in closed form, with `dW` the Wiener increment driving phi:
///
/// ```text
/// 9 a^2 sin^2(2 phi) / (2 S) dt - 6 a cos(2 phi) dt + 3 a sin(2 phi) / sqrt(S) dW
/// ```
///
/// where `a = ax^2 - ay^2` and `S = ax^2 sin^2(phi) + ay^2 cos^2(phi)`.
pub fn medium_increment_closed(s: &Strengths, phi: f64, dt: f64, dw: f64) -> f64 {
    let a = s.asymmetry();
    let w = s.noise_weight(phi);
    let (s2, c2) = (2.0 * phi).sin_cos();
    9.0 * a * a * s2 * s2 / (2.0 * w) * dt - 6.0 * a * c2 * dt + 3.0 * a * s2 / w.sqrt() * dw
}

/// Medium part when only sigma_x is measured:
/// `6 ax^2 (1 + cos^2 phi) dt + 6 ax cos(phi) dW_x`.
///
/// `dw_x` is the sigma_x channel increment; the phi noise `-2 ax |sin phi| dW`
/// equals `-2 ax sin(phi) dW_x`, so `dW_x = sgn(sin phi) dW`.
pub fn medium_increment_sigma_x(alpha_x: f64, phi: f64, dt: f64, dw_x: f64) -> f64 {
    let c = phi.cos();
    6.0 * alpha_x * alpha_x * (1.0 + c * c) * dt + 6.0 * alpha_x * c * dw_x
}

/// Mean medium entropy production per unit time at `phi`, the drift of the
/// closed form.
#[inline]
fn medium_rate_at(s: &Strengths, sin: f64, cos: f64) -> f64 {
    let a = s.asymmetry();
    let w = s.alpha_x * s.alpha_x * sin * sin + s.alpha_y * s.alpha_y * cos * cos;
    let s2 = 2.0 * sin * cos;
    let c2 = cos * cos - sin * sin;
    if a == 0.0 {
        return 0.0;
    }
    9.0 * a * a * s2 * s2 / (2.0 * w) - 6.0 * a * c2
}

/// Move `phi` at least [`DEGENERATE_OFFSET`] away from zeros of `D`.
fn regularize(s: &Strengths, phi: f64) -> Result<f64, EntropyError> {
    let nodes: &[f64] = match (s.alpha_x > 0.0, s.alpha_y > 0.0) {
        (true, true) => return Ok(phi),
        (true, false) => &[0.0, std::f64::consts::PI],
        (false, true) => &[std::f64::consts::FRAC_PI_2, 1.5 * std::f64::consts::PI],
        (false, false) => return Err(EntropyError::DegenerateDiffusion { phi }),
    };
    let wrapped = phi.rem_euclid(std::f64::consts::TAU);
    for &node in nodes {
        let mut delta = wrapped - node;
        delta -= std::f64::consts::TAU * (delta / std::f64::consts::TAU).round();
        if delta.abs() < DEGENERATE_OFFSET {
            let shifted = node + DEGENERATE_OFFSET.copysign(if delta == 0.0 { 1.0 } else { delta });
            log::warn!("phi = {phi} within {DEGENERATE_OFFSET:e} of a diffusion zero; evaluated at {shifted}");
            return Ok(phi - wrapped + shifted);
        }
    }
    Ok(phi)
}

/// Total entropy increment along one step `before -> after` of a trajectory,
/// with the density `p_before` at the start and `p_after` at the end of the
/// step. `-d ln p` uses log-linear interpolation of the grids.
pub fn dstot_increment(
    before: PhiState,
    after: PhiState,
    p_before: &PdfGrid,
    p_after: &PdfGrid,
    s: &Strengths,
    dt: f64,
) -> Result<f64, EntropyError> {
    let phi = regularize(s, before.phi())?;
    let dphi = after.unwrapped() - before.unwrapped();
    let dlnp = p_after.ln_density_at(after.phi()) - p_before.ln_density_at(before.phi());
    Ok(-dlnp + medium_increment_general(s, phi, dphi, dt))
}

/// Stationary mean rate `6 ax^2 (1 + <cos^2 phi>)` for sigma_x measurement.
pub fn mean_stot_rate_stationary(p_st: &PdfGrid, alpha_x: f64) -> f64 {
    6.0 * alpha_x * alpha_x * (1.0 + p_st.expectation(|phi| phi.cos().powi(2)))
}

/// Irreversible part `A_irr p - d(D p)/dphi` of a stationary current at the
/// cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct IrrCurrentProfile {
    pub values: Vec<f64>,
    pub alpha_x: f64,
}

/// Cell-centre values of `A_irr - dD/dphi - D d(ln p)/dphi`; multiplied by
/// `p` this is the irreversible current of `p`. Derivatives of `D` are exact,
/// the log-derivative is a central difference.
fn irr_velocity(p: &PdfGrid, s: &Strengths) -> Vec<f64> {
    let n = p.n_cells();
    let h = p.spacing();
    let lnp: Vec<f64> = p.values().iter().map(|v| v.ln()).collect();
    let a = s.asymmetry();
    (0..n)
        .map(|j| {
            let (sin, cos) = grid_sin_cos(2 * j + 1, 2 * n);
            let s2 = 2.0 * sin * cos;
            let d = 2.0 * (s.alpha_x * s.alpha_x * sin * sin + s.alpha_y * s.alpha_y * cos * cos);
            let dlnp = (lnp[(j + 1) % n] - lnp[(j + n - 1) % n]) / (2.0 * h);
            // A_irr - D' = -a s2 - 2 a s2
            let slope = if d == 0.0 { 0.0 } else { d * dlnp };
            -3.0 * a * s2 - slope
        })
        .collect()
}

pub fn irr_stationary_current(p_st: &PdfGrid, s: &Strengths) -> IrrCurrentProfile {
    let values = irr_velocity(p_st, s)
        .into_iter()
        .zip(p_st.values())
        .map(|(u, p)| u * p)
        .collect();
    IrrCurrentProfile {
        values,
        alpha_x: s.alpha_x,
    }
}

fn check_same(a: usize, b: usize) -> Result<(), EntropyError> {
    if a != b {
        return Err(EntropyError::GridMismatch(a, b));
    }
    Ok(())
}

/// `-sum dp/dt ln(p / p_st) h`
pub fn ds1_rate(p: &PdfGrid, dpdt: &[f64], p_st: &PdfGrid) -> Result<f64, EntropyError> {
    check_same(p.n_cells(), p_st.n_cells())?;
    check_same(p.n_cells(), dpdt.len())?;
    let sum: f64 = (0..p.n_cells())
        .map(|j| guarded(dpdt[j], p.values()[j], p_st.values()[j]))
        .sum();
    Ok(-sum * p.spacing())
}

/// `int p / D (J_st_irr(-phi) / p_st(-phi))^2 dphi` with `D` at the present
/// strengths.
pub fn ds2_rate(p: &PdfGrid, p_st: &PdfGrid, s: &Strengths) -> Result<f64, EntropyError> {
    check_same(p.n_cells(), p_st.n_cells())?;
    let n = p.n_cells();
    let u = irr_velocity(p_st, s);
    let mut sum = 0.0;
    for (j, &pj) in p.values().iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        let ur = u[n - 1 - j];
        let (sin, cos) = grid_sin_cos(2 * j + 1, 2 * n);
        let d = 2.0 * (s.alpha_x * s.alpha_x * sin * sin + s.alpha_y * s.alpha_y * cos * cos);
        if d == 0.0 {
            if ur != 0.0 {
                return Err(EntropyError::DegenerateDiffusion { phi: p.center(j) });
            }
            continue;
        }
        sum += pj * ur * ur / d;
    }
    Ok(sum * p.spacing())
}

/// `-sum dp/dt ln(p_st / p_st(-phi)) h`
pub fn ds3_rate(dpdt: &[f64], p_st: &PdfGrid) -> Result<f64, EntropyError> {
    check_same(dpdt.len(), p_st.n_cells())?;
    let n = p_st.n_cells();
    let v = p_st.values();
    let sum: f64 = (0..n).map(|j| guarded(dpdt[j], v[j], v[n - 1 - j])).sum();
    Ok(-sum * p_st.spacing())
}

/// `rate * ln(num / den)`, zero when the rate vanishes or a density underflows.
#[inline]
fn guarded(rate: f64, num: f64, den: f64) -> f64 {
    if rate == 0.0 || num <= 0.0 || den <= 0.0 {
        if rate != 0.0 {
            log::trace!("skipping cell with vanishing density");
        }
        return 0.0;
    }
    rate * (num.ln() - den.ln())
}

/// `-sum p ln p h`
pub fn gibbs_entropy(p: &PdfGrid) -> f64 {
    -p.values()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
        * p.spacing()
}

/// Mean total entropy production rate computed without the stationary
/// family: the Gibbs entropy rate `-sum dp/dt ln p h` plus the ensemble mean
/// of the medium term.
pub fn total_rate(p: &PdfGrid, dpdt: &[f64], s: &Strengths) -> Result<f64, EntropyError> {
    check_same(p.n_cells(), dpdt.len())?;
    let n = p.n_cells();
    let mut gibbs = 0.0;
    let mut medium = 0.0;
    for (j, &pj) in p.values().iter().enumerate() {
        if pj > 0.0 && dpdt[j] != 0.0 {
            gibbs -= dpdt[j] * pj.ln();
        }
        if pj > 0.0 {
            let (sin, cos) = grid_sin_cos(2 * j + 1, 2 * n);
            medium += pj * medium_rate_at(s, sin, cos);
        }
    }
    Ok((gibbs + medium) * p.spacing())
}

/// Instantaneous mean rates at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentRates {
    pub time: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub total: f64,
    pub gibbs: f64,
}

impl ComponentRates {
    pub fn component_sum(&self) -> f64 {
        self.s1 + self.s2 + self.s3
    }
}

pub fn component_rates(
    p: &PdfGrid,
    params: &ModelParams,
    family: &StationaryFamily,
) -> Result<ComponentRates, EntropyError> {
    let t = p.time();
    let s = params.at(t);
    let p_st = family.at(s.alpha_x)?;
    let dp = fpe::dpdt(p, params, t);
    Ok(ComponentRates {
        time: t,
        s1: ds1_rate(p, &dp, &p_st)?,
        s2: ds2_rate(p, &p_st, &s)?,
        s3: ds3_rate(&dp, &p_st)?,
        total: total_rate(p, &dp, &s)?,
        gibbs: gibbs_entropy(p),
    })
}

/// Cumulative mean entropy production and its components.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntropyLedger {
    pub times: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub s3: Vec<f64>,
    pub s_tot: Vec<f64>,
    pub gibbs: Vec<f64>,
    pub rates: Vec<ComponentRates>,
}

impl EntropyLedger {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest `|s_tot - (s1 + s2 + s3)| / max(1, |s_tot|)` over the record.
    pub fn max_sum_rule_residual(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let sum = self.s1[i] + self.s2[i] + self.s3[i];
                (self.s_tot[i] - sum).abs() / self.s_tot[i].abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }

    /// Write rows `(t, s1, s2, s3, s_tot, S_G)` with a header.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), EntropyError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "s1", "s2", "s3", "s_tot", "S_G"])?;
        for i in 0..self.len() {
            w.write_record([
                fmt_num(self.times[i]),
                fmt_num(self.s1[i]),
                fmt_num(self.s2[i]),
                fmt_num(self.s3[i]),
                fmt_num(self.s_tot[i]),
                fmt_num(self.gibbs[i]),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Sequential accumulator: feed densities in time order, cumulative values
/// are trapezoidal integrals of the rates.
pub struct LedgerBuilder<'a> {
    params: &'a ModelParams,
    family: &'a StationaryFamily,
    /// Relative sum-rule tolerance; `None` disables the check.
    tolerance: Option<f64>,
    ledger: EntropyLedger,
}

impl<'a> LedgerBuilder<'a> {
    pub fn new(params: &'a ModelParams, family: &'a StationaryFamily, tolerance: Option<f64>) -> Self {
        Self {
            params,
            family,
            tolerance,
            ledger: EntropyLedger::default(),
        }
    }

    pub fn push(&mut self, p: &PdfGrid) -> Result<(), EntropyError> {
        let r = component_rates(p, self.params, self.family)?;
        let l = &mut self.ledger;
        let next = match l.rates.last() {
            None => [0.0; 4],
            Some(prev) => {
                let dt = r.time - prev.time;
                if !(dt > 0.0) {
                    return Err(EntropyError::InvalidArgument(format!(
                        "times must increase: {} after {}",
                        r.time, prev.time
                    )));
                }
                let i = l.len() - 1;
                [
                    l.s1[i] + 0.5 * dt * (prev.s1 + r.s1),
                    l.s2[i] + 0.5 * dt * (prev.s2 + r.s2),
                    l.s3[i] + 0.5 * dt * (prev.s3 + r.s3),
                    l.s_tot[i] + 0.5 * dt * (prev.total + r.total),
                ]
            }
        };
        if let Some(tol) = self.tolerance {
            let allowed = tol * next[3].abs().max(1.0);
            if (next[3] - (next[0] + next[1] + next[2])).abs() > allowed {
                return Err(EntropyError::SumRule {
                    time: r.time,
                    total: next[3],
                    s1: next[0],
                    s2: next[1],
                    s3: next[2],
                    tolerance: allowed,
                });
            }
        }
        l.times.push(r.time);
        l.s1.push(next[0]);
        l.s2.push(next[1]);
        l.s3.push(next[2]);
        l.s_tot.push(next[3]);
        l.gibbs.push(r.gibbs);
        l.rates.push(r);
        Ok(())
    }

    pub fn finish(self) -> EntropyLedger {
        self.ledger
    }
}

/// Default relative tolerance of the sum-rule check in
/// [`accumulate_components`]: the total is computed independently of the
/// stationary family, so it agrees with the component sum only to the
/// spatial discretisation error.
pub const SUM_RULE_TOLERANCE: f64 = 2e-3;

/// Ledger over densities at increasing times.
pub fn accumulate_components(
    snapshots: &[PdfGrid],
    params: &ModelParams,
    family: &StationaryFamily,
    tolerance: Option<f64>,
) -> Result<EntropyLedger, EntropyError> {
    let mut b = LedgerBuilder::new(params, family, tolerance);
    for p in snapshots {
        b.push(p)?;
    }
    Ok(b.finish())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    pub n_traj: usize,
    pub dt: f64,
    /// Length of each trajectory.
    pub window: f64,
    pub seed: u64,
}

/// Ensemble mean of the sigma_x-only entropy increments per unit time,
/// starting from and measured against the stationary density `p_st`.
pub fn monte_carlo_stationary_rate(
    alpha_x: f64,
    epsilon: f64,
    p_st: &PdfGrid,
    config: &MonteCarloConfig,
) -> Result<Estimate, EntropyError> {
    if config.n_traj == 0 || !(config.dt > 0.0) || !(config.window > 0.0) {
        return Err(EntropyError::InvalidArgument(
            "n_traj, dt and window must be positive".into(),
        ));
    }
    let s = Strengths {
        epsilon,
        alpha_x,
        alpha_y: 0.0,
    };
    let steps = (config.window / config.dt).round().max(1.0) as usize;
    let dt = config.window / steps as f64;
    let sqrt_dt = dt.sqrt();
    let sampler = p_st.sampler();
    let stats = par_stats(config.n_traj, |i| {
        use rand::Rng;
        let mut rng = trajectory_rng(config.seed, i as u64);
        let start = PhiState::new(sampler.sample(&mut rng));
        let mut state = start;
        let mut medium = 0.0;
        for _ in 0..steps {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let dw = z * sqrt_dt;
            let phi = state.phi();
            let dw_x = if phi.sin() < 0.0 { -dw } else { dw };
            medium += medium_increment_sigma_x(alpha_x, phi, dt, dw_x);
            state = step_phi(state, &s, dt, dw);
        }
        let dlnp = p_st.ln_density_at(state.phi()) - p_st.ln_density_at(start.phi());
        let total = -dlnp + medium;
        if total.is_finite() {
            Ok(total / config.window)
        } else {
            Err(EntropyError::InvalidArgument(format!("non-finite increment in trajectory {i}")))
        }
    })?;
    Ok(Estimate {
        mean: stats.mean(),
        stderr: stats.stderr(),
    })
}
