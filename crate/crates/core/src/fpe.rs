//! Finite-volume solver for the phi Fokker-Planck equation on the circle.
//!
//! Cells are centred at `(j + 1/2) h`, `h = 2 pi / n`, so the zeros of the
//! diffusion coefficient at `phi = 0, pi` fall on cell faces. Face fluxes use
//! exponential fitting (Scharfetter-Gummel), which reduces to central
//! differences for small cell Peclet number and to upwinding where diffusion
//! vanishes. The resulting generator is a Markov rate matrix, so implicit
//! steps preserve positivity and mass.

use std::f64::consts::{PI, TAU};
use std::io;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ModelError, ModelParams, Strengths};

#[derive(Debug, Error)]
pub enum FpeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("explicit step dt = {dt} exceeds the stable limit {max_dt}; reduce dt or use implicit stepping")]
    Cfl { dt: f64, max_dt: f64 },
    #[error("stationary solve did not converge: residual {residual:e} (relative to flux scale {scale:e})")]
    Stationary { residual: f64, scale: f64 },
    #[error("periodic cycle not converged after {periods} periods; L1 distances {trace:?}")]
    CycleNotConverged { periods: usize, trace: Vec<f64> },
    #[error("alpha grid [{lo}, {hi}] does not cover the schedule range [{need_lo}, {need_hi}]")]
    FamilyRange {
        lo: f64,
        hi: f64,
        need_lo: f64,
        need_hi: f64,
    },
    #[error("alpha_x = {0} is outside the stationary family")]
    OutsideFamily(f64),
    #[error("schedule must be time independent")]
    TimeDependent,
    #[error("schedule must be periodic")]
    NotPeriodic,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// `sin` and `cos` of `2 pi k / m`, exactly symmetric under reflection about
/// `0`, `pi/2` and `pi`. `m` must be a multiple of 4.
pub(crate) fn grid_sin_cos(k: usize, m: usize) -> (f64, f64) {
    let k = k % m;
    if 2 * k > m {
        let (s, c) = grid_sin_cos(m - k, m);
        return (-s, c);
    }
    if 4 * k > m {
        let (s, c) = grid_sin_cos(m / 2 - k, m);
        return (s, -c);
    }
    if 8 * k > m {
        let (s, c) = grid_sin_cos(m / 4 - k, m);
        return (c, s);
    }
    if k == 0 {
        return (0.0, 1.0);
    }
    (TAU * k as f64 / m as f64).sin_cos()
}

/// `x / (e^x - 1)`
#[inline]
fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x / 2.0 + x * x / 12.0
    } else {
        x / x.exp_m1()
    }
}

/// Probability density on the cell-centred periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfGrid {
    values: Vec<f64>,
    time: f64,
}

impl PdfGrid {
    /// Wrap cell values; they must be non-negative and normalised.
    pub fn new(values: Vec<f64>, time: f64) -> Result<Self, FpeError> {
        check_cells(values.len())?;
        if values.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(FpeError::InvalidGrid("values must be finite and >= 0".into()));
        }
        let grid = Self { values, time };
        let mass = grid.mass();
        if (mass - 1.0).abs() > 1e-10 {
            return Err(FpeError::InvalidGrid(format!("mass {mass} is not 1")));
        }
        Ok(grid)
    }

    /// Normalise arbitrary non-negative weights.
    pub fn normalized(mut values: Vec<f64>, time: f64) -> Result<Self, FpeError> {
        check_cells(values.len())?;
        if values.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(FpeError::InvalidGrid("values must be finite and >= 0".into()));
        }
        let h = TAU / values.len() as f64;
        let mass: f64 = values.iter().sum::<f64>() * h;
        if !(mass > 0.0) {
            return Err(FpeError::InvalidGrid("zero total mass".into()));
        }
        values.iter_mut().for_each(|p| *p /= mass);
        Ok(Self { values, time })
    }

    pub fn uniform(n_cells: usize) -> Result<Self, FpeError> {
        Self::normalized(vec![1.0; n_cells], 0.0)
    }

    /// Cell values of a non-negative function, normalised.
    pub fn from_fn(n_cells: usize, f: impl Fn(f64) -> f64) -> Result<Self, FpeError> {
        check_cells(n_cells)?;
        let h = TAU / n_cells as f64;
        Self::normalized((0..n_cells).map(|j| f((j as f64 + 0.5) * h)).collect(), 0.0)
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.values.len() as f64
    }

    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.spacing()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells()).map(|j| self.center(j)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spacing()
    }

    /// Midpoint-rule average of `f(phi)`.
    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        let h = self.spacing();
        self.values
            .iter()
            .enumerate()
            .map(|(j, p)| p * f((j as f64 + 0.5) * h))
            .sum::<f64>()
            * h
    }

    pub fn l1_distance(&self, other: &PdfGrid) -> f64 {
        assert_eq!(self.n_cells(), other.n_cells(), "grids differ in size");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.spacing()
    }

    /// Density at `phi -> -phi`; cell `j` maps to cell `n - 1 - j`.
    pub fn reflected(&self) -> PdfGrid {
        let mut values = self.values.clone();
        values.reverse();
        PdfGrid {
            values,
            time: self.time,
        }
    }

    /// Log-density at an arbitrary angle, linear in phi between cell centres.
    pub fn ln_density_at(&self, phi: f64) -> f64 {
        let n = self.n_cells();
        let x = phi.rem_euclid(TAU) / self.spacing() - 0.5;
        let lo = x.floor();
        let w = x - lo;
        let i = (lo as i64).rem_euclid(n as i64) as usize;
        let k = (i + 1) % n;
        let (a, b) = (self.values[i].ln(), self.values[k].ln());
        if w == 0.0 {
            a
        } else if w == 1.0 {
            b
        } else {
            (1.0 - w) * a + w * b
        }
    }

    pub fn sampler(&self) -> PdfSampler {
        let h = self.spacing();
        let mut cdf = Vec::with_capacity(self.n_cells());
        let mut acc = 0.0;
        for p in &self.values {
            acc += p * h;
            cdf.push(acc);
        }
        PdfSampler { cdf, spacing: h }
    }

    /// Write rows `(t, phi, p)` with a header.
    pub fn write_csv<W: io::Write>(snapshots: &[PdfGrid], writer: W) -> Result<(), FpeError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "phi", "p"])?;
        for snap in snapshots {
            for (j, p) in snap.values.iter().enumerate() {
                w.write_record([fmt_num(snap.time), fmt_num(snap.center(j)), fmt_num(*p)])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// 15 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.14e}")
}

fn check_cells(n: usize) -> Result<(), FpeError> {
    if n < 4 || n % 2 != 0 {
        return Err(FpeError::InvalidGrid(format!(
            "n_cells must be even and >= 4, got {n}"
        )));
    }
    Ok(())
}

/// Inverse-CDF sampling of a piecewise-constant density.
#[derive(Debug, Clone)]
pub struct PdfSampler {
    cdf: Vec<f64>,
    spacing: f64,
}

impl PdfSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = *self.cdf.last().expect("non-empty grid");
        let u = rng.random_range(0.0..total);
        let j = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        (j as f64 + rng.random_range(0.0..1.0)) * self.spacing
    }
}

/// Face fluxes; `faces[j]` is the flux from cell `j` to cell `j + 1` through
/// the face at `(j + 1) h`. The last face is the one at `phi = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentProfile {
    pub faces: Vec<f64>,
    pub time: f64,
}

impl CurrentProfile {
    pub fn max_abs(&self) -> f64 {
        self.faces.iter().fold(0.0, |m, j| m.max(j.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.faces.iter().sum::<f64>() / self.faces.len() as f64
    }

    /// Largest jump between neighbouring faces.
    pub fn max_jump(&self) -> f64 {
        let n = self.faces.len();
        (0..n).fold(0.0, |m, j| m.max((self.faces[j] - self.faces[(j + n - 1) % n]).abs()))
    }
}

/// Trigonometric factors at the cell faces, shared by every coefficient
/// evaluation on a grid.
#[derive(Debug, Clone)]
pub struct FaceGeometry {
    sin_sq: Vec<f64>,
    cos_sq: Vec<f64>,
    sin_cos: Vec<f64>,
    spacing: f64,
}

impl FaceGeometry {
    pub fn new(n_cells: usize) -> Self {
        let mut g = Self {
            sin_sq: Vec::with_capacity(n_cells),
            cos_sq: Vec::with_capacity(n_cells),
            sin_cos: Vec::with_capacity(n_cells),
            spacing: TAU / n_cells as f64,
        };
        for j in 0..n_cells {
            let (sin, cos) = grid_sin_cos(j + 1, n_cells);
            g.sin_sq.push(sin * sin);
            g.cos_sq.push(cos * cos);
            g.sin_cos.push(sin * cos);
        }
        g
    }

    pub fn n_cells(&self) -> usize {
        self.sin_sq.len()
    }
}

/// Exponentially fitted face coefficients: `J_f = fwd_f p_j - bwd_f p_{j+1}`.
#[derive(Debug, Clone)]
pub struct FaceCoefficients {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    spacing: f64,
}

impl FaceCoefficients {
    pub fn new(s: &Strengths, n_cells: usize) -> Self {
        Self::on(s, &FaceGeometry::new(n_cells))
    }

    pub fn on(s: &Strengths, geometry: &FaceGeometry) -> Self {
        let n = geometry.n_cells();
        let mut c = Self {
            forward: vec![0.0; n],
            backward: vec![0.0; n],
            spacing: geometry.spacing,
        };
        c.update(s, geometry);
        c
    }

    /// Recompute in place for new strengths.
    pub fn update(&mut self, s: &Strengths, geometry: &FaceGeometry) {
        let h = geometry.spacing;
        let (ax2, ay2) = (s.alpha_x * s.alpha_x, s.alpha_y * s.alpha_y);
        let a = ax2 - ay2;
        let rev = s.drift_rev();
        for j in 0..geometry.n_cells() {
            let v = rev - 6.0 * a * geometry.sin_cos[j];
            let d = 2.0 * (ax2 * geometry.sin_sq[j] + ay2 * geometry.cos_sq[j]);
            let pe = v * h / d;
            if d == 0.0 || !pe.is_finite() {
                self.forward[j] = v.max(0.0);
                self.backward[j] = (-v).max(0.0);
            } else {
                // B(-x) = B(x) + x; evaluate B at |x| and add to get the larger one.
                let g = d / h;
                let small = bernoulli(pe.abs());
                let large = small + pe.abs();
                if pe >= 0.0 {
                    self.forward[j] = g * large;
                    self.backward[j] = g * small;
                } else {
                    self.forward[j] = g * small;
                    self.backward[j] = g * large;
                }
            }
        }
    }

    pub fn n_cells(&self) -> usize {
        self.forward.len()
    }

    pub fn current(&self, p: &[f64]) -> Vec<f64> {
        let n = p.len();
        (0..n)
            .map(|j| self.forward[j] * p[j] - self.backward[j] * p[(j + 1) % n])
            .collect()
    }

    /// `dp/dt = L p`
    pub fn apply(&self, p: &[f64], out: &mut [f64]) {
        let n = p.len();
        let h = self.spacing;
        for j in 0..n {
            let jm = (j + n - 1) % n;
            let jp = (j + 1) % n;
            let flux_out = self.forward[j] * p[j] - self.backward[j] * p[jp];
            let flux_in = self.forward[jm] * p[jm] - self.backward[jm] * p[j];
            out[j] = (flux_in - flux_out) / h;
        }
    }

    /// Largest stable explicit step.
    pub fn max_explicit_dt(&self) -> f64 {
        let n = self.n_cells();
        let rate = (0..n)
            .map(|j| (self.forward[j] + self.backward[(j + n - 1) % n]) / self.spacing)
            .fold(0.0, f64::max);
        if rate > 0.0 {
            1.0 / rate
        } else {
            f64::INFINITY
        }
    }

    fn gross_flux(&self, p: &[f64]) -> f64 {
        let n = p.len();
        (0..n)
            .map(|j| self.forward[j] * p[j] + self.backward[j] * p[(j + 1) % n])
            .fold(0.0, f64::max)
    }
}

pub fn current(p: &PdfGrid, params: &ModelParams, t: f64) -> CurrentProfile {
    let coeffs = FaceCoefficients::new(&params.at(t), p.n_cells());
    CurrentProfile {
        faces: coeffs.current(&p.values),
        time: t,
    }
}

/// Minus the divergence of the current at each cell.
pub fn dpdt(p: &PdfGrid, params: &ModelParams, t: f64) -> Vec<f64> {
    let coeffs = FaceCoefficients::new(&params.at(t), p.n_cells());
    let mut out = vec![0.0; p.n_cells()];
    coeffs.apply(&p.values, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeStepping {
    Explicit,
    /// Backward Euler with coefficients at the end of the step.
    #[default]
    Implicit,
}

/// Reusable workspace for time stepping on one grid.
#[derive(Debug, Clone)]
pub struct Stepper {
    mode: TimeStepping,
    geometry: FaceGeometry,
    coeffs: FaceCoefficients,
    current: Option<Strengths>,
    scratch: Vec<f64>,
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    z: Vec<f64>,
    cp: Vec<f64>,
}

impl Stepper {
    pub fn new(n_cells: usize, mode: TimeStepping) -> Self {
        let geometry = FaceGeometry::new(n_cells);
        let coeffs = FaceCoefficients {
            forward: vec![0.0; n_cells],
            backward: vec![0.0; n_cells],
            spacing: geometry.spacing,
        };
        Self {
            mode,
            geometry,
            coeffs,
            current: None,
            scratch: vec![0.0; n_cells],
            sub: vec![0.0; n_cells],
            diag: vec![0.0; n_cells],
            sup: vec![0.0; n_cells],
            z: vec![0.0; n_cells],
            cp: vec![0.0; n_cells],
        }
    }

    pub fn mode(&self) -> TimeStepping {
        self.mode
    }

    /// Advance `p` by `dt` with the coefficients of `s`. Implicit steps
    /// expect `s` at the end of the step, explicit steps at the start.
    pub fn step(&mut self, p: &mut PdfGrid, s: &Strengths, dt: f64) -> Result<(), FpeError> {
        if p.n_cells() != self.geometry.n_cells() {
            return Err(FpeError::InvalidGrid(format!(
                "stepper built for {} cells, grid has {}",
                self.geometry.n_cells(),
                p.n_cells()
            )));
        }
        if self.current.as_ref() != Some(s) {
            self.coeffs.update(s, &self.geometry);
            self.current = Some(*s);
        }
        let c = &self.coeffs;
        match self.mode {
            TimeStepping::Explicit => {
                let max_dt = c.max_explicit_dt();
                if dt > max_dt {
                    return Err(FpeError::Cfl { dt, max_dt });
                }
                c.apply(&p.values, &mut self.scratch);
                for (v, d) in p.values.iter_mut().zip(&self.scratch) {
                    *v += dt * d;
                }
            }
            TimeStepping::Implicit => {
                let n = p.n_cells();
                let r = dt / c.spacing;
                for j in 0..n {
                    let jm = (j + n - 1) % n;
                    self.diag[j] = 1.0 + r * (c.forward[j] + c.backward[jm]);
                    self.sub[j] = -r * c.forward[jm];
                    self.sup[j] = -r * c.backward[j];
                }
                solve_cyclic(
                    &self.sub,
                    &mut self.diag,
                    &self.sup,
                    &mut p.values,
                    &mut self.z,
                    &mut self.cp,
                );
            }
        }
        p.time += dt;
        Ok(())
    }
}

/// Thomas algorithm; `rhs` is overwritten with the solution.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], cp: &mut [f64]) {
    let n = rhs.len();
    let mut denom = diag[0];
    cp[0] = sup[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - sub[i] * cp[i - 1];
        cp[i] = sup[i] / denom;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= cp[i] * rhs[i + 1];
    }
}

/// Cyclic tridiagonal solve via Sherman-Morrison. `sub[0]` couples row 0 to
/// the last unknown and `sup[n-1]` couples the last row to unknown 0.
/// `diag` is used as workspace.
fn solve_cyclic(sub: &[f64], diag: &mut [f64], sup: &[f64], rhs: &mut [f64], z: &mut [f64], cp: &mut [f64]) {
    let n = rhs.len();
    let top = sub[0];
    let bottom = sup[n - 1];
    let gamma = -diag[0];
    diag[0] -= gamma;
    diag[n - 1] -= bottom * top / gamma;
    solve_tridiagonal(sub, diag, sup, rhs, cp);
    z.iter_mut().for_each(|v| *v = 0.0);
    z[0] = gamma;
    z[n - 1] = bottom;
    solve_tridiagonal(sub, diag, sup, z, cp);
    let fact = (rhs[0] + top * rhs[n - 1] / gamma) / (1.0 + z[0] + top * z[n - 1] / gamma);
    for (x, zi) in rhs.iter_mut().zip(z.iter()) {
        *x -= fact * zi;
    }
}

/// Advance from `p.time()` to `t1` in steps of at most `dt`.
pub fn evolve(
    p: &PdfGrid,
    params: &ModelParams,
    t1: f64,
    dt: f64,
    mode: TimeStepping,
) -> Result<PdfGrid, FpeError> {
    let mut out = p.clone();
    evolve_observed(&mut out, params, t1, dt, mode, |_| {})?;
    Ok(out)
}

/// Like [`evolve`], calling `observe` after every step.
pub fn evolve_observed(
    p: &mut PdfGrid,
    params: &ModelParams,
    t1: f64,
    dt: f64,
    mode: TimeStepping,
    mut observe: impl FnMut(&PdfGrid),
) -> Result<(), FpeError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FpeError::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    let t0 = p.time;
    if !(t1 >= t0) {
        return Err(FpeError::InvalidArgument(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    let span = t1 - t0;
    let steps = (span / dt - 1e-9).ceil().max(0.0) as usize;
    let mut stepper = Stepper::new(p.n_cells(), mode);
    for k in 0..steps {
        let ta = t0 + span * k as f64 / steps as f64;
        let tb = if k + 1 == steps {
            t1
        } else {
            t0 + span * (k + 1) as f64 / steps as f64
        };
        let t_coef = if mode == TimeStepping::Implicit { tb } else { ta };
        stepper.step(p, &params.at(t_coef), tb - ta)?;
        p.time = tb;
        observe(p);
    }
    Ok(())
}

/// Stationary density with its (constant) face current.
#[derive(Debug, Clone)]
pub struct StationaryPdf {
    pub pdf: PdfGrid,
    pub current: f64,
    /// `max |J_f - J_{f-1}|` over faces.
    pub residual: f64,
}

/// Stationary density for time-independent coefficients.
pub fn stationary_pdf(params: &ModelParams, n_cells: usize) -> Result<StationaryPdf, FpeError> {
    if !params.schedule().is_constant() {
        return Err(FpeError::TimeDependent);
    }
    stationary_for(&params.at(0.0), n_cells)
}

/// Stationary density for fixed strengths.
pub fn stationary_for(s: &Strengths, n_cells: usize) -> Result<StationaryPdf, FpeError> {
    check_cells(n_cells)?;
    let c = FaceCoefficients::new(s, n_cells);
    let cuts: Vec<usize> = (0..n_cells)
        .filter(|&f| c.forward[f] == 0.0 && c.backward[f] == 0.0)
        .collect();
    let direct = if cuts.is_empty() {
        kernel_irreducible(&c)
    } else {
        kernel_detailed_balance(&c, &cuts)
    };
    let tol = 1e-10;
    if let Some(values) = direct.map(|v| mirror_average(&c, v)) {
        let result = finish_stationary(&c, values)?;
        if result.residual <= tol * c.gross_flux(result.pdf.values()) {
            return Ok(result);
        }
        log::warn!("direct stationary solve residual {:e}; integrating instead", result.residual);
    }
    kernel_by_relaxation(s, &c, tol)
}

/// Average with the mirror image `phi -> -phi` when the generator is
/// exactly reflection symmetric, so the solution is too.
fn mirror_average(c: &FaceCoefficients, mut values: Vec<f64>) -> Vec<f64> {
    let n = c.n_cells();
    // face f sits at (f + 1) h and reflects to face n - 2 - f
    let symmetric = (0..n).all(|f| c.forward[f] == c.backward[(2 * n - 2 - f) % n]);
    if symmetric {
        for j in 0..n / 2 {
            let m = 0.5 * (values[j] + values[n - 1 - j]);
            values[j] = m;
            values[n - 1 - j] = m;
        }
    }
    values
}

fn finish_stationary(c: &FaceCoefficients, values: Vec<f64>) -> Result<StationaryPdf, FpeError> {
    let pdf = PdfGrid::normalized(values, 0.0)?;
    let profile = CurrentProfile {
        faces: c.current(pdf.values()),
        time: 0.0,
    };
    Ok(StationaryPdf {
        current: profile.mean(),
        residual: profile.max_jump(),
        pdf,
    })
}

/// Fix one cell and solve the remaining path system of `L p = 0`.
fn kernel_irreducible(c: &FaceCoefficients) -> Option<Vec<f64>> {
    let n = c.n_cells();
    // Pivot on the cell with the largest escape rate; its neighbours are
    // well coupled to it.
    let pivot = (0..n)
        .max_by(|&a, &b| {
            let ra = c.forward[a] + c.backward[(a + n - 1) % n];
            let rb = c.forward[b] + c.backward[(b + n - 1) % n];
            ra.total_cmp(&rb)
        })
        .unwrap_or(0);
    let m = n - 1;
    // Unknown i corresponds to cell (pivot + 1 + i) mod n. Rows of -L:
    // (fwd_j + bwd_{j-1}) p_j - bwd_j p_{j+1} - fwd_{j-1} p_{j-1} = 0.
    let cell = |i: usize| (pivot + 1 + i) % n;
    let mut sub = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut sup = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        let j = cell(i);
        let jm = (j + n - 1) % n;
        diag[i] = c.forward[j] + c.backward[jm];
        sub[i] = -c.forward[jm];
        sup[i] = -c.backward[j];
    }
    rhs[0] = c.forward[pivot];
    rhs[m - 1] = c.backward[(pivot + n - 1) % n];
    sub[0] = 0.0;
    sup[m - 1] = 0.0;
    let mut cp = vec![0.0; m];
    let mut x = rhs.clone();
    solve_tridiagonal(&sub, &diag, &sup, &mut x, &mut cp);
    // Iterative refinement against the same factorisation.
    for _ in 0..2 {
        let mut r: Vec<f64> = (0..m)
            .map(|i| {
                let mut acc = rhs[i] - diag[i] * x[i];
                if i > 0 {
                    acc -= sub[i] * x[i - 1];
                }
                if i + 1 < m {
                    acc -= sup[i] * x[i + 1];
                }
                acc
            })
            .collect();
        solve_tridiagonal(&sub, &diag, &sup, &mut r, &mut cp);
        x.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
    }
    let mut values = vec![0.0; n];
    values[pivot] = 1.0;
    for (i, v) in x.into_iter().enumerate() {
        values[cell(i)] = v.max(0.0);
    }
    values.iter().all(|v| v.is_finite()).then_some(values)
}

/// Zero-current solution on each closed segment between cut faces. Segments
/// are weighted by their number of cells.
fn kernel_detailed_balance(c: &FaceCoefficients, cuts: &[usize]) -> Option<Vec<f64>> {
    let n = c.n_cells();
    let mut values = vec![0.0; n];
    for (k, &cut) in cuts.iter().enumerate() {
        let next_cut = cuts[(k + 1) % cuts.len()];
        let start = (cut + 1) % n;
        let len = (next_cut + n - cut - 1) % n + 1;
        let mut logs = Vec::with_capacity(len);
        let mut lp = 0.0;
        logs.push(lp);
        for i in 0..len - 1 {
            let f = (start + i) % n;
            let (fw, bw) = (c.forward[f], c.backward[f]);
            if !(fw > 0.0 && bw > 0.0) {
                return None;
            }
            lp += fw.ln() - bw.ln();
            logs.push(lp);
        }
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        let weight = len as f64 / n as f64;
        for (i, l) in logs.iter().enumerate() {
            values[(start + i) % n] = weight * (l - top).exp() / sum;
        }
    }
    Some(values)
}

fn kernel_by_relaxation(s: &Strengths, c: &FaceCoefficients, tol: f64) -> Result<StationaryPdf, FpeError> {
    let n = c.n_cells();
    let mut p = PdfGrid::uniform(n)?;
    let mut stepper = Stepper::new(n, TimeStepping::Implicit);
    let dt = 1e3 * c.max_explicit_dt().min(1.0);
    let mut last = f64::INFINITY;
    for _ in 0..100_000 {
        let prev = p.clone();
        stepper.step(&mut p, s, dt)?;
        let change = p.l1_distance(&prev);
        let result = finish_stationary(c, p.values.clone())?;
        last = result.residual;
        if change < 1e-15 || result.residual <= tol * c.gross_flux(result.pdf.values()) {
            return Ok(result);
        }
    }
    Err(FpeError::Stationary {
        residual: last,
        scale: c.gross_flux(p.values()),
    })
}

/// Stationary densities over a grid of `alpha_x`, interpolated linearly in
/// log-density between members.
#[derive(Debug, Clone)]
pub struct StationaryFamily {
    alpha_values: Vec<f64>,
    members: Vec<StationaryPdf>,
}

/// `count` equally spaced values over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| {
                if i + 1 == count {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

/// Solve the stationary problem for every `alpha_x` in `alpha_grid`, keeping
/// `epsilon` and `alpha_y` from `params`. The grid must cover the range of
/// the schedule.
pub fn build_stationary_family(
    params: &ModelParams,
    alpha_grid: &[f64],
    n_cells: usize,
) -> Result<StationaryFamily, FpeError> {
    if alpha_grid.is_empty() || alpha_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FpeError::InvalidArgument("alpha grid must be strictly increasing".into()));
    }
    if alpha_grid[0] < 0.0 {
        return Err(FpeError::InvalidArgument("alpha grid must be non-negative".into()));
    }
    let (need_lo, need_hi) = params.schedule().range();
    let (lo, hi) = (alpha_grid[0], alpha_grid[alpha_grid.len() - 1]);
    if need_lo < lo || need_hi > hi {
        return Err(FpeError::FamilyRange {
            lo,
            hi,
            need_lo,
            need_hi,
        });
    }
    let members = alpha_grid
        .par_iter()
        .map(|&alpha_x| {
            stationary_for(
                &Strengths {
                    epsilon: params.epsilon(),
                    alpha_x,
                    alpha_y: params.alpha_y(),
                },
                n_cells,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StationaryFamily {
        alpha_values: alpha_grid.to_vec(),
        members,
    })
}

impl StationaryFamily {
    pub fn alpha_values(&self) -> &[f64] {
        &self.alpha_values
    }

    pub fn members(&self) -> &[StationaryPdf] {
        &self.members
    }

    pub fn n_cells(&self) -> usize {
        self.members[0].pdf.n_cells()
    }

    /// Stationary density at `alpha_x`; exact at grid values.
    pub fn at(&self, alpha_x: f64) -> Result<PdfGrid, FpeError> {
        let a = &self.alpha_values;
        if !(alpha_x >= a[0] && alpha_x <= a[a.len() - 1]) {
            return Err(FpeError::OutsideFamily(alpha_x));
        }
        let i = a.partition_point(|&v| v <= alpha_x);
        if i > 0 && a[i - 1] == alpha_x {
            return Ok(self.members[i - 1].pdf.clone());
        }
        let (k, w) = (i - 1, (alpha_x - a[i - 1]) / (a[i] - a[i - 1]));
        let values = self.members[k]
            .pdf
            .values()
            .iter()
            .zip(self.members[k + 1].pdf.values())
            .map(|(p0, p1)| {
                let l = (1.0 - w) * p0.ln() + w * p1.ln();
                if l.is_nan() {
                    0.0
                } else {
                    l.exp()
                }
            })
            .collect();
        PdfGrid::normalized(values, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleConfig {
    pub n_cells: usize,
    pub dt: f64,
    /// L1 distance between successive period-start densities.
    pub tolerance: f64,
    pub max_periods: usize,
    /// Keep every `record_stride`-th step of the recorded periods.
    pub record_stride: usize,
    /// Converged periods to record.
    pub record_periods: usize,
    pub mode: TimeStepping,
}

#[derive(Debug, Clone)]
pub struct PeriodicCycle {
    pub period: f64,
    /// Densities over the recorded periods, first and last included.
    pub snapshots: Vec<PdfGrid>,
    pub periods_run: usize,
    pub distance_trace: Vec<f64>,
}

impl PeriodicCycle {
    pub fn start(&self) -> &PdfGrid {
        &self.snapshots[0]
    }
}

/// Iterate whole periods from `p0` until the period map converges, then
/// record `record_periods` further periods.
pub fn periodic_cycle(
    params: &ModelParams,
    p0: &PdfGrid,
    config: &CycleConfig,
) -> Result<PeriodicCycle, FpeError> {
    if config.record_stride == 0 || config.record_periods == 0 {
        return Err(FpeError::InvalidArgument(
            "record_stride and record_periods must be >= 1".into(),
        ));
    }
    if params.schedule().is_constant() {
        let st = stationary_pdf(params, p0.n_cells())?;
        return Ok(PeriodicCycle {
            period: 0.0,
            snapshots: vec![st.pdf.with_time(p0.time())],
            periods_run: 0,
            distance_trace: Vec::new(),
        });
    }
    let period = params.schedule().period().ok_or(FpeError::NotPeriodic)?;
    let steps = (period / config.dt).round().max(1.0) as usize;
    let dt = period / steps as f64;
    let mut p = p0.clone();
    let mut stepper = Stepper::new(p.n_cells(), config.mode);
    let mut trace = Vec::new();
    let run_period = |p: &mut PdfGrid, stepper: &mut Stepper, snaps: Option<&mut Vec<PdfGrid>>| {
        let t0 = p.time;
        let mut snaps = snaps;
        for k in 0..steps {
            let tb = t0 + period * (k + 1) as f64 / steps as f64;
            let t_coef = if config.mode == TimeStepping::Implicit {
                tb
            } else {
                tb - dt
            };
            stepper.step(p, &params.at(t_coef), dt)?;
            p.time = tb;
            if let Some(s) = snaps.as_deref_mut() {
                if (k + 1) % config.record_stride == 0 || k + 1 == steps {
                    s.push(p.clone());
                }
            }
        }
        Ok::<(), FpeError>(())
    };
    for periods in 1..=config.max_periods {
        let start = p.clone();
        run_period(&mut p, &mut stepper, None)?;
        let dist = p.l1_distance(&start);
        trace.push(dist);
        log::debug!("period {periods}: L1 change {dist:e}");
        if dist < config.tolerance {
            let mut snapshots = vec![p.clone()];
            for _ in 0..config.record_periods {
                run_period(&mut p, &mut stepper, Some(&mut snapshots))?;
            }
            return Ok(PeriodicCycle {
                period,
                snapshots,
                periods_run: periods,
                distance_trace: trace,
            });
        }
    }
    Err(FpeError::CycleNotConverged {
        periods: config.max_periods,
        trace,
    })
}

/// Mean of `phi` mapped to the half circle `[0, pi)`: a cheap summary of where
/// a pi-periodic density sits.
pub fn half_circle_peak(p: &PdfGrid) -> f64 {
    let n = p.n_cells();
    let half = n / 2;
    let j = (0..half)
        .max_by(|&a, &b| (p.values[a] + p.values[a + half]).total_cmp(&(p.values[b] + p.values[b + half])))
        .unwrap_or(0);
    p.center(j) % PI
}
