//! Coefficient functions of the measured two-level system.
//!
//! The state lives on the equator of the Bloch sphere and is described by the
//! azimuthal angle `phi`, with `r_x = cos(phi)` and `r_y = sin(phi)`, so the
//! eigenstates of sigma_x sit at `phi = 0, pi`. Its Itô dynamics are
//!
//! ```text
//! dphi = (A_rev + A_irr(phi, t)) dt + B(phi, t) dW
//! A_rev = 2 eps
//! A_irr = -(ax^2 - ay^2) sin(2 phi)
//! D     = B^2 / 2 = 2 (ax^2 sin^2(phi) + ay^2 cos^2(phi))
//! ```
//!
//! `A_rev` is the part of the drift that respects time reversal (phi is odd
//! under reversal) and `A_irr` the part that breaks it. Everything downstream
//! evaluates coefficients through this module.

use std::f64::consts::TAU;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("epsilon must be finite, got {0}")]
    NonFiniteEpsilon(f64),
    #[error("alpha_y must be finite and non-negative, got {0}")]
    InvalidAlphaY(f64),
    #[error("invalid alpha_x schedule: {0}")]
    InvalidSchedule(String),
    #[error("phase undefined: r_x = r_y = 0")]
    PhaseUndefined,
}

/// Time dependence of the sigma_x measurement strength.
///
/// Schedules are pure functions of time, so they can be evaluated at any
/// intermediate time an integrator needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// `offset + amplitude * sin(angular_frequency * t)`
    SinusoidalOffset {
        offset: f64,
        amplitude: f64,
        angular_frequency: f64,
    },
}

impl Schedule {
    pub fn constant(value: f64) -> Result<Self, ModelError> {
        let s = Schedule::Constant(value);
        s.validate()?;
        Ok(s)
    }

    pub fn sinusoidal(
        offset: f64,
        amplitude: f64,
        angular_frequency: f64,
    ) -> Result<Self, ModelError> {
        let s = Schedule::SinusoidalOffset {
            offset,
            amplitude,
            angular_frequency,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            Schedule::Constant(c) => {
                if !c.is_finite() || c < 0.0 {
                    return Err(ModelError::InvalidSchedule(format!(
                        "constant strength must be finite and >= 0, got {c}"
                    )));
                }
            }
            Schedule::SinusoidalOffset {
                offset,
                amplitude,
                angular_frequency,
            } => {
                if !(offset.is_finite() && amplitude.is_finite() && angular_frequency.is_finite()) {
                    return Err(ModelError::InvalidSchedule(
                        "sinusoidal parameters must be finite".into(),
                    ));
                }
                if !(offset >= amplitude && amplitude >= 0.0) {
                    return Err(ModelError::InvalidSchedule(format!(
                        "need offset >= amplitude >= 0, got offset {offset}, amplitude {amplitude}"
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Schedule::Constant(c) => c,
            Schedule::SinusoidalOffset {
                offset,
                amplitude,
                angular_frequency,
            } => offset + amplitude * (angular_frequency * t).sin(),
        }
    }

    /// Smallest and largest value the schedule takes.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            Schedule::Constant(c) => (c, c),
            Schedule::SinusoidalOffset {
                offset, amplitude, ..
            } => (offset - amplitude, offset + amplitude),
        }
    }

    /// Period of the schedule, `None` when it is time independent.
    pub fn period(&self) -> Option<f64> {
        match *self {
            Schedule::Constant(_) => None,
            Schedule::SinusoidalOffset {
                amplitude,
                angular_frequency,
                ..
            } => {
                if amplitude == 0.0 || angular_frequency == 0.0 {
                    None
                } else {
                    Some(TAU / angular_frequency.abs())
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        self.period().is_none()
    }
}

/// Model parameters: energy splitting `epsilon` (H = eps sigma_z), the
/// sigma_y measurement strength and the sigma_x strength schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    epsilon: f64,
    alpha_y: f64,
    alpha_x: Schedule,
}

impl ModelParams {
    pub fn new(epsilon: f64, alpha_y: f64, alpha_x: Schedule) -> Result<Self, ModelError> {
        if !epsilon.is_finite() {
            return Err(ModelError::NonFiniteEpsilon(epsilon));
        }
        if !alpha_y.is_finite() || alpha_y < 0.0 {
            return Err(ModelError::InvalidAlphaY(alpha_y));
        }
        alpha_x.validate()?;
        Ok(Self {
            epsilon,
            alpha_y,
            alpha_x,
        })
    }

    /// Shorthand for time-independent strengths.
    pub fn constant(epsilon: f64, alpha_x: f64, alpha_y: f64) -> Result<Self, ModelError> {
        Self::new(epsilon, alpha_y, Schedule::constant(alpha_x)?)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn alpha_y(&self) -> f64 {
        self.alpha_y
    }

    pub fn schedule(&self) -> &Schedule {
        &self.alpha_x
    }

    pub fn alpha_x(&self, t: f64) -> f64 {
        self.alpha_x.eval(t)
    }

    pub fn with_alpha_y(&self, alpha_y: f64) -> Result<Self, ModelError> {
        Self::new(self.epsilon, alpha_y, self.alpha_x)
    }

    pub fn with_schedule(&self, alpha_x: Schedule) -> Result<Self, ModelError> {
        Self::new(self.epsilon, self.alpha_y, alpha_x)
    }

    /// Freeze the schedule at time `t`.
    #[inline]
    pub fn at(&self, t: f64) -> Strengths {
        Strengths {
            epsilon: self.epsilon,
            alpha_x: self.alpha_x.eval(t),
            alpha_y: self.alpha_y,
        }
    }

    pub fn drift_rev(&self) -> f64 {
        2.0 * self.epsilon
    }

    pub fn drift_irr(&self, phi: f64, t: f64) -> f64 {
        self.at(t).drift_irr(phi)
    }

    pub fn diffusion(&self, phi: f64, t: f64) -> f64 {
        self.at(t).diffusion(phi)
    }

    pub fn noise_amplitude(&self, phi: f64, t: f64) -> f64 {
        self.at(t).noise_amplitude(phi)
    }
}

/// Model coefficients with the measurement strengths fixed at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strengths {
    pub epsilon: f64,
    pub alpha_x: f64,
    pub alpha_y: f64,
}

impl Strengths {
    /// `ax^2 - ay^2`, the prefactor of every parity-breaking term.
    #[inline]
    pub fn asymmetry(&self) -> f64 {
        self.alpha_x * self.alpha_x - self.alpha_y * self.alpha_y
    }

    /// `ax^2 sin^2(phi) + ay^2 cos^2(phi)`, i.e. `D / 2`.
    #[inline]
    pub fn noise_weight(&self, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        self.alpha_x * self.alpha_x * s * s + self.alpha_y * self.alpha_y * c * c
    }

    #[inline]
    pub fn drift_rev(&self) -> f64 {
        2.0 * self.epsilon
    }

    #[inline]
    pub fn drift_irr(&self, phi: f64) -> f64 {
        -self.asymmetry() * (2.0 * phi).sin()
    }

    /// Full drift of phi.
    #[inline]
    pub fn drift(&self, phi: f64) -> f64 {
        self.drift_rev() + self.drift_irr(phi)
    }

    #[inline]
    pub fn diffusion(&self, phi: f64) -> f64 {
        2.0 * self.noise_weight(phi)
    }

    /// Noise amplitude, stored with the negative sign; only `B^2 / 2 = D`
    /// affects distributions.
    #[inline]
    pub fn noise_amplitude(&self, phi: f64) -> f64 {
        -2.0 * self.noise_weight(phi).sqrt()
    }

    /// `dA_irr / dphi`
    #[inline]
    pub fn drift_irr_slope(&self, phi: f64) -> f64 {
        -2.0 * self.asymmetry() * (2.0 * phi).cos()
    }

    /// `dD / dphi`, equal to `-2 A_irr`.
    #[inline]
    pub fn diffusion_slope(&self, phi: f64) -> f64 {
        2.0 * self.asymmetry() * (2.0 * phi).sin()
    }

    /// `d^2 D / dphi^2`
    #[inline]
    pub fn diffusion_curvature(&self, phi: f64) -> f64 {
        4.0 * self.asymmetry() * (2.0 * phi).cos()
    }

    /// Coefficients of the Itô equations for the Bloch vector.
    pub fn bloch_coefficients(&self, r: &BlochState) -> BlochCoefficients {
        let (e, ax, ay) = (self.epsilon, self.alpha_x, self.alpha_y);
        let (x, y, z) = (r.x, r.y, r.z);
        BlochCoefficients {
            drift: [
                -2.0 * (e * y + ay * ay * x),
                2.0 * (e * x - ax * ax * y),
                -2.0 * z * (ax * ax + ay * ay),
            ],
            noise_x: [
                2.0 * ax * (1.0 - x * x),
                -2.0 * ax * x * y,
                -2.0 * ax * z * x,
            ],
            noise_y: [
                -2.0 * ay * x * y,
                2.0 * ay * (1.0 - y * y),
                -2.0 * ay * z * y,
            ],
        }
    }
}

/// Coherence vector of the density matrix `(I + r . sigma) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochState {
    pub const PURITY_TOLERANCE: f64 = 1e-9;

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Pure equatorial state with `r_x = cos(phi)`, `r_y = sin(phi)`.
    pub fn equatorial(phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        Self { x: c, y: s, z: 0.0 }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_physical(&self) -> bool {
        self.norm() <= 1.0 + Self::PURITY_TOLERANCE
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_phi(&self) -> Result<PhiState, ModelError> {
        phi_from_bloch(self)
    }
}

/// Drift vector and the two noise columns (for `dW_x`, `dW_y`) of the Bloch
/// equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochCoefficients {
    pub drift: [f64; 3],
    pub noise_x: [f64; 3],
    pub noise_y: [f64; 3],
}

/// Azimuthal angle reduced to `[0, 2 pi)` plus the number of completed
/// revolutions, so that the unwrapped angle stays available.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiState {
    phi: f64,
    winding: i64,
}

impl PhiState {
    pub fn new(phi: f64) -> Self {
        Self::from_unwrapped(phi)
    }

    pub fn from_unwrapped(raw: f64) -> Self {
        let winding = (raw / TAU).floor();
        let mut phi = raw - winding * TAU;
        let mut winding = winding as i64;
        // raw slightly below a multiple of 2 pi can round up to exactly 2 pi
        if phi >= TAU {
            phi -= TAU;
            winding += 1;
        }
        if phi < 0.0 {
            phi += TAU;
            winding -= 1;
        }
        Self { phi, winding }
    }

    #[inline]
    pub fn phi(&self) -> f64 {
        self.phi
    }

    #[inline]
    pub fn winding(&self) -> i64 {
        self.winding
    }

    #[inline]
    pub fn unwrapped(&self) -> f64 {
        self.phi + self.winding as f64 * TAU
    }

    /// Move by `delta`, re-wrapping into `[0, 2 pi)`.
    #[inline]
    pub fn advance(self, delta: f64) -> Self {
        let raw = self.phi + delta;
        if (0.0..TAU).contains(&raw) {
            return Self {
                phi: raw,
                winding: self.winding,
            };
        }
        let w = Self::from_unwrapped(raw);
        Self {
            phi: w.phi,
            winding: self.winding + w.winding,
        }
    }
}

/// Full-quadrant inverse of `r_x = cos(phi)`, `r_y = sin(phi)`.
pub fn phi_from_bloch(state: &BlochState) -> Result<PhiState, ModelError> {
    if state.x == 0.0 && state.y == 0.0 {
        return Err(ModelError::PhaseUndefined);
    }
    Ok(PhiState::new(state.y.atan2(state.x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn strengths(epsilon: f64, alpha_x: f64, alpha_y: f64) -> Strengths {
        Strengths {
            epsilon,
            alpha_x,
            alpha_y,
        }
    }

    #[test]
    fn reversible_drift() {
        assert_eq!(ModelParams::constant(0.5, 1.0, 0.0).unwrap().drift_rev(), 1.0);
        assert_eq!(ModelParams::constant(0.0, 1.0, 0.0).unwrap().drift_rev(), 0.0);
        assert_eq!(ModelParams::constant(10.0, 2.0, 0.0).unwrap().drift_rev(), 20.0);
    }

    #[test]
    fn irreversible_drift() {
        for &phi in &[0.1, 1.3, 4.0] {
            assert_eq!(strengths(0.5, 0.7, 0.7).drift_irr(phi), 0.0);
        }
        assert!((strengths(0.5, 1.0, 0.0).drift_irr(FRAC_PI_4) + 1.0).abs() < 1e-15);
        for &(ax, ay) in &[(1.0, 0.0), (0.3, 2.0)] {
            let s = strengths(0.5, ax, ay);
            assert_eq!(s.drift_irr(0.0), 0.0);
            assert!(s.drift_irr(FRAC_PI_2).abs() < 1e-15);
        }
    }

    #[test]
    fn diffusion_values() {
        let s = strengths(0.5, 0.8, 0.8);
        for &phi in &[0.0, 0.4, 2.0, 5.5] {
            assert!((s.diffusion(phi) - 2.0 * 0.64).abs() < 1e-15);
        }
        assert_eq!(strengths(0.5, 1.3, 0.0).diffusion(0.0), 0.0);
        assert!((strengths(0.5, 1.0, 0.0).diffusion(FRAC_PI_2) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn noise_amplitude_values() {
        assert!((strengths(0.5, 0.7, 0.7).noise_amplitude(1.1) + 1.4).abs() < 1e-15);
        assert_eq!(strengths(0.5, 0.0, 0.0).noise_amplitude(1.1), 0.0);
    }

    #[test]
    fn noise_amplitude_squares_to_diffusion() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let phi = rng.random_range(0.0..TAU);
            let s = strengths(0.0, rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
            let b = s.noise_amplitude(phi);
            let d = s.diffusion(phi);
            assert!((b * b / 2.0 - d).abs() <= 4.0 * f64::EPSILON * d.max(1e-300));
        }
    }

    #[test]
    fn bloch_examples() {
        let c = strengths(0.5, 0.0, 0.0).bloch_coefficients(&BlochState::new(0.0, 1.0, 0.0));
        assert_eq!(c.drift, [-1.0, 0.0, 0.0]);
        assert_eq!(c.noise_x, [0.0; 3]);
        assert_eq!(c.noise_y, [0.0; 3]);

        let c = strengths(0.5, 1.2, 0.7).bloch_coefficients(&BlochState::new(0.6, 0.3, 0.0));
        assert_eq!(c.drift[2], 0.0);
        assert_eq!(c.noise_x[2], 0.0);
        assert_eq!(c.noise_y[2], 0.0);

        let c = strengths(0.5, 1.7, 0.0).bloch_coefficients(&BlochState::new(1.0, 0.0, 0.0));
        assert_eq!(c.noise_x[0], 0.0);
    }

    #[test]
    fn phase_from_bloch() {
        assert_eq!(phi_from_bloch(&BlochState::new(1.0, 0.0, 0.0)).unwrap().phi(), 0.0);
        assert!((phi_from_bloch(&BlochState::new(0.0, 1.0, 0.0)).unwrap().phi() - FRAC_PI_2).abs() < 1e-15);
        assert!((phi_from_bloch(&BlochState::new(-1.0, 0.0, 0.0)).unwrap().phi() - PI).abs() < 1e-15);
        let third = phi_from_bloch(&BlochState::equatorial(5.0)).unwrap().phi();
        assert!((third - 5.0).abs() < 1e-12);
        assert_eq!(
            phi_from_bloch(&BlochState::new(0.0, 0.0, 0.5)),
            Err(ModelError::PhaseUndefined)
        );
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::sinusoidal(2.0, 1.0, 20.0 * PI).is_ok());
        assert!(Schedule::sinusoidal(0.5, 1.0, 1.0).is_err());
        assert!(Schedule::sinusoidal(1.0, -0.1, 1.0).is_err());
        assert!(Schedule::constant(-1.0).is_err());
        assert!(ModelParams::constant(f64::NAN, 1.0, 0.0).is_err());
        assert!(ModelParams::constant(1.0, 1.0, -0.5).is_err());
        let s = Schedule::sinusoidal(2.0, 1.0, 20.0 * PI).unwrap();
        assert!((s.period().unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(s.range(), (1.0, 3.0));
        assert!((s.eval(0.025) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn winding_bookkeeping() {
        let s = PhiState::new(TAU - 0.1).advance(0.3);
        assert!((s.phi() - 0.2).abs() < 1e-12);
        assert_eq!(s.winding(), 1);
        let s = PhiState::new(0.1).advance(-0.3);
        assert_eq!(s.winding(), -1);
        assert!((s.unwrapped() + 0.2).abs() < 1e-12);
        let s = PhiState::from_unwrapped(-1e-17);
        assert!(s.phi() >= 0.0 && s.phi() < TAU);
    }

    /// Analytic gradient and Hessian of `atan2(y, x)` in the (x, y) plane.
    fn atan2_derivatives(x: f64, y: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let r2 = x * x + y * y;
        let r4 = r2 * r2;
        let grad = [-y / r2, x / r2];
        let hxx = 2.0 * x * y / r4;
        let hxy = (y * y - x * x) / r4;
        (grad, [[hxx, hxy], [hxy, -hxx]])
    }

    proptest! {
        #[test]
        fn diffusion_slope_is_minus_twice_irreversible_drift(
            phi in 0.0..TAU, ax in 0.0..4.0f64, ay in 0.0..4.0f64, t in 0.0..1.0f64
        ) {
            let params = ModelParams::new(
                1.0, ay, Schedule::sinusoidal(ax + 0.5, 0.5, 3.0).unwrap()
            ).unwrap();
            let s = params.at(t);
            let h = 1e-5;
            let fd = (s.diffusion(phi + h) - s.diffusion(phi - h)) / (2.0 * h);
            let scale = s.diffusion_slope(phi).abs().max(s.asymmetry().abs()).max(1.0);
            prop_assert!((fd + 2.0 * s.drift_irr(phi)).abs() <= 1e-8 * scale);
            prop_assert!((s.diffusion_slope(phi) + 2.0 * s.drift_irr(phi)).abs() <= 1e-12 * scale);
            let fd2 = (s.drift_irr(phi + h) - s.drift_irr(phi - h)) / (2.0 * h);
            prop_assert!((fd2 - s.drift_irr_slope(phi)).abs() <= 1e-8 * scale);
            let fd3 = (s.diffusion_slope(phi + h) - s.diffusion_slope(phi - h)) / (2.0 * h);
            prop_assert!((fd3 - s.diffusion_curvature(phi)).abs() <= 1e-8 * scale);
        }

        #[test]
        fn coefficients_have_period_pi(phi in 0.0..TAU, ax in 0.0..4.0f64, ay in 0.0..4.0f64) {
            let s = strengths(0.7, ax, ay);
            let tol = 1e-12 * (1.0 + ax * ax + ay * ay);
            prop_assert!((s.drift_irr(phi) - s.drift_irr(phi + PI)).abs() < tol);
            prop_assert!((s.diffusion(phi) - s.diffusion(phi + PI)).abs() < tol);
            prop_assert!((s.noise_amplitude(phi).abs() - s.noise_amplitude(phi + PI).abs()).abs() < tol);
            prop_assert_eq!(s.drift(phi), s.drift_rev() + s.drift_irr(phi));
        }

        /// Itô's lemma applied to phi = atan2(r_y, r_x) on the pure equatorial
        /// state recovers the phi drift and diffusion.
        #[test]
        fn bloch_equations_project_onto_phi_dynamics(
            phi in 0.0..TAU, e in -5.0..5.0f64, ax in 0.0..4.0f64, ay in 0.0..4.0f64
        ) {
            let s = strengths(e, ax, ay);
            let r = BlochState::equatorial(phi);
            let c = s.bloch_coefficients(&r);
            let (g, hess) = atan2_derivatives(r.x, r.y);
            let mut drift = g[0] * c.drift[0] + g[1] * c.drift[1];
            let mut variance = 0.0;
            for col in [c.noise_x, c.noise_y] {
                let v = [col[0], col[1]];
                let quad = v[0] * (hess[0][0] * v[0] + hess[0][1] * v[1])
                    + v[1] * (hess[1][0] * v[0] + hess[1][1] * v[1]);
                drift += 0.5 * quad;
                let proj = g[0] * v[0] + g[1] * v[1];
                variance += proj * proj;
            }
            let scale = 1.0 + e.abs() + ax * ax + ay * ay;
            prop_assert!((drift - s.drift(phi)).abs() < 1e-10 * scale);
            prop_assert!((variance - 2.0 * s.diffusion(phi)).abs() < 1e-10 * scale);
        }

        /// Same projection with a finite-difference Hessian, independent of the
        /// closed-form derivatives above.
        #[test]
        fn bloch_projection_finite_difference(
            phi in 0.0..TAU, e in -5.0..5.0f64, ax in 0.0..3.0f64, ay in 0.0..3.0f64
        ) {
            let s = strengths(e, ax, ay);
            let r = BlochState::equatorial(phi);
            let c = s.bloch_coefficients(&r);
            let f = |x: f64, y: f64| PhiState::new(y.atan2(x)).unwrapped();
            let h = 1e-4;
            // local unwrapping around the base point
            let base = f(r.x, r.y);
            let lf = |x: f64, y: f64| {
                let mut v = f(x, y) - base;
                v -= TAU * (v / TAU).round();
                v
            };
            let gx = (lf(r.x + h, r.y) - lf(r.x - h, r.y)) / (2.0 * h);
            let gy = (lf(r.x, r.y + h) - lf(r.x, r.y - h)) / (2.0 * h);
            let hxx = (lf(r.x + h, r.y) - 2.0 * lf(r.x, r.y) + lf(r.x - h, r.y)) / (h * h);
            let hyy = (lf(r.x, r.y + h) - 2.0 * lf(r.x, r.y) + lf(r.x, r.y - h)) / (h * h);
            let hxy = (lf(r.x + h, r.y + h) - lf(r.x + h, r.y - h) - lf(r.x - h, r.y + h)
                + lf(r.x - h, r.y - h)) / (4.0 * h * h);
            let mut drift = gx * c.drift[0] + gy * c.drift[1];
            for col in [c.noise_x, c.noise_y] {
                drift += 0.5 * (hxx * col[0] * col[0] + 2.0 * hxy * col[0] * col[1] + hyy * col[1] * col[1]);
            }
            let scale = 1.0 + e.abs() + ax * ax + ay * ay;
            prop_assert!((drift - s.drift(phi)).abs() < 1e-5 * scale);
        }
    }
}
