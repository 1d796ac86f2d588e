use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use zeno_core::fpe::{
    current, dpdt, evolve, evolve_observed, half_circle_peak, periodic_cycle, stationary_pdf,
    CycleConfig, FaceCoefficients, PdfGrid, TimeStepping,
};
use zeno_core::{ModelParams, Schedule, Strengths};

fn driven() -> ModelParams {
    ModelParams::new(10.0, 0.0, Schedule::sinusoidal(2.0, 1.0, 20.0 * PI).unwrap()).unwrap()
}

fn bump(n: usize, centre: f64, width: f64) -> PdfGrid {
    pulse(n, centre, width, 1e-3)
}

fn pulse(n: usize, centre: f64, width: f64, floor: f64) -> PdfGrid {
    PdfGrid::from_fn(n, |phi| {
        let d = (phi - centre + PI).rem_euclid(TAU) - PI;
        (-(d * d) / (2.0 * width * width)).exp() + floor
    })
    .unwrap()
}

/// Dense Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

#[test]
fn probability_is_conserved_and_positive_over_a_million_steps() {
    let params = driven();
    let mut p = bump(64, 2.0, 0.3);
    let mut lowest = f64::INFINITY;
    let mut worst_mass = 0.0f64;
    let mut count = 0usize;
    evolve_observed(&mut p, &params, 10.0, 1e-5, TimeStepping::Implicit, |q| {
        count += 1;
        if count % 1000 == 0 {
            lowest = q.values().iter().copied().fold(lowest, f64::min);
            worst_mass = worst_mass.max((q.mass() - 1.0).abs());
        }
    })
    .unwrap();
    assert_eq!(count, 1_000_000);
    assert!(worst_mass < 1e-10, "mass drift {worst_mass:e}");
    assert!(lowest >= -1e-14, "min cell {lowest:e}");
}

#[test]
fn explicit_steps_conserve_probability() {
    let params = ModelParams::constant(0.5, 1.0, 0.0).unwrap();
    let p = evolve(&bump(256, 1.0, 0.2), &params, 1.0, 2e-5, TimeStepping::Explicit).unwrap();
    assert!((p.mass() - 1.0).abs() < 1e-12);
    assert!(p.values().iter().all(|&v| v >= -1e-14));
}

#[test]
fn symmetric_strengths_keep_uniform_density() {
    let params = ModelParams::constant(0.5, 1.3, 1.3).unwrap();
    let p = evolve(&PdfGrid::uniform(128).unwrap(), &params, 1.0, 1e-3, TimeStepping::Implicit).unwrap();
    let dev = p.values().iter().map(|v| (v - 1.0 / TAU).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-12, "{dev:e}");
    let prof = current(&p, &params, 1.0);
    assert!(prof.faces.iter().all(|j| (j - 0.5 / PI).abs() < 1e-12));
}

#[test]
fn free_pulse_advects_at_rabi_speed() {
    let params = ModelParams::constant(0.5, 0.0, 0.0).unwrap();
    let p0 = pulse(2048, 1.0, 0.05, 0.0);
    let com = |p: &PdfGrid| p.expectation(|phi| phi);
    let p1 = evolve(&p0, &params, 1.0, 1e-3, TimeStepping::Implicit).unwrap();
    let shift = com(&p1) - com(&p0);
    assert!((shift - 1.0).abs() < 1e-3, "shift {shift}");
}

#[test]
fn stationary_faces_carry_equal_current() {
    for (e, ax, ay) in [(0.5, 1.0, 0.0), (10.0, 2.0, 0.0), (10.0, 3.0, 0.5), (0.5, 0.5, 1.5)] {
        let params = ModelParams::constant(e, ax, ay).unwrap();
        let st = stationary_pdf(&params, 512).unwrap();
        let prof = current(&st.pdf, &params, 0.0);
        assert!(
            prof.max_jump() <= 1e-8 * prof.max_abs(),
            "({e}, {ax}, {ay}): jump {:e} vs {:e}",
            prof.max_jump(),
            prof.max_abs()
        );
        assert!((prof.mean() - st.current).abs() <= 1e-8 * prof.max_abs());
        let rate = dpdt(&st.pdf, &params, 0.0);
        let h = st.pdf.spacing();
        assert!(rate.iter().all(|r| r.abs() * h <= 1e-8 * prof.max_abs()));
    }
}

#[test]
fn stationary_density_matches_half_domain_solve() {
    // The coefficients have period pi, so the stationary state of the
    // half-circle problem tiled twice must equal the full solution.
    let s = Strengths {
        epsilon: 10.0,
        alpha_x: 2.0,
        alpha_y: 0.3,
    };
    let params = ModelParams::constant(s.epsilon, s.alpha_x, s.alpha_y).unwrap();
    let n = 128;
    let m = n / 2;
    let c = FaceCoefficients::new(&s, n);
    // dp_j/dt = (flux in - flux out) / h on the half circle, face m - 1 wraps to cell 0
    let mut a = vec![vec![0.0; m]; m];
    for f in 0..m {
        let (l, r) = (f, (f + 1) % m);
        a[l][l] -= c.forward[f];
        a[l][r] += c.backward[f];
        a[r][r] -= c.backward[f];
        a[r][l] += c.forward[f];
    }
    let mut b = vec![0.0; m];
    a[0] = vec![1.0; m];
    b[0] = 1.0;
    let half = dense_solve(a, b);
    let tiled: Vec<f64> = half.iter().chain(half.iter()).copied().collect();
    let oracle = PdfGrid::normalized(tiled, 0.0).unwrap();
    let st = stationary_pdf(&params, n).unwrap();
    let scale = st.pdf.values().iter().copied().fold(0.0, f64::max);
    for (j, (x, y)) in st.pdf.values().iter().zip(oracle.values()).enumerate() {
        assert!((x - y).abs() < 1e-10 * scale, "cell {j}: {x} vs {y}");
    }
    for j in 0..m {
        assert!((st.pdf.values()[j] - st.pdf.values()[j + m]).abs() < 1e-10 * scale);
    }
}

#[test]
fn equilibrium_without_rotation_has_zero_current() {
    // With epsilon = 0 and alpha_y = 0 the zero-current density behaves as
    // |sin(phi)|^-3 away from the measurement eigenstates.
    let params = ModelParams::constant(0.0, 1.0, 0.0).unwrap();
    let n = 1024;
    let st = stationary_pdf(&params, n).unwrap();
    assert_eq!(st.current, 0.0);
    let prof = current(&st.pdf, &params, 0.0);
    let p = st.pdf.values();
    assert!(prof.max_abs() < 1e-14 * p.iter().copied().fold(0.0, f64::max));
    let cell = |phi: f64| ((phi / st.pdf.spacing()) - 0.5).round() as usize;
    let (j, k) = (cell(FRAC_PI_4), cell(FRAC_PI_2));
    let (pj, pk) = (st.pdf.center(j), st.pdf.center(k));
    let expected = (pk.sin() / pj.sin()).powi(3);
    let got = p[j] / p[k];
    assert!((got / expected - 1.0).abs() < 1e-4, "{got} vs {expected}");
    assert_eq!(p[n / 2 - 1 - j], p[j]);
    assert!((p[j + n / 2] - p[j]).abs() <= 1e-12 * p[j]);
}

#[test]
fn stationary_moments_converge_with_grid() {
    for (e, ax) in [(0.5, 1.0), (10.0, 2.0)] {
        let params = ModelParams::constant(e, ax, 0.0).unwrap();
        let moment = |n| stationary_pdf(&params, n).unwrap().pdf.expectation(|p| p.cos().powi(2));
        let base = if e > 1.0 { 1024 } else { 256 };
        let (a, b) = (moment(base), moment(2 * base));
        assert!((a - b).abs() < 1e-3, "eps {e}: {a} vs {b}");
    }
}

#[test]
fn generator_matches_small_implicit_steps() {
    let params = driven();
    let p = bump(256, 1.0, 0.4).with_time(0.013);
    let rate = dpdt(&p, &params, 0.013);
    let h = p.spacing();
    assert!(rate.iter().sum::<f64>().abs() * h < 1e-12);
    let err = |dt: f64| {
        let q = evolve(&p, &params, 0.013 + dt, dt, TimeStepping::Explicit).unwrap();
        let r = evolve(&p, &params, 0.013 + dt, dt, TimeStepping::Implicit).unwrap();
        let explicit = q
            .values()
            .iter()
            .zip(p.values())
            .zip(&rate)
            .map(|((a, b), g)| ((a - b) / dt - g).abs())
            .fold(0.0, f64::max);
        let implicit = r
            .values()
            .iter()
            .zip(p.values())
            .zip(&rate)
            .map(|((a, b), g)| ((a - b) / dt - g).abs())
            .fold(0.0, f64::max);
        (explicit, implicit)
    };
    let scale = rate.iter().map(|g| g.abs()).fold(0.0, f64::max);
    let (e1, i1) = err(1e-7);
    let (_, i2) = err(5e-8);
    assert!(e1 < 1e-6 * scale, "explicit {e1:e}");
    let ratio = i1 / i2;
    assert!((1.8..2.2).contains(&ratio), "first-order ratio {ratio}");
}

#[test]
fn constant_schedule_cycle_is_stationary_density() {
    let params = ModelParams::constant(10.0, 2.0, 0.0).unwrap();
    let cfg = CycleConfig {
        n_cells: 256,
        dt: 1e-4,
        tolerance: 1e-4,
        max_periods: 10,
        record_stride: 1,
        record_periods: 1,
        mode: TimeStepping::Implicit,
    };
    let cyc = periodic_cycle(&params, &PdfGrid::uniform(256).unwrap(), &cfg).unwrap();
    let st = stationary_pdf(&params, 256).unwrap();
    assert_eq!(cyc.snapshots.len(), 1);
    assert_eq!(cyc.snapshots[0].values(), st.pdf.values());
}

#[test]
fn driven_cycle_has_two_ridges_displaced_forward() {
    let params = driven();
    let n = 512;
    let cfg = CycleConfig {
        n_cells: n,
        dt: 1e-4,
        tolerance: 1e-4,
        max_periods: 100,
        record_stride: 10,
        record_periods: 2,
        mode: TimeStepping::Implicit,
    };
    let cyc = periodic_cycle(&params, &PdfGrid::uniform(n).unwrap(), &cfg).unwrap();
    assert!((cyc.period - 0.1).abs() < 1e-15);
    assert!(*cyc.distance_trace.last().unwrap() < 1e-4);
    assert_eq!(cyc.snapshots.len(), 2 * 100 + 1);
    let first = cyc.start();
    let last = cyc.snapshots.last().unwrap();
    assert!(first.l1_distance(last) < 1e-4);
    assert!((last.time() - first.time() - 0.2).abs() < 1e-12);
    for p in &cyc.snapshots {
        let peak = half_circle_peak(p);
        assert!(peak > 0.0 && peak < FRAC_PI_2, "t = {}: peak at {peak}", p.time());
        // density near the eigenstates exceeds that near phi = pi/2
        let near = p.values()[(peak / p.spacing()) as usize];
        let far = p.values()[n / 4 + (peak / p.spacing()) as usize];
        assert!(near > 1.5 * far, "t = {}: {near} vs {far}", p.time());
        let m = n / 2;
        for j in 0..m {
            assert!((p.values()[j] - p.values()[j + m]).abs() < 1e-9);
        }
    }
}

#[test]
fn pdf_csv_round_trips() {
    let a = bump(16, 1.0, 0.3).with_time(0.25);
    let b = bump(16, 2.0, 0.3).with_time(0.5);
    let mut buf = Vec::new();
    PdfGrid::write_csv(&[a.clone(), b.clone()], &mut buf).unwrap();
    let mut reader = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(reader.headers().unwrap(), vec!["t", "phi", "p"]);
    let rows: Vec<[f64; 3]> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            [r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap()]
        })
        .collect();
    assert_eq!(rows.len(), 32);
    for (i, row) in rows.iter().enumerate() {
        let src = if i < 16 { &a } else { &b };
        let j = i % 16;
        let want = [src.time(), src.center(j), src.values()[j]];
        for k in 0..3 {
            assert!((row[k] - want[k]).abs() <= 1e-14 * want[k].abs(), "row {i} col {k}");
        }
    }
}
