use num_complex::Complex64;
use qdecay::decay::{
    decay_curve, decay_curve_from, decay_curve_grid, engineer_vanishing_moment, fit_exponent,
    nonescape, scan_coupling, small_k_slope, DecayCurve, TimeSpec,
};
use qdecay::evolve::{decompose, propagate_spectral, Engine, KGridSpec, WaveFunction};
use qdecay::model::{
    build_initial_state, InitialState, Potential, PotentialFamily, RadialGrid, StateFamily,
};
use qdecay::scattering::{find_resonance_poles, SearchBox};
use qdecay::Error;
use std::f64::consts::PI;

fn sine_box(mode: u32, grid: RadialGrid) -> InitialState {
    build_initial_state(StateFamily::SineBox { mode, radius: 1.0 }, grid).unwrap()
}

fn synthetic(f: impl Fn(f64) -> f64, lo: f64, hi: f64, per_decade: usize) -> DecayCurve {
    let times = TimeSpec {
        t_min: lo,
        t_max: hi,
        per_decade,
    }
    .times()
    .unwrap();
    let values = times.iter().map(|&t| f(t)).collect();
    DecayCurve::from_samples(1.0, times, values).unwrap()
}

#[test]
fn nonescape_at_t_zero_is_one() {
    let grid = RadialGrid::new(2.0, 401).unwrap();
    let state = sine_box(1, grid);
    let wf = WaveFunction {
        t: 0.0,
        grid,
        samples: state.samples().iter().map(|&v| v.into()).collect(),
        engine: Engine::Grid,
    };
    assert!((nonescape(&wf, 1.0).unwrap() - 1.0).abs() < 1e-10);
    assert!((nonescape(&wf, 1.5).unwrap() - 1.0).abs() < 1e-10);
    assert!(matches!(nonescape(&wf, 2.5), Err(Error::Domain(_))));
}

#[test]
fn nonescape_handles_partial_cells_and_is_monotone() {
    let grid = RadialGrid::new(3.0, 301).unwrap();
    let wf = WaveFunction {
        t: 0.0,
        grid,
        samples: grid
            .nodes()
            .map(|r| Complex64::new((-r).exp() * r, 0.0))
            .collect(),
        engine: Engine::Grid,
    };
    // ∫₀^R r² e^{-2r} dr in closed form.
    let exact = |x: f64| 0.25 - (-2.0 * x).exp() * (2.0 * x * x + 2.0 * x + 1.0) / 4.0;
    let mut prev = 0.0;
    for r in [0.0, 0.013, 0.5, 1.2345, 2.999] {
        let p = nonescape(&wf, r).unwrap();
        assert!((p - exact(r)).abs() < 1e-7, "R = {r}: {p} vs {}", exact(r));
        assert!(p >= prev);
        prev = p;
    }
}

#[test]
fn spectral_nonescape_over_whole_grid_is_total_norm() {
    let grid = RadialGrid::with_spacing(12.0, 0.005).unwrap();
    let state = build_initial_state(
        StateFamily::GaussianBump {
            center: 2.5,
            width: 0.3,
            radius: 5.0,
        },
        grid,
    )
    .unwrap();
    let p = Potential::delta_shell(4.0, 1.0).unwrap();
    let d = decompose(&state, &p, KGridSpec::default()).unwrap();
    for t in [0.0, 0.05, 0.2] {
        let wf = propagate_spectral(&d, t).unwrap();
        let total = nonescape(&wf, grid.r_max()).unwrap();
        assert!((total - 1.0).abs() < 1e-8, "t = {t}: {total}");
    }
}

#[test]
fn time_spec_is_log_spaced_and_inclusive() {
    let ts = TimeSpec {
        t_min: 1.0,
        t_max: 1e3,
        per_decade: 4,
    }
    .times()
    .unwrap();
    assert_eq!(ts.len(), 13);
    assert_eq!(ts[0], 1.0);
    assert_eq!(*ts.last().unwrap(), 1e3);
    for w in ts.windows(2) {
        assert!((w[1] / w[0] - 10f64.powf(0.25)).abs() < 1e-12);
    }
    let bad = TimeSpec {
        t_min: 0.0,
        ..TimeSpec::default()
    };
    assert!(matches!(bad.times(), Err(Error::Config { .. })));
}

#[test]
fn fit_recovers_pure_power_law_exactly() {
    for (amp, s) in [(7.0, -3.0), (1e-12, -1.0), (3.5e4, -5.0)] {
        let curve = synthetic(|t| amp * t.powf(s), 1.0, 1e5, 8);
        let fit = fit_exponent(&curve, None).unwrap();
        assert!((fit.exponent - s).abs() < 1e-10, "{} vs {s}", fit.exponent);
        assert!(fit.residual < 1e-12);
        assert!(!fit.unstable);
        assert_eq!(fit.samples, 13);
        assert!((fit.intercept - amp.ln()).abs() < 1e-8);
    }
}

#[test]
fn fit_sees_the_dominant_term() {
    let curve = synthetic(|t| 1.0 / t + t.powi(-3), 1.0, 1e4, 8);
    let fit = fit_exponent(&curve, Some((1e3, 1e4))).unwrap();
    assert!((fit.exponent + 1.0).abs() < 0.02);
}

#[test]
fn fit_flags_exponential_decay() {
    let curve = synthetic(|t| 5.0 * (-t).exp(), 1.0, 10.0, 10);
    let fit = fit_exponent(&curve, Some((1.0, 10.0))).unwrap();
    assert!(fit.unstable);
    assert!(fit.local_exponents.iter().all(|s| *s < 0.0));
}

#[test]
fn fit_rejects_short_windows_and_noise_floor() {
    let curve = synthetic(|t| t.powi(-3), 1.0, 1e2, 3);
    assert!(matches!(fit_exponent(&curve, None), Err(Error::Domain(_))));
    let mut curve = synthetic(|t| t.powi(-3), 1.0, 1e4, 8);
    let n = curve.values.len();
    curve.values[n - 2] = 0.0;
    assert!(matches!(fit_exponent(&curve, None), Err(Error::Domain(_))));
}

#[test]
fn free_curve_matches_grid_engine() {
    let grid = RadialGrid::with_spacing(40.0, 2.5e-3).unwrap();
    let state = build_initial_state(
        StateFamily::GaussianBump {
            center: 0.5,
            width: 0.12,
            radius: 1.0,
        },
        grid,
    )
    .unwrap();
    let p = Potential::free(1.0).unwrap();
    let d = decompose(&state, &p, KGridSpec::default()).unwrap();
    let times: Vec<f64> = (1..=5).map(|i| 0.04 * i as f64).collect();
    let spectral = decay_curve_from(&d, 1.0, &times).unwrap();
    let grid_curve = decay_curve_grid(&state, &p, 1.0, &times, 2.5e-4).unwrap();
    assert!(!grid_curve.truncated);
    for (a, b) in spectral.values.iter().zip(&grid_curve.values) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        assert!(*a <= 1.0);
    }
}

#[test]
fn resonance_controls_the_intermediate_era() {
    let grid = RadialGrid::new(2.0, 401).unwrap();
    let state = sine_box(1, grid);
    let p = Potential::delta_shell(6.0, 1.0).unwrap();
    let times: Vec<f64> = (0..=8).map(|i| 3.0 + 0.5 * i as f64).collect();
    let d = decompose(&state, &p, KGridSpec::default()).unwrap();
    let curve = decay_curve_from(&d, 1.0, &times).unwrap();
    let n = times.len() as f64;
    let (mx, my) = (
        times.iter().sum::<f64>() / n,
        curve.values.iter().map(|v| v.ln()).sum::<f64>() / n,
    );
    let slope = times
        .iter()
        .zip(&curve.values)
        .map(|(t, v)| (t - mx) * (v.ln() - my))
        .sum::<f64>()
        / times.iter().map(|t| (t - mx).powi(2)).sum::<f64>();
    let search = find_resonance_poles(
        &p,
        SearchBox {
            re_min: 0.5,
            re_max: 5.0,
            im_min: -1.0,
            im_max: -1e-3,
        },
        4,
    )
    .unwrap();
    let k = search.poles[0].k_pole;
    let rate = -2.0 * (k * k).im;
    assert!((slope + rate).abs() < 0.05 * rate, "{slope} vs {}", -rate);
}

#[test]
fn shell_curve_decays_as_inverse_cube() {
    let grid = RadialGrid::new(2.0, 401).unwrap();
    let state = sine_box(1, grid);
    let p = Potential::delta_shell(4.0, 1.0).unwrap();
    let times = TimeSpec {
        t_min: 100.0,
        t_max: 1e5,
        per_decade: 6,
    };
    let curve = decay_curve(&state, &p, 1.0, &times, KGridSpec::default()).unwrap();
    assert!(!curve.truncated);
    assert!(curve.halving_change.iter().all(|c| *c < 1e-8));
    let fit = fit_exponent(&curve, None).unwrap();
    assert!((fit.exponent + 3.0).abs() < 0.05);
}

#[test]
fn panel_budget_truncates_the_curve() {
    let grid = RadialGrid::new(2.0, 401).unwrap();
    let state = sine_box(1, grid);
    let p = Potential::delta_shell(6.0, 1.0).unwrap();
    let spec = KGridSpec {
        panel_budget: 20_000,
        ..KGridSpec::default()
    };
    let d = decompose(&state, &p, spec).unwrap();
    // Short times need the most panels along the path.
    assert!(d.panel_count(1e2, 1.0).unwrap() * 2 < 20_000);
    assert!(d.panel_count(0.1, 1.0).is_err());
    let curve = decay_curve_from(&d, 1.0, &[1e2, 1e3, 0.1, 1e4]).unwrap();
    assert!(curve.truncated);
    assert!(curve.truncation_reason.unwrap().contains("budget"));
    assert_eq!(curve.times, vec![1e2, 1e3]);
    assert_eq!(curve.max_reliable_t, 1e3);
}

#[test]
fn scan_projects_bound_states_and_records_failures() {
    let grid = RadialGrid::new(2.0, 401).unwrap();
    let state = sine_box(1, grid);
    let family = PotentialFamily::DeltaShell { radius: 1.0 };
    let times = TimeSpec {
        t_min: 100.0,
        t_max: 1e5,
        per_decade: 6,
    };
    let points = scan_coupling(
        &family,
        &[-1.5, 2.0, f64::NAN],
        &state,
        1.0,
        &times,
        None,
        KGridSpec::default(),
    )
    .unwrap();
    assert_eq!(points.len(), 3);
    assert_eq!(points[0].bound_states_removed, 1);
    for p in &points[..2] {
        let fit = p.fit.as_ref().unwrap();
        assert!((fit.exponent + 3.0).abs() < 0.05, "{p:?}");
    }
    assert!(points[2].fit.is_none() && points[2].error.is_some());
}

#[test]
fn small_k_slope_matches_first_moment() {
    // c(k)/k → ∫ r ψ(r) dr for the free potential.
    let grid = RadialGrid::new(2.0, 401).unwrap();
    let p = Potential::free(1.0).unwrap();
    let s1 = small_k_slope(&sine_box(1, grid), &p).unwrap();
    let s2 = small_k_slope(&sine_box(2, grid), &p).unwrap();
    assert!((s1 - 2f64.sqrt() / PI).abs() < 1e-12);
    assert!((s2 + 2f64.sqrt() / (2.0 * PI)).abs() < 1e-12);
}

#[test]
fn engineered_state_cancels_the_leading_moment() {
    let grid = RadialGrid::new(2.0, 401).unwrap();
    let p = Potential::free(1.0).unwrap();
    let (a, b) = (sine_box(1, grid), sine_box(2, grid));
    let e = engineer_vanishing_moment(&a, &b, &p).unwrap();
    let scale = small_k_slope(&a, &p)
        .unwrap()
        .abs()
        .max(small_k_slope(&b, &p).unwrap().abs());
    assert!(small_k_slope(&e, &p).unwrap().abs() < 1e-8 * scale);
    assert!((e.analytic_norm() - 1.0).abs() < 1e-12);
}

#[test]
fn proportional_states_cannot_be_combined() {
    let grid = RadialGrid::new(2.0, 401).unwrap();
    let p = Potential::free(1.0).unwrap();
    let a = sine_box(1, grid);
    assert!(matches!(
        engineer_vanishing_moment(&a, &a, &p),
        Err(Error::DegenerateCombination(_))
    ));
}
