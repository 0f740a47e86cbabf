use num_complex::Complex64;
use qdecay::evolve::{
    decompose, grid_safe_time, propagate_grid, propagate_grid_series, propagate_spectral, KGridSpec,
};
use qdecay::model::{build_initial_state, InitialState, Potential, RadialGrid, StateFamily};
use qdecay::numerics::{simpson, GaussLegendre};
use qdecay::scattering::{
    bound_overlap, default_kappa_max, find_bound_states, project_out_bound_states, regular_solution,
};
use qdecay::Error;
use std::f64::consts::FRAC_2_PI;

fn bump(center: f64, width: f64, radius: f64, grid: RadialGrid) -> InitialState {
    build_initial_state(
        StateFamily::GaussianBump {
            center,
            width,
            radius,
        },
        grid,
    )
    .unwrap()
}

fn l2(grid: &RadialGrid, a: &[Complex64], b: &[Complex64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).collect();
    simpson(&d, grid.spacing()).sqrt()
}

/// Image-method solution for `A [g(r - c) - g(r + c)]`, `g(x) = e^{-x²/2σ²}`.
fn free_gaussian(c: f64, s: f64, x: f64, t: f64) -> Complex64 {
    let z = Complex64::new(s * s, 2.0 * t);
    let a = s / z.sqrt();
    a * ((-(x - c) * (x - c) / (2.0 * z)).exp() - (-(x + c) * (x + c) / (2.0 * z)).exp())
}

#[test]
fn t_zero_reconstructs_smooth_state() {
    let grid = RadialGrid::with_spacing(6.0, 0.005).unwrap();
    let state = bump(2.5, 0.3, 5.0, grid);
    let p = Potential::delta_shell(6.0, 1.0).unwrap();
    let d = decompose(&state, &p, KGridSpec::default()).unwrap();
    let w = propagate_spectral(&d, 0.0).unwrap();
    let exact: Vec<Complex64> = state.samples().iter().map(|&v| v.into()).collect();
    let err = l2(&grid, &w.samples, &exact);
    assert!(err < 1e-6, "L2 error {err:e}");
}

#[test]
fn free_gaussian_matches_image_solution() {
    let (c, s) = (0.5, 0.08);
    let grid = RadialGrid::with_spacing(10.0, 0.005).unwrap();
    let state = bump(c, s, 1.0, grid);
    let free = Potential::free(1.0).unwrap();
    let d = decompose(&state, &free, KGridSpec::default()).unwrap();
    let f0: Vec<f64> = grid
        .nodes()
        .map(|x| free_gaussian(c, s, x, 0.0).re)
        .collect();
    let num: Vec<f64> = f0.iter().zip(state.samples()).map(|(a, b)| a * b).collect();
    let den: Vec<f64> = f0.iter().map(|a| a * a).collect();
    let amp = grid.integrate(&num) / grid.integrate(&den);
    for t in [0.5, 5.0, 50.0] {
        let w = propagate_spectral(&d, t).unwrap();
        let exact: Vec<Complex64> = grid
            .nodes()
            .map(|x| amp * free_gaussian(c, s, x, t))
            .collect();
        let err = l2(&grid, &w.samples, &exact);
        assert!(err < 1e-6, "t = {t}: L2 error {err:e}");
    }
}

#[test]
fn spectral_norm_is_conserved_at_late_times() {
    let grid = RadialGrid::new(2.0, 401).unwrap();
    let state = build_initial_state(
        StateFamily::SineBox {
            mode: 1,
            radius: 1.0,
        },
        grid,
    )
    .unwrap();
    let p = Potential::delta_shell(6.0, 1.0).unwrap();
    let d = decompose(&state, &p, KGridSpec::default()).unwrap();
    assert!((d.parseval() - 1.0).abs() < 1e-6);
    assert!((d.norm_at(1e3) - 1.0).abs() < 1e-8);
}

#[test]
fn retained_bound_component_is_reported() {
    let grid = RadialGrid::new(8.0, 801).unwrap();
    let state = build_initial_state(
        StateFamily::SineBox {
            mode: 1,
            radius: 1.5,
        },
        grid,
    )
    .unwrap();
    let p = Potential::delta_shell(-2.0, 1.0).unwrap();
    let bound = find_bound_states(&p, default_kappa_max(&p)).unwrap();
    assert_eq!(bound.len(), 1);
    let beta = bound_overlap(&state, &bound[0]);
    match decompose(&state, &p, KGridSpec::default()) {
        Err(Error::IncompleteBasis { deficit, .. }) => {
            assert!(
                (deficit - beta * beta).abs() < 1e-6,
                "{deficit} vs {}",
                beta * beta
            );
        }
        other => panic!("expected IncompleteBasis, got {other:?}"),
    }
    let projected = project_out_bound_states(&state, &bound).unwrap();
    let d = decompose(&projected, &p, KGridSpec::default()).unwrap();
    assert!((d.parseval() - 1.0).abs() < 1e-6);
}

#[test]
fn propagation_composes_in_time() {
    // Ψ(t1) re-expanded in the scattering basis and advanced by t2 on the
    // real momentum axis equals Ψ(t1 + t2).
    let (t1, t2) = (0.1, 0.15);
    let grid = RadialGrid::with_spacing(30.0, 0.0025).unwrap();
    let state = bump(2.5, 0.25, 4.0, grid);
    let p = Potential::delta_shell(6.0, 1.0).unwrap();
    let d = decompose(&state, &p, KGridSpec::default()).unwrap();
    let mid = propagate_spectral(&d, t1).unwrap();
    let r_cmp = 10.0;
    let n_cmp = grid.last_index_at_or_below(r_cmp) + 1;
    let direct = d.propagate_to(t1 + t2, r_cmp).unwrap();
    let rule = GaussLegendre::new(12);
    let mut composed = vec![Complex64::new(0.0, 0.0); n_cmp];
    let (k_top, width) = (48.0, 0.05);
    let panels = (k_top / width) as usize;
    for j in 0..panels {
        let (lo, hi) = (j as f64 * width, (j + 1) as f64 * width);
        let (c, m) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let k = c + m * x;
            let psi_k = regular_solution(&p, k, &grid).unwrap().regular_solution;
            let prod: Vec<Complex64> = psi_k.iter().zip(&mid.samples).map(|(a, b)| a * b).collect();
            let re: Vec<f64> = prod.iter().map(|z| z.re).collect();
            let im: Vec<f64> = prod.iter().map(|z| z.im).collect();
            let coeff = Complex64::new(grid.integrate(&re), grid.integrate(&im));
            let phase = Complex64::new(0.0, -k * k * t2).exp();
            let factor = FRAC_2_PI * m * w * phase * coeff;
            for (acc, &u) in composed.iter_mut().zip(&psi_k[..n_cmp]) {
                *acc += factor * u;
            }
        }
    }
    let sub = RadialGrid::new(grid.r(n_cmp - 1), n_cmp).unwrap();
    let err = l2(&sub, &composed, &direct.samples[..n_cmp]);
    assert!(err < 1e-6, "L2 error {err:e}");
}

#[test]
fn grid_engine_conserves_norm_over_many_steps() {
    let grid = RadialGrid::with_spacing(40.0, 0.01).unwrap();
    let state = bump(2.5, 0.25, 4.0, grid);
    let p = Potential::delta_shell(6.0, 1.0).unwrap();
    let dt = 1e-4;
    let w = propagate_grid(&state, &p, 1e4 * dt, dt).unwrap();
    let n0 = grid.spacing() * state.samples().iter().map(|v| v * v).sum::<f64>();
    assert!((w.discrete_norm() / n0 - 1.0).abs() < 1e-8);
}

#[test]
fn grid_series_matches_single_runs() {
    let grid = RadialGrid::with_spacing(20.0, 0.01).unwrap();
    let state = bump(2.5, 0.25, 4.0, grid);
    let p = Potential::delta_shell(-2.0, 1.0).unwrap();
    let dt = 1e-3;
    let series = propagate_grid_series(&state, &p, &[0.0, 0.05, 0.2], dt).unwrap();
    assert_eq!(
        series[0].samples[10],
        Complex64::new(state.samples()[10], 0.0)
    );
    for w in &series[1..] {
        let single = propagate_grid(&state, &p, w.t, dt).unwrap();
        assert!(l2(&grid, &w.samples, &single.samples) < 1e-13);
    }
}

#[test]
fn grid_engine_guards_against_wall_reflections() {
    let grid = RadialGrid::with_spacing(10.0, 0.01).unwrap();
    let state = bump(2.5, 0.25, 4.0, grid);
    let p = Potential::free(1.0).unwrap();
    let safe = grid_safe_time(&state).unwrap();
    assert!(safe > 0.0);
    match propagate_grid(&state, &p, 2.0 * safe, 1e-3) {
        Err(Error::BoundaryContamination { t_safe, .. }) => assert_eq!(t_safe, safe),
        other => panic!("expected BoundaryContamination, got {other:?}"),
    }
}

#[test]
fn engines_agree_under_refinement() {
    // Richardson in (h, dt) removes the second-order error of the grid
    // engine; the remainder must shrink well below the raw difference.
    let p = Potential::delta_shell(6.0, 1.0).unwrap();
    let coarse = bump(
        2.5,
        0.25,
        4.0,
        RadialGrid::with_spacing(20.0, 4e-3).unwrap(),
    );
    let fine = bump(
        2.5,
        0.25,
        4.0,
        RadialGrid::with_spacing(20.0, 2e-3).unwrap(),
    );
    let t = 0.2;
    let dt = 1e-3;
    let d = decompose(&coarse, &p, KGridSpec::default()).unwrap();
    let s = propagate_spectral(&d, t).unwrap();
    let gc = propagate_grid(&coarse, &p, t, dt).unwrap();
    let gf = propagate_grid(&fine, &p, t, dt / 2.0).unwrap();
    let rich: Vec<Complex64> = gc
        .samples
        .iter()
        .enumerate()
        .map(|(i, c)| (4.0 * gf.samples[2 * i] - c) / 3.0)
        .collect();
    let raw = l2(coarse.grid(), &gc.samples, &s.samples);
    let extrapolated = l2(coarse.grid(), &rich, &s.samples);
    assert!(extrapolated < 1e-4, "{extrapolated:e}");
    assert!(extrapolated < 0.1 * raw, "{extrapolated:e} vs {raw:e}");
}
