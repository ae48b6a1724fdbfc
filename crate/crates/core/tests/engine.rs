use std::f64::consts::PI;

use nonlocal_eikonal::analysis::l1_stability_residual;
use nonlocal_eikonal::cli::{expanding_problem, front_radius_error};
use nonlocal_eikonal::counterexample::{
    c1_of_t, initial_value, solve_y_gamma, standard_grid, x1_of_t, GammaControl, KERNEL_RADIUS,
};
use nonlocal_eikonal::eikonal::{oleinik_lax_sup, DEFAULT_CFL, DEFAULT_STEP_BUDGET, MAX_CFL};
use nonlocal_eikonal::grid::{GridSpec, ScalarField};
use nonlocal_eikonal::velocity::{ExternalVelocity, Kernel, KernelShape};
use nonlocal_eikonal::weak_engine::{
    continuation, picard_map, velocity_record, DenseTrajectory, FixedPointConfig, NonlocalProblem,
};

#[test]
fn closed_form_is_nearly_fixed_by_the_picard_map_before_fattening() {
    let h = 0.01;
    let eps = 2.0 * h;
    let grid = standard_grid(h).unwrap();
    let kernel = Kernel::builtin(KernelShape::Indicator { radius: KERNEL_RADIUS }, 1, h).unwrap();
    let u0 = ScalarField::from_fn(grid, |x| initial_value(x[0]));
    let problem = NonlocalProblem::new(kernel, ExternalVelocity::Quadratic, u0, 1.0);
    let tg = problem.time_grid(DEFAULT_CFL, DEFAULT_STEP_BUDGET).unwrap();
    let exact = solve_y_gamma(&GammaControl::constant(1.0).unwrap(), 1e-4).unwrap();
    let states = tg.times().iter().map(|&t| exact.sample_u(&grid, t)).collect();
    let u = DenseTrajectory::new(tg, states).unwrap();

    let speeds = velocity_record(&problem, eps, &u).unwrap();
    for (k, c) in speeds.iter().enumerate() {
        let t = tg.time(k);
        let expected = c1_of_t(t) + 2.0 * x1_of_t(t);
        for (i, v) in c.values().iter().enumerate() {
            if grid.coords(i)[0].abs() <= 3.0 - KERNEL_RADIUS + 2.0 {
                assert!((v - expected).abs() <= 2.0 * h + eps + 1e-9, "t {t}: {v} vs {expected}");
            }
        }
    }
    let image = picard_map(&problem, eps, &u, DEFAULT_CFL, DEFAULT_STEP_BUDGET).unwrap();
    let d = image.sup_distance(&u).unwrap();
    assert!(d <= 8.0 * h, "T(u) moved the closed form by {d}");
    let front_gap = tg
        .times()
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let count = |f: &ScalarField| f.values().iter().filter(|&&v| v >= 0.0).count() as f64;
            (count(&image.states[k]) - count(&u.states[k])).abs() * h
        })
        .fold(0.0, f64::max);
    assert!(front_gap <= 2.0 * eps + 4.0 * h, "front measure moved by {front_gap}");
}

#[test]
fn zero_kernel_continuation_matches_the_sup_formula() {
    let h = 0.01;
    let grid = GridSpec::cube(1, -3.0, 3.0, h).unwrap();
    let kernel = Kernel::builtin(KernelShape::Zero, 1, h).unwrap();
    let u0 = ScalarField::from_fn(grid, |x| (1.0 - x[0].abs()).clamp(-1.0, 1.0));
    let problem = NonlocalProblem::new(kernel, ExternalVelocity::Constant(1.0), u0.clone(), 0.5).with_snapshots(vec![0.5]);
    let mut config = FixedPointConfig::for_grid(h);
    config.cfl = MAX_CFL;
    let w = continuation(&problem, &config).unwrap();
    assert!(w.converged());
    assert!(w.levels.iter().all(|l| l.evaluations == 1));
    let k = *w.snapshot_steps.last().unwrap();
    let t = w.u.time_grid.time(k);
    let exact = oleinik_lax_sup(&u0, t).unwrap();
    assert!(w.u.states[k].sup_distance(&exact).unwrap() <= 2.0 * h);
    assert!(w.diagnostics.iter().all(|d| d.sandwich_violation_measure == 0.0));
    assert_eq!(l1_stability_residual(&w).unwrap(), 0.0);
}

/// `c₀ ⋆ 1_{B(0,r)}` at `(r, 0)` for the continuous zero-mean profile
/// `(2 − |z|²/a²)/(4πa²)` on `|z| ≤ 2a`, by polar quadrature around the point.
fn front_convolution(r: f64, a: f64) -> f64 {
    let (nr, nt) = (400, 800);
    let mut sum = 0.0;
    for i in 0..nr {
        let s = (i as f64 + 0.5) * 2.0 * a / nr as f64;
        let k = (2.0 - s * s / (a * a)) / (4.0 * PI * a * a);
        for j in 0..nt {
            let th = (j as f64 + 0.5) * 2.0 * PI / nt as f64;
            let (x, y) = (r + s * th.cos(), s * th.sin());
            if x * x + y * y <= r * r {
                sum += k * s;
            }
        }
    }
    sum * (2.0 * a / nr as f64) * (2.0 * PI / nt as f64)
}

#[test]
fn expanding_circle_follows_the_radial_ode() {
    let h = 0.02;
    let problem = expanding_problem(2, h).unwrap();
    let w = continuation(&problem, &FixedPointConfig::for_grid(h)).unwrap();
    assert!(w.converged());

    let mut r = 1.0;
    let mut t = 0.0;
    let dt = 0.005;
    let mut radius_at = vec![(0.0, 1.0)];
    while t < 0.5 - 1e-12 {
        let f = |r: f64| 1.1 + front_convolution(r, 0.1);
        let k1 = f(r);
        let k2 = f(r + 0.5 * dt * k1);
        let k3 = f(r + 0.5 * dt * k2);
        let k4 = f(r + dt * k3);
        r += dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        t += dt;
        radius_at.push((t, r));
    }
    for &k in &w.snapshot_steps {
        let tk = w.u.time_grid.time(k);
        let i = ((tk / dt).floor() as usize).min(radius_at.len() - 2);
        let (t0, r0) = radius_at[i];
        let (t1, r1) = radius_at[i + 1];
        let expected = r0 + (r1 - r0) * (tk - t0) / (t1 - t0);
        let err = front_radius_error(&w.u.states[k], expected);
        assert!(err <= 3.0 * h, "t {tk}: front off the ODE radius {expected} by {err}");
    }
}
