use nonlocal_eikonal::analysis::{front_perimeter, gradient_margin, inclusion_test};
use nonlocal_eikonal::counterexample::{solve_y_gamma, standard_grid, GammaControl};
use nonlocal_eikonal::eikonal::{cfl_limit, oleinik_lax_inf, oleinik_lax_sup, step, MAX_CFL};
use nonlocal_eikonal::grid::{GridSpec, ScalarField, Trajectory};
use nonlocal_eikonal::velocity::{convolve, Kernel, KernelShape, OccupancyField};
use nonlocal_eikonal::weak_engine::{psi, Mollifier};
use proptest::prelude::*;

fn field(dim: usize, n: usize, h: f64, values: Vec<f64>) -> ScalarField {
    let grid = GridSpec::cube(dim, 0.0, (n - 1) as f64 * h, h).unwrap();
    ScalarField::new(grid, values[..grid.node_count()].to_vec()).unwrap()
}

fn setup() -> impl Strategy<Value = (usize, usize, f64)> {
    (1usize..=2, 4usize..=12, 0.01f64..0.3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn step_preserves_order(
        (dim, n, h) in setup(),
        base in prop::collection::vec(-1.0f64..=1.0, 144),
        bump in prop::collection::vec(0.0f64..0.6, 144),
        speeds in prop::collection::vec(-3.0f64..=3.0, 144),
        theta in 0.01f64..=MAX_CFL,
    ) {
        let u = field(dim, n, h, base.clone());
        let v = field(dim, n, h, base.iter().zip(&bump).map(|(a, b)| (a + b).min(1.0)).collect());
        let c = field(dim, n, h, speeds);
        let dt = theta * cfl_limit(&c);
        let (su, sv) = (step(&u, &c, dt).unwrap(), step(&v, &c, dt).unwrap());
        prop_assert!(su.values().iter().zip(sv.values()).all(|(a, b)| a <= b));
    }

    #[test]
    fn step_is_a_sup_norm_contraction(
        (dim, n, h) in setup(),
        a in prop::collection::vec(-1.0f64..=1.0, 144),
        b in prop::collection::vec(-1.0f64..=1.0, 144),
        speeds in prop::collection::vec(-2.0f64..=2.0, 144),
        theta in 0.01f64..=MAX_CFL,
    ) {
        let (u, v, c) = (field(dim, n, h, a), field(dim, n, h, b), field(dim, n, h, speeds));
        let dt = theta * cfl_limit(&c);
        let after = step(&u, &c, dt).unwrap().sup_distance(&step(&v, &c, dt).unwrap()).unwrap();
        prop_assert!(after <= u.sup_distance(&v).unwrap() + 1e-12);
    }

    #[test]
    fn step_commutes_with_constants(
        (dim, n, h) in setup(),
        a in prop::collection::vec(-0.5f64..=0.5, 144),
        shift in -0.4f64..=0.4,
        speeds in prop::collection::vec(-2.0f64..=2.0, 144),
    ) {
        let u = field(dim, n, h, a);
        let c = field(dim, n, h, speeds);
        let dt = 0.5 * cfl_limit(&c);
        let lhs = step(&u.map(|x| x + shift), &c, dt).unwrap();
        let rhs = step(&u, &c, dt).unwrap().map(|x| x + shift);
        prop_assert!(lhs.sup_distance(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn sup_distance_is_a_pseudometric(
        a in prop::collection::vec(-1.0f64..=1.0, 30),
        b in prop::collection::vec(-1.0f64..=1.0, 30),
        c in prop::collection::vec(-1.0f64..=1.0, 30),
    ) {
        let (u, v, w) = (field(1, 30, 0.1, a), field(1, 30, 0.1, b), field(1, 30, 0.1, c));
        let d = |x: &ScalarField, y: &ScalarField| x.sup_distance(y).unwrap();
        prop_assert_eq!(d(&u, &u), 0.0);
        prop_assert_eq!(d(&u, &v), d(&v, &u));
        prop_assert!(d(&u, &w) <= d(&u, &v) + d(&v, &w) + 1e-15);
    }

    #[test]
    fn trajectory_distance_is_a_pseudometric(
        a in prop::collection::vec(-1.0f64..=1.0, 20),
        b in prop::collection::vec(-1.0f64..=1.0, 20),
        c in prop::collection::vec(-1.0f64..=1.0, 20),
    ) {
        let traj = |v: &[f64]| {
            let f0 = field(1, 10, 0.1, v[..10].to_vec());
            let f1 = field(1, 10, 0.1, v[10..].to_vec());
            Trajectory::new(vec![0.0, 1.0], vec![f0, f1]).unwrap()
        };
        let (x, y, z) = (traj(&a), traj(&b), traj(&c));
        let d = |p: &Trajectory, q: &Trajectory| p.sup_distance(q).unwrap();
        prop_assert_eq!(d(&x, &y), d(&y, &x));
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-15);
    }

    #[test]
    fn psi_is_monotone_into_unit_interval(r in -2.0f64..2.0, s in -2.0f64..2.0, eps in 0.001f64..1.0) {
        let (a, b) = (psi(r.min(s), eps), psi(r.max(s), eps));
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(a <= b);
        let m = Mollifier::new(eps).unwrap();
        prop_assert_eq!(m.apply(r), psi(r, eps));
    }

    #[test]
    fn nonnegative_kernel_convolution_is_monotone_and_linear(
        chi in prop::collection::vec(0.0f64..=0.5, 40),
        extra in prop::collection::vec(0.0f64..=0.5, 40),
        a in 0.15f64..1.0,
    ) {
        let grid = GridSpec::cube(1, 0.0, 3.9, 0.1).unwrap();
        let k = Kernel::builtin(KernelShape::Triangle { a }, 1, 0.1).unwrap();
        let occ = |v: Vec<f64>| OccupancyField::new(ScalarField::new(grid, v).unwrap()).unwrap();
        let lo = convolve(&k, &occ(chi.clone()), 0.0).unwrap();
        let hi = convolve(&k, &occ(chi.iter().zip(&extra).map(|(x, y)| x + y).collect()), 0.0).unwrap();
        let add = convolve(&k, &occ(extra), 0.0).unwrap();
        for i in 0..grid.node_count() {
            prop_assert!(lo.values()[i] <= hi.values()[i] + 1e-15);
            prop_assert!((lo.values()[i] + add.values()[i] - hi.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn oleinik_lax_brackets_the_data(values in prop::collection::vec(-1.0f64..=1.0, 40), r in 0.0f64..1.0) {
        let u0 = field(1, 40, 0.05, values);
        let (lo, hi) = (oleinik_lax_inf(&u0, r).unwrap(), oleinik_lax_sup(&u0, r).unwrap());
        for i in 0..40 {
            prop_assert!(lo.values()[i] <= u0.values()[i] && u0.values()[i] <= hi.values()[i]);
        }
    }
}

fn control() -> impl Strategy<Value = GammaControl> {
    prop::collection::vec((0.0f64..0.999, 0.0f64..=1.0), 1..4).prop_map(|mut raw| {
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        raw.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-3);
        let mut knots: Vec<(f64, f64)> = raw.into_iter().map(|(s, v)| (1.0 + s, v)).collect();
        knots[0].0 = 1.0;
        GammaControl::new(knots).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn y_is_ordered_by_the_control(g in control(), lift in 0.0f64..=1.0) {
        let higher = GammaControl::new(g.knots().iter().map(|&(t, v)| (t, v.max(lift))).collect()).unwrap();
        prop_assert!(g.le(&higher));
        let (a, b) = (solve_y_gamma(&g, 1e-3).unwrap(), solve_y_gamma(&higher, 1e-3).unwrap());
        for i in 0..=20 {
            let t = 1.0 + i as f64 * 0.05;
            prop_assert!(a.y(t) <= b.y(t) + 1e-9);
            prop_assert!(a.y(t) >= -1e-12);
        }
        prop_assert!(a.y(2.0) >= 1.0 / 3.0 - 1e-6 && b.y(2.0) <= 1.0 + 1e-6);
    }

    #[test]
    fn closed_forms_are_even(g in control(), x in 0.0f64..3.0, t in 0.0f64..=2.0) {
        let s = solve_y_gamma(&g, 1e-3).unwrap();
        prop_assert_eq!(s.u(x, t), s.u(-x, t));
        prop_assert_eq!(s.chi(x, t), s.chi(-x, t));
        prop_assert!((-1.0..=1.0).contains(&s.u(x, t)));
        prop_assert!((0.0..=1.0).contains(&s.chi(x, t)));
    }
}

#[test]
fn sampled_closed_forms_are_even_on_the_standard_grid() {
    let grid = standard_grid(0.01).unwrap();
    let s = solve_y_gamma(&GammaControl::new(vec![(1.0, 0.3), (1.4, 0.9)]).unwrap(), 1e-4).unwrap();
    for t in [0.3, 1.0, 1.7, 2.0] {
        let u = s.sample_u(&grid, t);
        let v = u.values();
        let n = v.len();
        for i in 0..n {
            assert!((v[i] - v[n - 1 - i]).abs() < 1e-12);
        }
    }
}

#[test]
fn nested_sets_stay_nested_under_a_shared_speed() {
    let grid = GridSpec::cube(2, -2.0, 2.0, 0.05).unwrap();
    let disc = |r: f64| ScalarField::from_fn(grid, move |x| (r - (x[0] * x[0] + x[1] * x[1]).sqrt()).clamp(-1.0, 1.0));
    let c = ScalarField::from_fn(grid, |x| 0.5 + 0.3 * x[0].sin());
    let dt = 0.45 * cfl_limit(&c);
    let (mut a, mut b) = (disc(0.5), disc(0.9));
    let (mut ta, mut tb) = (vec![a.clone()], vec![b.clone()]);
    for _ in 0..20 {
        a = step(&a, &c, dt).unwrap();
        b = step(&b, &c, dt).unwrap();
        ta.push(a.clone());
        tb.push(b.clone());
    }
    let times: Vec<f64> = (0..=20).map(|k| k as f64 * dt).collect();
    let inner = Trajectory::new(times.clone(), ta).unwrap();
    let outer = Trajectory::new(times, tb).unwrap();
    assert!(inclusion_test(&inner, &outer).unwrap().into_iter().all(|f| f));
    assert!(front_perimeter(&a) < front_perimeter(&b));
    assert!(gradient_margin(&b) > 0.5);
}
