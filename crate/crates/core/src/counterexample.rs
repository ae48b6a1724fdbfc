//! A one-dimensional equation with many weak solutions.
//!
//! With `c₀ ≡ 1`, `c₁(t) = 2(t−1)(2−t)` and `u₀(x) = max(1 − |x|, −1)`, the
//! front `{u ≥ 0} = [−x₁(t), x₁(t)]` shrinks to a point at `t = 1` with
//! `x₁(t) = (t−1)²`. Afterwards `{u = 0} = [−y_γ(t), y_γ(t)]` fattens, where
//! `ẏ_γ = c₁ + 2γy_γ`, `y_γ(1) = 0`, for any control `0 ≤ γ ≤ 1`; each `γ`
//! gives a weak solution `(U_γ, χ_γ)` with `χ_γ = γ·1_{[−y_γ, y_γ]}`.

use std::fmt;

use crate::eikonal::{march, EikonalProblem, TimeGrid, VelocityProvider, DEFAULT_STEP_BUDGET};
use crate::error::{Error, Result};
use crate::grid::{sublevel_measure, GridSpec, ScalarField};
use crate::velocity::{assemble_total_velocity, quadratic_speed, ExternalVelocity, Kernel, KernelShape, OccupancyField};
use crate::weak_engine::{sandwich_check, DenseTrajectory};

pub const HORIZON: f64 = 2.0;
/// Radius of the indicator kernel standing in for `c₀ ≡ 1`.
pub const KERNEL_RADIUS: f64 = 4.0;
pub const DEFAULT_MESH: f64 = 1e-4;
pub const MAX_MESH: f64 = 1e-3;
/// `|c_γ| ≤ 2` on `[0, 2]` for every control.
pub const SPEED_BOUND: f64 = 2.0;

/// `c₁(t) = 2(t − 1)(2 − t)`.
pub fn c1_of_t(t: f64) -> f64 {
    quadratic_speed(t)
}

/// `x₁(t) = (t − 1)²`, the front position on `[0, 1]`.
pub fn x1_of_t(t: f64) -> f64 {
    (t - 1.0) * (t - 1.0)
}

/// `max(1 − |x|, −1)`.
pub fn initial_value(x: f64) -> f64 {
    (1.0 - x.abs()).max(-1.0)
}

/// Piecewise-constant control on `[1, 2]`: `γ(t) = v_i` for `t_i ≤ t < t_{i+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaControl {
    knots: Vec<(f64, f64)>,
}

impl GammaControl {
    /// Knots `(t_i, v_i)`; the first must sit at `t = 1`.
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Config("gamma needs at least one knot".into()));
        }
        if knots[0].0 != 1.0 {
            return Err(Error::Config(format!("gamma must start at t = 1, got {}", knots[0].0)));
        }
        for &(t, v) in &knots {
            if !(1.0..=HORIZON).contains(&t) {
                return Err(Error::Config(format!("gamma breakpoint {t} outside [1, 2]")));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("gamma value {v} outside [0, 1]")));
            }
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("gamma breakpoints must increase".into()));
        }
        Ok(Self { knots })
    }

    pub fn constant(v: f64) -> Result<Self> {
        Self::new(vec![(1.0, v)])
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.knots.partition_point(|(s, _)| *s <= t);
        self.knots[k.saturating_sub(1)].1
    }

    /// Whether `self ≤ other` everywhere on `[1, 2]`.
    pub fn le(&self, other: &Self) -> bool {
        let mut ts: Vec<f64> = self.knots.iter().chain(&other.knots).map(|k| k.0).collect();
        ts.sort_by(f64::total_cmp);
        ts.iter().all(|&t| self.eval(t) <= other.eval(t))
    }
}

impl fmt::Display for GammaControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.knots.iter().map(|(t, v)| format!("{t}:{v}")).collect();
        write!(f, "gamma[{}]", parts.join(","))
    }
}

/// `y_γ` sampled on a fine mesh, with the closed forms built on it.
#[derive(Clone, Debug)]
pub struct CounterexampleSolution {
    gamma: GammaControl,
    times: Vec<f64>,
    values: Vec<f64>,
    /// Control value on `[times[i], times[i+1]]`.
    controls: Vec<f64>,
}

fn y_rhs(t: f64, y: f64, g: f64) -> f64 {
    c1_of_t(t) + 2.0 * g * y
}

/// Integrates `ẏ = c₁ + 2γy`, `y(1) = 0` on `[1, 2]` with classical RK4,
/// splitting every constant piece of `γ` into substeps no longer than `mesh`.
pub fn solve_y_gamma(gamma: &GammaControl, mesh: f64) -> Result<CounterexampleSolution> {
    if !(mesh > 0.0 && mesh <= MAX_MESH) {
        return Err(Error::Precondition(format!("ODE mesh {mesh} must lie in (0, {MAX_MESH}]")));
    }
    let mut edges: Vec<f64> = gamma.knots.iter().map(|k| k.0).collect();
    edges.push(HORIZON);
    let mut times = vec![1.0];
    let mut values = vec![0.0];
    let mut controls = Vec::new();
    let mut y = 0.0;
    for (piece, w) in edges.windows(2).enumerate() {
        let g = gamma.knots[piece].1;
        let n = ((w[1] - w[0]) / mesh).ceil().max(1.0) as usize;
        let dt = (w[1] - w[0]) / n as f64;
        for i in 0..n {
            let t = w[0] + i as f64 * dt;
            let k1 = y_rhs(t, y, g);
            let k2 = y_rhs(t + dt / 2.0, y + dt / 2.0 * k1, g);
            let k3 = y_rhs(t + dt / 2.0, y + dt / 2.0 * k2, g);
            let k4 = y_rhs(t + dt, y + dt * k3, g);
            y += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            times.push(if i + 1 == n { w[1] } else { w[0] + (i + 1) as f64 * dt });
            values.push(y);
            controls.push(g);
        }
    }
    Ok(CounterexampleSolution { gamma: gamma.clone(), times, values, controls })
}

impl CounterexampleSolution {
    pub fn gamma(&self) -> &GammaControl {
        &self.gamma
    }

    /// Mesh times and `y_γ` values on `[1, 2]`.
    pub fn samples(&self) -> (&[f64], &[f64]) {
        (&self.times, &self.values)
    }

    /// `y_γ(t)` by cubic Hermite interpolation of the mesh values; 0 for `t ≤ 1`.
    pub fn y(&self, t: f64) -> f64 {
        if t <= 1.0 {
            return 0.0;
        }
        let t = t.min(HORIZON);
        let i = (self.times.partition_point(|&s| s <= t).max(1) - 1).min(self.times.len() - 2);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let g = self.controls[i];
        let (d0, d1) = (y_rhs(t0, y0, g), y_rhs(t1, y1, g));
        let dt = t1 - t0;
        let s = (t - t0) / dt;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * dt * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * dt * d1
    }

    /// Half-width of the front: `x₁(t)` up to `t = 1`, `y_γ(t)` after.
    pub fn front(&self, t: f64) -> f64 {
        if t <= 1.0 {
            x1_of_t(t)
        } else {
            self.y(t)
        }
    }

    /// `U_γ(x, t)`.
    pub fn u(&self, x: f64, t: f64) -> f64 {
        if t <= 1.0 {
            (x1_of_t(t) - x.abs()).max(-1.0)
        } else {
            let y = self.y(t);
            if x.abs() <= y {
                0.0
            } else {
                (y - x.abs()).max(-1.0)
            }
        }
    }

    /// `χ_γ(x, t)`: the indicator of `[−x₁, x₁]` up to `t = 1`, then
    /// `γ(t)·1_{[−y_γ, y_γ]}`.
    pub fn chi(&self, x: f64, t: f64) -> f64 {
        if t <= 1.0 {
            if x.abs() <= x1_of_t(t) {
                1.0
            } else {
                0.0
            }
        } else if x.abs() <= self.y(t) {
            self.gamma.eval(t)
        } else {
            0.0
        }
    }

    /// `c_γ(t)`: `c₁ + 2x₁` on `[0, 1]`, `c₁ + 2γy_γ` on `(1, 2]`.
    pub fn speed(&self, t: f64) -> f64 {
        if t <= 1.0 {
            c1_of_t(t) + 2.0 * x1_of_t(t)
        } else {
            c1_of_t(t) + 2.0 * self.gamma.eval(t) * self.y(t)
        }
    }

    /// `∫_{t0}^{t1} c_γ`, exact up to the ODE error since `c_γ` is the front velocity.
    pub fn speed_integral(&self, t0: f64, t1: f64) -> f64 {
        let p = |t: f64| if t <= 1.0 { x1_of_t(t) } else { self.y(t) };
        p(t1) - p(t0)
    }

    pub fn sample_u(&self, grid: &GridSpec, t: f64) -> ScalarField {
        ScalarField::from_fn(*grid, |x| self.u(x[0], t))
    }

    pub fn sample_chi(&self, grid: &GridSpec, t: f64) -> OccupancyField {
        OccupancyField::from_fn(*grid, |x| self.chi(x[0], t)).expect("chi takes values in [0, 1]")
    }
}

/// Speed `c_γ` averaged over each step.
pub struct StepAveragedSpeed<'a> {
    pub grid: GridSpec,
    pub solution: &'a CounterexampleSolution,
}

impl VelocityProvider for StepAveragedSpeed<'_> {
    fn velocity(&self, _k: usize, t0: f64, t1: f64) -> Result<ScalarField> {
        Ok(ScalarField::constant(self.grid, self.solution.speed_integral(t0, t1) / (t1 - t0)))
    }

    fn speed_bound(&self) -> f64 {
        SPEED_BOUND
    }
}

/// Threshold standing in for a strict `< h`: nodes exactly `h` from a
/// lattice-aligned front evaluate to `h − ulp` after rounding.
fn strict_h(h: f64) -> f64 {
    h * (1.0 - 1e-9)
}

/// `|{|U_γ(·, t)| < h}|` on the grid.
pub fn fattening_measure(solution: &CounterexampleSolution, grid: &GridSpec, t: f64) -> f64 {
    let u = solution.sample_u(grid, t).map(f64::abs);
    sublevel_measure(&u, ..strict_h(grid.h()))
}

/// `|{U_a(·,t) ≥ 0} Δ {U_b(·,t) ≥ 0}|` on the grid.
pub fn nonuniqueness_gap(a: &CounterexampleSolution, b: &CounterexampleSolution, grid: &GridSpec, t: f64) -> Result<f64> {
    crate::analysis::indicator_l1_distance(&a.sample_u(grid, t), &b.sample_u(grid, t))
}

/// The grid `[−3, 3]` with spacing `h`.
pub fn standard_grid(h: f64) -> Result<GridSpec> {
    GridSpec::cube(1, -3.0, 3.0, h)
}

/// One line of the verification report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReportRow {
    pub t: f64,
    pub x1: f64,
    pub y_gamma: f64,
    /// `|{u > −h}|` of the numerical solution.
    pub front_measure: f64,
    /// `|{|u| < h}|` of the numerical solution.
    pub zero_set_measure: f64,
    pub sup_error: f64,
    /// Measure of sandwich violations of the numerical `u` against `χ_γ`.
    pub sandwich_violations: f64,
}

#[derive(Clone, Debug)]
pub struct VerificationReport {
    pub gamma: GammaControl,
    pub h: f64,
    pub cfl: f64,
    pub rows: Vec<ReportRow>,
    /// Largest sup-norm error over every time step.
    pub sup_error: f64,
    /// Total sandwich violation measure over every time step.
    pub sandwich_violations: f64,
    /// Largest `|c_γ − (1_{[−R,R]} ⋆ χ_γ + c₁)|` on `|x| ≤ 3`.
    pub consistency_error: f64,
    pub band: f64,
    pub numerical: DenseTrajectory,
    /// Speed used on each step.
    pub velocities: Vec<ScalarField>,
}

impl VerificationReport {
    pub fn sup_error_ok(&self) -> bool {
        self.sup_error <= 2.0 * self.h
    }

    pub fn consistency_ok(&self) -> bool {
        self.consistency_error <= 2.0 * self.h
    }

    pub fn passed(&self) -> bool {
        self.sup_error_ok() && self.sandwich_violations == 0.0 && self.consistency_ok()
    }
}

/// Report times: every 0.05 on `[0, 2]`.
pub fn report_times() -> Vec<f64> {
    (0..=40).map(|i| i as f64 * 0.05).collect()
}

/// Solves `u_t = c_γ(t)|Du|` from `u₀` on `[0, 2]` and compares with the
/// closed forms at every step.
pub fn verify_weak_solution(solution: &CounterexampleSolution, grid: &GridSpec, cfl: f64) -> Result<VerificationReport> {
    if grid.dim() != 1 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    if grid.lower()[0] > -3.0 + 1e-12 || grid.upper(0) < 3.0 - 1e-12 {
        return Err(Error::Precondition("the grid must cover [-3, 3]".into()));
    }
    let h = grid.h();
    let band = 2.0 * h;
    let u0 = ScalarField::from_fn(*grid, |x| initial_value(x[0]));
    let problem = EikonalProblem::new(u0, HORIZON).with_cfl(cfl);
    let provider = StepAveragedSpeed { grid: *grid, solution };
    let tg = TimeGrid::for_cfl(grid, HORIZON, SPEED_BOUND, cfl, DEFAULT_STEP_BUDGET)?;
    let mut states = Vec::with_capacity(tg.steps + 1);
    let mut sup_error: f64 = 0.0;
    let mut sandwich_total = 0.0;
    march(&problem, &provider, tg, |_, t, u| {
        sup_error = sup_error.max(u.sup_distance(&solution.sample_u(grid, t))?);
        let traj = crate::grid::Trajectory::new(vec![t], vec![u.clone()])?;
        sandwich_total += sandwich_check(&traj, &[solution.sample_chi(grid, t)], band)?[0];
        states.push(u.clone());
        Ok(())
    })?;
    let numerical = DenseTrajectory::new(tg, states)?;
    let velocities = (0..tg.steps)
        .map(|k| provider.velocity(k, tg.time(k), tg.time(k + 1)))
        .collect::<Result<Vec<_>>>()?;

    let kernel = Kernel::builtin(KernelShape::Indicator { radius: KERNEL_RADIUS }, 1, h)?;
    let c1 = ExternalVelocity::Quadratic;
    let mut consistency: f64 = 0.0;
    let mut rows = Vec::new();
    for t in report_times() {
        let k = tg.nearest_step(t);
        let tk = tg.time(k);
        let u = &numerical.states[k];
        let chi = solution.sample_chi(grid, tk);
        let cbar = assemble_total_velocity(&kernel, &chi, &c1, tk)?;
        let c = solution.speed(tk);
        for (i, v) in cbar.values().iter().enumerate() {
            if grid.coords(i)[0].abs() <= 3.0 + 1e-12 {
                consistency = consistency.max((v - c).abs());
            }
        }
        let traj = crate::grid::Trajectory::new(vec![tk], vec![u.clone()])?;
        rows.push(ReportRow {
            t: tk,
            x1: if tk <= 1.0 { x1_of_t(tk) } else { 0.0 },
            y_gamma: solution.y(tk),
            front_measure: sublevel_measure(u, (std::ops::Bound::Excluded(-strict_h(h)), std::ops::Bound::Unbounded)),
            zero_set_measure: sublevel_measure(&u.map(f64::abs), ..strict_h(h)),
            sup_error: u.sup_distance(&solution.sample_u(grid, tk))?,
            sandwich_violations: sandwich_check(&traj, &[chi], band)?[0],
        });
    }
    Ok(VerificationReport {
        gamma: solution.gamma.clone(),
        h,
        cfl,
        rows,
        sup_error,
        sandwich_violations: sandwich_total,
        consistency_error: consistency,
        band,
        numerical,
        velocities,
    })
}
