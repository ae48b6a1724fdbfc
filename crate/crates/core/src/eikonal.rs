//! Explicit monotone solver for `u_t = c(x, t)|Du|` with a prescribed speed,
//! and the 1D Oleinik-Lax inf/sup formulas used as exact references.

use crate::error::{Error, Result};
use crate::grid::{godunov_at, GridSpec, ScalarField, Trajectory};

/// Default CFL factor.
pub const DEFAULT_CFL: f64 = 0.45;
/// Largest admissible CFL factor.
pub const MAX_CFL: f64 = 0.9;
pub const DEFAULT_STEP_BUDGET: usize = 2_000_000;

/// Which upwind magnitude each speed sign uses. `Flipped` is the deliberately
/// wrong (downwind) choice, kept for fault-injection runs of the verifier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Upwinding {
    #[default]
    Godunov,
    Flipped,
}

/// Largest stable step `h / (√N · max|c|)` for a speed field.
pub fn cfl_limit(c: &ScalarField) -> f64 {
    let g = c.grid();
    g.h() / ((g.dim() as f64).sqrt() * c.sup_norm())
}

pub fn step(u: &ScalarField, c: &ScalarField, dt: f64) -> Result<ScalarField> {
    step_with(u, c, dt, Upwinding::Godunov)
}

/// One explicit Euler step `u + dt·[max(c,0)∇⁻ + min(c,0)∇⁺]`, clamped to `[−1, 1]`.
pub fn step_with(u: &ScalarField, c: &ScalarField, dt: f64, upwinding: Upwinding) -> Result<ScalarField> {
    u.check_same_grid(c)?;
    let limit = cfl_limit(c);
    if !(dt >= 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, limit });
    }
    let g = *u.grid();
    let uv = u.values();
    let mut out = Vec::with_capacity(uv.len());
    for (i, (&ui, &ci)) in uv.iter().zip(c.values()).enumerate() {
        if ci == 0.0 {
            out.push(ui);
            continue;
        }
        let (plus, minus) = godunov_at(&g, uv, i);
        let (expand, shrink) = match upwinding {
            Upwinding::Godunov => (minus, plus),
            Upwinding::Flipped => (plus, minus),
        };
        let rate = if ci > 0.0 { ci * expand } else { ci * shrink };
        out.push((ui + dt * rate).clamp(-1.0, 1.0));
    }
    ScalarField::new(g, out)
}

/// Source of the speed frozen over each time step.
pub trait VelocityProvider {
    /// Speed used on `[t0, t1]`, the `k`-th step.
    fn velocity(&self, k: usize, t0: f64, t1: f64) -> Result<ScalarField>;
    /// Upper bound on `|c|` over the whole horizon, used to size the steps.
    fn speed_bound(&self) -> f64;
}

/// A speed field constant in time.
#[derive(Clone, Debug)]
pub struct FrozenVelocity(pub ScalarField);

impl VelocityProvider for FrozenVelocity {
    fn velocity(&self, _k: usize, _t0: f64, _t1: f64) -> Result<ScalarField> {
        Ok(self.0.clone())
    }

    fn speed_bound(&self) -> f64 {
        self.0.sup_norm()
    }
}

/// A space-independent speed `t ↦ c(t)` sampled at the left end of each step.
pub struct UniformSpeed<F> {
    grid: GridSpec,
    speed: F,
    bound: f64,
}

impl<F: Fn(f64) -> f64> UniformSpeed<F> {
    pub fn new(grid: GridSpec, bound: f64, speed: F) -> Self {
        Self { grid, speed, bound }
    }
}

impl<F: Fn(f64) -> f64> VelocityProvider for UniformSpeed<F> {
    fn velocity(&self, _k: usize, t0: f64, _t1: f64) -> Result<ScalarField> {
        Ok(ScalarField::constant(self.grid, (self.speed)(t0)))
    }

    fn speed_bound(&self) -> f64 {
        self.bound
    }
}

/// Speeds recorded step by step, replayed verbatim.
#[derive(Clone, Debug)]
pub struct VelocityRecord {
    pub fields: Vec<ScalarField>,
}

impl VelocityProvider for VelocityRecord {
    fn velocity(&self, k: usize, _t0: f64, _t1: f64) -> Result<ScalarField> {
        self.fields
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Precondition(format!("no recorded velocity for step {k}")))
    }

    fn speed_bound(&self) -> f64 {
        self.fields.iter().fold(0.0, |m, f| m.max(f.sup_norm()))
    }
}

/// Uniform time steps `t_k = k·dt`, `dt = T / steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Fewest uniform steps with `dt ≤ θ·h / (√N·speed_bound)`.
    pub fn for_cfl(grid: &GridSpec, horizon: f64, speed_bound: f64, cfl: f64, budget: usize) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if !(cfl > 0.0 && cfl <= MAX_CFL) {
            return Err(Error::Config(format!("CFL factor must lie in (0, {MAX_CFL}], got {cfl}")));
        }
        let dt_max = cfl * grid.h() / ((grid.dim() as f64).sqrt() * speed_bound.max(1e-300));
        let needed = (horizon / dt_max).ceil().max(1.0);
        if needed > budget as f64 {
            return Err(Error::Resource { needed: needed.min(usize::MAX as f64) as usize, budget });
        }
        Ok(Self { horizon, steps: needed as usize })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Step index closest to `t`.
    pub fn nearest_step(&self, t: f64) -> usize {
        ((t / self.dt()).round().max(0.0) as usize).min(self.steps)
    }
}

/// Initial data, horizon and discretisation parameters of a frozen-speed problem.
#[derive(Clone, Debug)]
pub struct EikonalProblem {
    pub u0: ScalarField,
    pub horizon: f64,
    pub cfl: f64,
    /// Requested output times; empty means every step.
    pub snapshot_times: Vec<f64>,
    pub step_budget: usize,
    pub upwinding: Upwinding,
}

impl EikonalProblem {
    pub fn new(u0: ScalarField, horizon: f64) -> Self {
        Self {
            u0,
            horizon,
            cfl: DEFAULT_CFL,
            snapshot_times: Vec::new(),
            step_budget: DEFAULT_STEP_BUDGET,
            upwinding: Upwinding::Godunov,
        }
    }

    pub fn with_snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshot_times = times;
        self
    }

    pub fn with_cfl(mut self, cfl: f64) -> Self {
        self.cfl = cfl;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.cfl > 0.0 && self.cfl <= MAX_CFL) {
            return Err(Error::Config(format!("CFL factor must lie in (0, {MAX_CFL}], got {}", self.cfl)));
        }
        if let Some(v) = self.u0.values().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("initial value {v} outside [-1, 1]")));
        }
        Ok(())
    }

    pub fn time_grid(&self, speed_bound: f64) -> Result<TimeGrid> {
        TimeGrid::for_cfl(self.u0.grid(), self.horizon, speed_bound, self.cfl, self.step_budget)
    }
}

/// Marches the problem through every step of `time_grid`, handing each
/// completed state to `visit(k, t_k, u_k)` (starting with `k = 0`).
pub fn march(
    problem: &EikonalProblem,
    provider: &dyn VelocityProvider,
    time_grid: TimeGrid,
    mut visit: impl FnMut(usize, f64, &ScalarField) -> Result<()>,
) -> Result<ScalarField> {
    problem.validate()?;
    let dt = time_grid.dt();
    let mut u = problem.u0.clone();
    visit(0, 0.0, &u)?;
    for k in 0..time_grid.steps {
        let (t0, t1) = (time_grid.time(k), time_grid.time(k + 1));
        let c = provider.velocity(k, t0, t1)?;
        u = step_with(&u, &c, dt, problem.upwinding)?;
        visit(k + 1, t1, &u)?;
    }
    Ok(u)
}

/// Solves with steps sized from the provider's speed bound and returns the
/// snapshots nearest to the requested times (every step if none requested).
pub fn solve(problem: &EikonalProblem, provider: &dyn VelocityProvider) -> Result<Trajectory> {
    let tg = problem.time_grid(provider.speed_bound())?;
    solve_on(problem, provider, tg)
}

pub fn solve_on(problem: &EikonalProblem, provider: &dyn VelocityProvider, tg: TimeGrid) -> Result<Trajectory> {
    let mut wanted: Vec<usize> = problem.snapshot_times.iter().map(|&t| tg.nearest_step(t)).collect();
    wanted.sort_unstable();
    wanted.dedup();
    let keep_all = wanted.is_empty();
    let (mut times, mut fields) = (Vec::new(), Vec::new());
    march(problem, provider, tg, |k, t, u| {
        if keep_all || wanted.binary_search(&k).is_ok() {
            times.push(t);
            fields.push(u.clone());
        }
        Ok(())
    })?;
    Trajectory::new(times, fields)
}

fn oleinik_lax(u0: &ScalarField, radius: f64, pick: fn(f64, f64) -> f64) -> Result<ScalarField> {
    let g = u0.grid();
    if g.dim() != 1 {
        return Err(Error::UnsupportedDimension(g.dim()));
    }
    if !(radius >= 0.0) {
        return Err(Error::Precondition(format!("radius must be nonnegative, got {radius}")));
    }
    let n = g.node_count();
    let reach = (radius / g.h() + 1e-9).floor() as usize;
    let v = u0.values();
    let out = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(reach);
            let hi = (i + reach).min(n - 1);
            v[lo..=hi].iter().copied().reduce(pick).expect("non-empty window")
        })
        .collect();
    ScalarField::new(*g, out)
}

/// `v(x) = min_{|x−y| ≤ radius} u₀(y)` over grid nodes `y` (1D).
pub fn oleinik_lax_inf(u0: &ScalarField, radius: f64) -> Result<ScalarField> {
    oleinik_lax(u0, radius, f64::min)
}

/// `v(x) = max_{|x−y| ≤ radius} u₀(y)` over grid nodes `y` (1D).
pub fn oleinik_lax_sup(u0: &ScalarField, radius: f64) -> Result<ScalarField> {
    oleinik_lax(u0, radius, f64::max)
}
