//! Weak solutions by mollified fixed point: the speed is built from
//! `ψ_ε(u)`, the resulting frozen-speed problem is solved, and the map
//! `u ↦ 𝒯(u)` is iterated (with damping) until it settles, for a decreasing
//! sequence of `ε`.

use crate::analysis::{front_perimeter, gradient_margin};
use crate::eikonal::{march, EikonalProblem, TimeGrid, VelocityRecord, DEFAULT_CFL, DEFAULT_STEP_BUDGET};
use crate::error::{Error, Result};
use crate::grid::{lipschitz_estimate, sublevel_measure, GridSpec, ScalarField, Trajectory};
use crate::velocity::{assemble_total_velocity, velocity_bounds, ExternalVelocity, Kernel, OccupancyField};

/// How the returned solution was selected among possibly many weak solutions.
pub const SELECTION_NOTE: &str = "first fixed point reached by damped Picard iteration started from the \
frozen initial occupancy; other weak solutions may exist and are not searched for";

/// Mollified Heaviside: 0 below `−ε`, 1 from 0 on, affine in between.
pub fn psi(r: f64, eps: f64) -> f64 {
    if r >= 0.0 {
        1.0
    } else if r <= -eps {
        0.0
    } else {
        (r + eps) / eps
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mollifier {
    eps: f64,
}

impl Mollifier {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("mollifier width must be positive, got {eps}")));
        }
        Ok(Self { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn apply(&self, r: f64) -> f64 {
        psi(r, self.eps)
    }

    /// `ψ_ε(u)` as an occupancy field.
    pub fn occupancy(&self, u: &ScalarField) -> OccupancyField {
        OccupancyField::new(u.map(|v| self.apply(v))).expect("psi takes values in [0, 1]")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointConfig {
    /// Strictly decreasing mollifier widths.
    pub eps_schedule: Vec<f64>,
    /// Picard iterations allowed per width.
    pub max_iterations: usize,
    /// Sup-norm tolerance on `|𝒯(u) − u|`.
    pub tolerance: f64,
    /// Initial damping weight `θ_d ∈ (0, 1]`.
    pub damping: f64,
    pub cfl: f64,
    pub step_budget: usize,
}

impl FixedPointConfig {
    /// Widths `4h, 2h, h`, 200 iterations, tolerance `h²`, no damping.
    pub fn for_grid(h: f64) -> Self {
        Self {
            eps_schedule: vec![4.0 * h, 2.0 * h, h],
            max_iterations: 200,
            tolerance: h * h,
            damping: 1.0,
            cfl: DEFAULT_CFL,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_schedule.is_empty() {
            return Err(Error::Config("epsilon schedule is empty".into()));
        }
        if self.eps_schedule.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Config("epsilon schedule entries must be positive".into()));
        }
        if self.eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("epsilon schedule must be strictly decreasing".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("at least one Picard iteration is required".into()));
        }
        Ok(())
    }
}

/// `u_t = (c₀ ⋆ χ + c₁)|Du|` with its data.
#[derive(Clone, Debug)]
pub struct NonlocalProblem {
    pub kernel: Kernel,
    pub c1: ExternalVelocity,
    pub u0: ScalarField,
    pub horizon: f64,
    pub snapshot_times: Vec<f64>,
}

impl NonlocalProblem {
    pub fn new(kernel: Kernel, c1: ExternalVelocity, u0: ScalarField, horizon: f64) -> Self {
        Self { kernel, c1, u0, horizon, snapshot_times: Vec::new() }
    }

    pub fn with_snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshot_times = times;
        self
    }

    pub fn grid(&self) -> &GridSpec {
        self.u0.grid()
    }

    /// `M = M₀ + M₁`.
    pub fn speed_bound(&self) -> f64 {
        velocity_bounds(&self.kernel, &self.c1).speed
    }

    pub fn time_grid(&self, cfl: f64, budget: usize) -> Result<TimeGrid> {
        TimeGrid::for_cfl(self.grid(), self.horizon, self.speed_bound(), cfl, budget)
    }

    /// Steps whose states are reported, one per requested time (all steps if none).
    pub fn snapshot_steps(&self, tg: &TimeGrid) -> Vec<usize> {
        if self.snapshot_times.is_empty() {
            return (0..=tg.steps).collect();
        }
        let mut steps: Vec<usize> = self.snapshot_times.iter().map(|&t| tg.nearest_step(t)).collect();
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

/// A trajectory stored at every time step.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTrajectory {
    pub time_grid: TimeGrid,
    pub states: Vec<ScalarField>,
}

impl DenseTrajectory {
    pub fn new(time_grid: TimeGrid, states: Vec<ScalarField>) -> Result<Self> {
        if states.len() != time_grid.steps + 1 {
            return Err(Error::Precondition(format!(
                "{} states for {} steps",
                states.len(),
                time_grid.steps
            )));
        }
        Ok(Self { time_grid, states })
    }

    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        Ok(self.step_distances(other)?.into_iter().fold(0.0, f64::max))
    }

    /// Sup-norm distance at each step.
    pub fn step_distances(&self, other: &Self) -> Result<Vec<f64>> {
        if self.states.len() != other.states.len() {
            return Err(Error::Precondition("trajectories have different step counts".into()));
        }
        self.states.iter().zip(&other.states).map(|(a, b)| a.sup_distance(b)).collect()
    }

    /// `(1 − θ)·self + θ·other`.
    pub fn blend(&self, other: &Self, theta: f64) -> Result<Self> {
        let states = self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a.zip_map(b, |x, y| (1.0 - theta) * x + theta * y))
            .collect::<Result<_>>()?;
        Ok(Self { time_grid: self.time_grid, states })
    }

    /// The states at `steps`, as a plain trajectory.
    pub fn select(&self, steps: &[usize]) -> Result<Trajectory> {
        let times = steps.iter().map(|&k| self.time_grid.time(k)).collect();
        let fields = steps.iter().map(|&k| self.states[k].clone()).collect();
        Trajectory::new(times, fields)
    }
}

/// `c_k = c₀(t_k) ⋆ ψ_ε(u_k) + c₁(·, t_k)` for every stored state.
pub fn velocity_record(problem: &NonlocalProblem, eps: f64, u: &DenseTrajectory) -> Result<Vec<ScalarField>> {
    let m = Mollifier::new(eps)?;
    u.states
        .iter()
        .enumerate()
        .map(|(k, uk)| assemble_total_velocity(&problem.kernel, &m.occupancy(uk), &problem.c1, u.time_grid.time(k)))
        .collect()
}

/// Solves the frozen-speed problem from `u₀` with the given per-step speeds.
pub fn solve_frozen(
    u0: &ScalarField,
    time_grid: TimeGrid,
    velocities: Vec<ScalarField>,
    cfl: f64,
    budget: usize,
) -> Result<DenseTrajectory> {
    let mut problem = EikonalProblem::new(u0.clone(), time_grid.horizon).with_cfl(cfl);
    problem.step_budget = budget;
    let mut states = Vec::with_capacity(time_grid.steps + 1);
    march(&problem, &VelocityRecord { fields: velocities }, time_grid, |_, _, u| {
        states.push(u.clone());
        Ok(())
    })?;
    DenseTrajectory::new(time_grid, states)
}

/// `𝒯(u)`: the solution driven by the speed that `u` generates.
pub fn picard_map(
    problem: &NonlocalProblem,
    eps: f64,
    u: &DenseTrajectory,
    cfl: f64,
    budget: usize,
) -> Result<DenseTrajectory> {
    let velocities = velocity_record(problem, eps, u)?;
    solve_frozen(&problem.u0, u.time_grid, velocities, cfl, budget)
}

/// Starting iterate: the solution with occupancy frozen at `1_{u₀ ≥ 0}`.
pub fn initial_iterate(problem: &NonlocalProblem, time_grid: TimeGrid, cfl: f64, budget: usize) -> Result<DenseTrajectory> {
    let chi = OccupancyField::indicator_nonnegative(&problem.u0);
    let velocities = (0..time_grid.steps)
        .map(|k| assemble_total_velocity(&problem.kernel, &chi, &problem.c1, time_grid.time(k)))
        .collect::<Result<Vec<_>>>()?;
    solve_frozen(&problem.u0, time_grid, velocities, cfl, budget)
}

/// Result of a damped fixed-point iteration.
#[derive(Clone, Debug)]
pub struct FixedPointOutcome {
    /// Best iterate found (the converged one if `converged`).
    pub iterate: DenseTrajectory,
    /// `|𝒯(u) − u|` at each step for the returned iterate.
    pub step_residuals: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
    /// Maps applied, rejected candidates included.
    pub evaluations: usize,
    /// Residual of every accepted iterate, in order.
    pub history: Vec<f64>,
    /// Damping weight after each evaluation.
    pub damping_history: Vec<f64>,
}

/// Damped iteration `u ← (1−θ_d)u + θ_d𝒯(u)` with any map on dense trajectories.
///
/// A candidate whose residual exceeds the current one is rejected and `θ_d`
/// halved; `θ_d` is also halved when five accepted iterations shrink the
/// residual by less than 1%.
pub fn damped_iteration(
    init: DenseTrajectory,
    mut map: impl FnMut(&DenseTrajectory) -> Result<DenseTrajectory>,
    tolerance: f64,
    max_iterations: usize,
    damping: f64,
) -> Result<FixedPointOutcome> {
    let mut theta = damping;
    let mut u = init;
    let mut tu = map(&u)?;
    let mut steps = tu.step_distances(&u)?;
    let mut r = steps.iter().copied().fold(0.0, f64::max);
    let mut history = vec![r];
    let mut damping_history = vec![theta];
    let mut evaluations = 1;
    let mut window_start = 0;
    while r >= tolerance && evaluations < max_iterations {
        let candidate = u.blend(&tu, theta)?;
        let tc = map(&candidate)?;
        evaluations += 1;
        let cs = tc.step_distances(&candidate)?;
        let rc = cs.iter().copied().fold(0.0, f64::max);
        if rc <= r {
            u = candidate;
            tu = tc;
            steps = cs;
            r = rc;
            history.push(r);
            let n = history.len();
            if n - window_start > 5 && history[n - 1] > 0.99 * history[n - 6] {
                theta = (theta / 2.0).max(1.0 / 1024.0);
                window_start = n - 1;
            }
        } else {
            theta = (theta / 2.0).max(1.0 / 1024.0);
            window_start = history.len() - 1;
        }
        damping_history.push(theta);
    }
    Ok(FixedPointOutcome {
        iterate: u,
        step_residuals: steps,
        residual: r,
        converged: r < tolerance,
        evaluations,
        history,
        damping_history,
    })
}

/// Fixed point of `𝒯` at width `eps`, starting from `init` (or the frozen
/// initial occupancy iterate).
pub fn fixed_point(
    problem: &NonlocalProblem,
    eps: f64,
    config: &FixedPointConfig,
    init: Option<DenseTrajectory>,
) -> Result<FixedPointOutcome> {
    config.validate()?;
    Mollifier::new(eps)?;
    let tg = problem.time_grid(config.cfl, config.step_budget)?;
    let init = match init {
        Some(u) if u.time_grid == tg => u,
        Some(_) => return Err(Error::Precondition("warm start uses a different time grid".into())),
        None => initial_iterate(problem, tg, config.cfl, config.step_budget)?,
    };
    damped_iteration(
        init,
        |u| picard_map(problem, eps, u, config.cfl, config.step_budget),
        config.tolerance,
        config.max_iterations,
        config.damping,
    )
}

#[derive(Clone, Debug)]
pub struct LevelReport {
    pub eps: f64,
    pub residual: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub history: Vec<f64>,
    pub final_damping: f64,
}

/// Per-snapshot diagnostics of a weak solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnapshotDiagnostics {
    pub t: f64,
    pub residual: f64,
    pub sandwich_violation_measure: f64,
    pub classical: bool,
    pub min_cbar: f64,
    pub lipschitz: f64,
    pub gradient_margin: f64,
}

/// The pair `(u, χ)` with its speed `c̄` and diagnostics.
#[derive(Clone, Debug)]
pub struct WeakSolution {
    pub u: DenseTrajectory,
    /// `c̄` at every step, the last one included.
    pub velocities: Vec<ScalarField>,
    pub eps: f64,
    pub snapshot_steps: Vec<usize>,
    pub occupancy: Vec<OccupancyField>,
    pub levels: Vec<LevelReport>,
    pub diagnostics: Vec<SnapshotDiagnostics>,
    pub cfl: f64,
}

impl WeakSolution {
    /// Wraps a trajectory computed with known speeds; `χ = ψ_ε(u)`.
    pub fn from_parts(u: DenseTrajectory, velocities: Vec<ScalarField>, eps: f64, snapshot_steps: Vec<usize>, cfl: f64) -> Result<Self> {
        if velocities.len() < u.time_grid.steps {
            return Err(Error::Precondition("velocity record shorter than the trajectory".into()));
        }
        let m = Mollifier::new(eps)?;
        let occupancy = snapshot_steps.iter().map(|&k| m.occupancy(&u.states[k])).collect();
        let mut w = Self { u, velocities, eps, snapshot_steps, occupancy, levels: Vec::new(), diagnostics: Vec::new(), cfl };
        w.diagnostics = w.compute_diagnostics(&[])?;
        Ok(w)
    }

    pub fn grid(&self) -> &GridSpec {
        self.u.states[0].grid()
    }

    pub fn u0(&self) -> &ScalarField {
        &self.u.states[0]
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshot_steps.iter().map(|&k| self.u.time_grid.time(k)).collect()
    }

    /// Snapshots of `u` with `χ` attached.
    pub fn trajectory(&self) -> Result<Trajectory> {
        self.u.select(&self.snapshot_steps)?.with_occupancy(self.occupancy.clone())
    }

    pub fn converged(&self) -> bool {
        self.levels.iter().all(|l| l.converged)
    }

    pub fn final_residual(&self) -> f64 {
        self.levels.last().map_or(0.0, |l| l.residual)
    }

    pub fn sandwich_band(&self) -> f64 {
        self.eps + 2.0 * self.grid().h()
    }

    fn compute_diagnostics(&self, step_residuals: &[f64]) -> Result<Vec<SnapshotDiagnostics>> {
        let traj = self.u.select(&self.snapshot_steps)?;
        let sandwich = sandwich_check(&traj, &self.occupancy, self.sandwich_band())?;
        let classical = classicality_check(&traj);
        Ok(self
            .snapshot_steps
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let u = &self.u.states[k];
                SnapshotDiagnostics {
                    t: self.u.time_grid.time(k),
                    residual: step_residuals.get(k).copied().unwrap_or(0.0),
                    sandwich_violation_measure: sandwich[i],
                    classical: classical[i],
                    min_cbar: self.velocities.get(k).map_or(f64::NAN, ScalarField::min),
                    lipschitz: lipschitz_estimate(u),
                    gradient_margin: gradient_margin(u),
                }
            })
            .collect())
    }
}

/// Runs the fixed point along the `ε` schedule with warm starts and extracts
/// `χ = ψ_ε(u)` at the last width.
pub fn continuation(problem: &NonlocalProblem, config: &FixedPointConfig) -> Result<WeakSolution> {
    config.validate()?;
    let mut levels = Vec::new();
    let mut current: Option<FixedPointOutcome> = None;
    for &eps in &config.eps_schedule {
        let init = current.take().map(|o| o.iterate);
        let out = fixed_point(problem, eps, config, init)?;
        levels.push(LevelReport {
            eps,
            residual: out.residual,
            converged: out.converged,
            evaluations: out.evaluations,
            history: out.history.clone(),
            final_damping: *out.damping_history.last().unwrap_or(&config.damping),
        });
        current = Some(out);
    }
    let out = current.expect("schedule is non-empty");
    let eps = *config.eps_schedule.last().expect("schedule is non-empty");
    let velocities = velocity_record(problem, eps, &out.iterate)?;
    let steps = problem.snapshot_steps(&out.iterate.time_grid);
    let m = Mollifier::new(eps)?;
    let occupancy = steps.iter().map(|&k| m.occupancy(&out.iterate.states[k])).collect();
    let mut w = WeakSolution {
        u: out.iterate,
        velocities,
        eps,
        snapshot_steps: steps,
        occupancy,
        levels,
        diagnostics: Vec::new(),
        cfl: config.cfl,
    };
    w.diagnostics = w.compute_diagnostics(&out.step_residuals)?;
    Ok(w)
}

/// Measure of nodes where `χ < 1` although `u > band`, or `χ > 0` although
/// `u < −band`, per snapshot.
pub fn sandwich_check(u: &Trajectory, chi: &[OccupancyField], band: f64) -> Result<Vec<f64>> {
    if u.len() != chi.len() {
        return Err(Error::Precondition(format!("{} snapshots but {} occupancies", u.len(), chi.len())));
    }
    u.fields()
        .iter()
        .zip(chi)
        .map(|(f, c)| {
            f.check_same_grid(c.as_field())?;
            let bad = f
                .values()
                .iter()
                .zip(c.values())
                .filter(|(&v, &x)| (x < 1.0 && v > band) || (x > 0.0 && v < -band))
                .count();
            Ok(bad as f64 * f.grid().cell_measure())
        })
        .collect()
}

/// Whether `{|u| ≤ 2h}` is no larger than `8h` times the front perimeter,
/// i.e. the zero set is thin at grid resolution.
pub fn is_classical(u: &ScalarField) -> bool {
    let h = u.grid().h();
    sublevel_measure(&u.map(f64::abs), ..=2.0 * h) <= 8.0 * h * front_perimeter(u)
}

pub fn classicality_check(u: &Trajectory) -> Vec<bool> {
    u.fields().iter().map(is_classical).collect()
}
