//! Experiment drivers behind the `nleik` binary: `simulate`, `counterexample`,
//! `verify` and `convergence`.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    band_growth, gradient_margin, inclusion_test, BandGrowthReport, ExperimentConstants,
};
use crate::config::{ConvergenceConfig, LoadedConfig, ALL_SUITES};
use crate::counterexample::{
    nonuniqueness_gap, report_times, solve_y_gamma, standard_grid, verify_weak_solution, GammaControl, HORIZON,
    SPEED_BOUND,
};
use crate::eikonal::{
    cfl_limit, oleinik_lax_inf, oleinik_lax_sup, solve, step_with, EikonalProblem, UniformSpeed, Upwinding,
    DEFAULT_CFL,
};
use crate::error::{Error, Result};
use crate::grid::{lipschitz_estimate, write_snapshot, GridSpec, ScalarField};
use crate::velocity::{convolve, ExternalVelocity, Kernel, KernelShape, OccupancyField};
use crate::weak_engine::{continuation, FixedPointConfig, NonlocalProblem, WeakSolution, SELECTION_NOTE};

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Pass = 0,
    PropertyFail = 1,
    Config = 2,
    NonConvergence = 3,
}

impl Status {
    pub fn code(self) -> i32 {
        self as i32
    }

    /// Status for an error escaping a driver.
    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Resource { .. } | Error::UnsupportedDimension(_) | Error::Parse(_) => Self::Config,
            _ => Self::PropertyFail,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub status: Status,
    pub output: Option<PathBuf>,
    /// Human-readable summary, one line per entry.
    pub lines: Vec<String>,
}

pub struct RunContext {
    pub config: LoadedConfig,
    pub seed: u64,
    pub output_root: Option<PathBuf>,
}

impl RunContext {
    pub fn new(config: LoadedConfig, cli_seed: Option<u64>, output_root: Option<PathBuf>) -> Self {
        let seed = config.seed(cli_seed);
        Self { config, seed, output_root }
    }

    fn output_dir(&self) -> Result<PathBuf> {
        let dir = self.config.output_dir(self.output_root.as_deref());
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn manifest(&self, constants: Vec<(&str, String)>) -> Manifest {
        Manifest {
            hash: self.config.hash(self.seed),
            seed: self.seed,
            constants: constants.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

/// Comment block opening every output file.
#[derive(Clone, Debug)]
struct Manifest {
    hash: String,
    seed: u64,
    constants: Vec<(String, String)>,
}

impl Manifest {
    fn lines(&self) -> Vec<String> {
        let mut out = vec![format!("# config_sha256={} seed={}", self.hash, self.seed)];
        if !self.constants.is_empty() {
            let kv: Vec<String> = self.constants.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out.push(format!("# {}", kv.join(" ")));
        }
        out.push(format!("# selection: {SELECTION_NOTE}"));
        out
    }
}

fn write_csv<R, I>(path: &Path, manifest: &Manifest, columns: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator,
    I::Item: Display,
{
    let mut text = manifest.lines().join("\n");
    text.push('\n');
    text.push_str(&columns.join(","));
    text.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(|c| c.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Snapshot file readable by `read_snapshot`, manifest after its header line.
fn write_field(path: &Path, manifest: &Manifest, t: f64, field: &ScalarField) -> Result<()> {
    let mut buf = Vec::new();
    write_snapshot(&mut buf, t, field)?;
    let text = String::from_utf8(buf).expect("snapshot output is UTF-8");
    let (head, body) = text.split_once('\n').unwrap_or((&text, ""));
    let mut out = String::with_capacity(text.len() + 256);
    out.push_str(head);
    out.push('\n');
    for line in manifest.lines() {
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str(body);
    fs::write(path, out)?;
    Ok(())
}

fn fmt_opt(v: f64) -> String {
    if v.is_finite() && v != 0.0 && !(1e-4..1e6).contains(&v.abs()) {
        format!("{v:e}")
    } else if v.is_finite() {
        v.to_string()
    } else {
        "undefined".into()
    }
}

/// Measured constants of a weak solution.
pub fn measure_constants(
    problem: &NonlocalProblem,
    w: &WeakSolution,
    rho: Option<f64>,
    delta: Option<f64>,
    with_band: bool,
) -> Result<(ExperimentConstants, Option<BandGrowthReport>)> {
    let traj = w.trajectory()?;
    let kb = problem.kernel.bounds();
    let eb = problem.c1.bounds();
    let m = kb.l1 + eb.sup;
    let l = w.velocities.iter().map(lipschitz_estimate).fold(0.0, f64::max);
    let eta0 = gradient_margin(w.u0());
    let eta_hat = traj.fields().iter().map(gradient_margin).fold(f64::INFINITY, f64::min);
    let min_cbar = w.velocities.iter().map(ScalarField::min).fold(f64::INFINITY, f64::min);
    let rho = rho.unwrap_or(eta_hat / 4.0);
    let band = if with_band && eta_hat > 0.0 && rho > 0.0 && rho < eta_hat / 2.0 {
        Some(band_growth(&traj, rho, m, l)?)
    } else {
        None
    };
    let constants = ExperimentConstants {
        m0: kb.l1,
        m1: eb.sup,
        l0: kb.grad_l1,
        l1: eb.lipschitz,
        m,
        l,
        eta0,
        eta_hat_t: eta_hat,
        c_hat: band.as_ref().map_or(f64::NAN, |b| b.c_hat),
        k_hat: band.as_ref().map_or(f64::NAN, |b| b.k_hat),
        delta: delta.unwrap_or(min_cbar),
        rho,
    };
    Ok((constants, band))
}

fn constant_pairs(c: &ExperimentConstants) -> Vec<(&'static str, String)> {
    ExperimentConstants::COLUMNS.iter().copied().zip(c.values().iter().map(|&v| fmt_opt(v))).collect()
}

/// Runs the fixed-point construction and writes `u`, `χ`, diagnostics and bounds.
pub fn run_simulate(ctx: &RunContext) -> Result<RunOutcome> {
    let cfg = &ctx.config;
    let problem = cfg.problem()?;
    let grid = *problem.grid();
    let engine = cfg.engine(grid.h())?;
    let diag = &cfg.config.diagnostics;
    let w = continuation(&problem, &engine)?;
    let (constants, band) = measure_constants(&problem, &w, diag.rho, diag.delta, diag.band_growth)?;

    let dir = ctx.output_dir()?;
    let mut pairs = constant_pairs(&constants);
    pairs.push(("eps", w.eps.to_string()));
    pairs.push(("cfl", w.cfl.to_string()));
    pairs.push(("dt", w.u.time_grid.dt().to_string()));
    let manifest = ctx.manifest(pairs);

    for (i, &k) in w.snapshot_steps.iter().enumerate() {
        let t = w.u.time_grid.time(k);
        write_field(&dir.join(format!("u_{i:03}.csv")), &manifest, t, &w.u.states[k])?;
        write_field(&dir.join(format!("chi_{i:03}.csv")), &manifest, t, w.occupancy[i].as_field())?;
    }
    write_csv(
        &dir.join("diagnostics.csv"),
        &manifest,
        &["t", "residual", "sandwich_violation_measure", "classical_flag", "min_cbar", "lipschitz", "gradient_margin"],
        w.diagnostics.iter().map(|d| {
            [
                d.t.to_string(),
                d.residual.to_string(),
                d.sandwich_violation_measure.to_string(),
                d.classical.to_string(),
                d.min_cbar.to_string(),
                d.lipschitz.to_string(),
                d.gradient_margin.to_string(),
            ]
        }),
    )?;
    write_csv(&dir.join("bounds.csv"), &manifest, &ExperimentConstants::COLUMNS, [constants.values().map(fmt_opt)])?;
    write_csv(
        &dir.join("levels.csv"),
        &manifest,
        &["eps", "residual", "converged", "evaluations", "final_damping"],
        w.levels.iter().map(|l| {
            [l.eps.to_string(), l.residual.to_string(), l.converged.to_string(), l.evaluations.to_string(), l.final_damping.to_string()]
        }),
    )?;
    write_csv(
        &dir.join("residual_history.csv"),
        &manifest,
        &["eps", "iteration", "residual"],
        w.levels.iter().flat_map(|l| {
            l.history.iter().enumerate().map(move |(j, r)| [l.eps.to_string(), (j + 1).to_string(), r.to_string()])
        }),
    )?;
    if let Some(b) = &band {
        write_csv(
            &dir.join("band_growth.csv"),
            &manifest,
            &["t", "measure", "bound", "flagged"],
            (0..b.times.len()).map(|i| {
                [b.times[i].to_string(), b.measures[i].to_string(), b.bounds[i].to_string(), b.flagged[i].to_string()]
            }),
        )?;
    }

    let mut lines = vec![format!(
        "simulate: {} snapshots, eps {}, residual {:.3e} (tolerance {:.3e})",
        w.snapshot_steps.len(),
        w.eps,
        w.final_residual(),
        engine.tolerance
    )];
    let violations: f64 = w.diagnostics.iter().map(|d| d.sandwich_violation_measure).sum();
    let classical = w.diagnostics.iter().all(|d| d.classical);
    lines.push(format!("sandwich violation measure {violations}, classical at every snapshot: {classical}"));
    if let Some(d) = diag.delta {
        let min = w.velocities.iter().map(ScalarField::min).fold(f64::INFINITY, f64::min);
        if min < d {
            lines.push(format!("warning: min c̄ = {min} is below the declared delta {d}"));
        }
    }
    if let Some(e) = diag.eta0 {
        if constants.eta0 < e {
            lines.push(format!("warning: measured eta0 = {} is below the declared {e}", constants.eta0));
        }
    }
    if let Some(b) = &band {
        if !b.holds() {
            lines.push("warning: band growth exceeded its bound".into());
        }
    }
    let status = if !w.converged() {
        lines.push("fixed point not reached; best iterate written".into());
        Status::NonConvergence
    } else if violations > 0.0 {
        Status::PropertyFail
    } else {
        Status::Pass
    };
    Ok(RunOutcome { status, output: Some(dir), lines })
}

fn is_constant(g: &GammaControl, v: f64) -> bool {
    g.knots().iter().all(|&(_, x)| x == v)
}

/// Verifies every configured control against the closed forms and tabulates
/// pairwise gaps.
pub fn run_counterexample(ctx: &RunContext) -> Result<RunOutcome> {
    let cc = &ctx.config.config.counterexample;
    if cc.controls.is_empty() {
        return Err(Error::Config("no gamma controls given".into()));
    }
    if !(cc.cfl > 0.0 && cc.cfl <= crate::eikonal::MAX_CFL) {
        return Err(Error::Config(format!("cfl must lie in (0, {}], got {}", crate::eikonal::MAX_CFL, cc.cfl)));
    }
    let gammas = cc.gammas().map_err(|e| Error::Config(e.to_string()))?;
    let grid = standard_grid(cc.h).map_err(|e| Error::Config(e.to_string()))?;
    let h = grid.h();
    let mut solutions = Vec::new();
    let mut reports = Vec::new();
    for gamma in &gammas {
        let sol = solve_y_gamma(gamma, cc.mesh)?;
        reports.push(verify_weak_solution(&sol, &grid, cc.cfl)?);
        solutions.push(sol);
    }
    let eta_hat = reports
        .iter()
        .flat_map(|r| r.rows.iter().map(|row| gradient_margin(&r.numerical.states[r.numerical.time_grid.nearest_step(row.t)])))
        .fold(f64::INFINITY, f64::min);
    let dir = ctx.output_dir()?;
    let manifest = ctx.manifest(vec![
        ("M", SPEED_BOUND.to_string()),
        ("L", "0".into()),
        ("K_hat", "undefined".into()),
        ("eta_hat_T", fmt_opt(eta_hat)),
        ("h", h.to_string()),
        ("cfl", cc.cfl.to_string()),
        ("T", HORIZON.to_string()),
    ]);

    let mut summary = Vec::new();
    let mut lines = Vec::new();
    let mut all_passed = true;
    for (i, ((gamma, sol), rep)) in gammas.iter().zip(&solutions).zip(&reports).enumerate() {
        let sub = dir.join(format!("gamma_{i}"));
        fs::create_dir_all(&sub)?;
        let mut m = manifest.clone();
        m.constants.push(("gamma".into(), gamma.to_string()));
        write_csv(
            &sub.join("counterexample_report.csv"),
            &m,
            &["t", "x1", "y_gamma", "front_measure", "zero_set_measure", "sup_error_numeric_vs_closed", "sandwich_violations"],
            rep.rows.iter().map(|r| {
                [r.t, r.x1, r.y_gamma, r.front_measure, r.zero_set_measure, r.sup_error, r.sandwich_violations]
            }),
        )?;
        let tg = rep.numerical.time_grid;
        let mut profile = Vec::new();
        for t in [0.0, 0.5, 1.0, 1.5, 2.0] {
            let k = tg.nearest_step(t);
            let tk = tg.time(k);
            for (j, &v) in rep.numerical.states[k].values().iter().enumerate() {
                let x = grid.coords(j)[0];
                profile.push([tk, x, v, sol.u(x, tk), sol.chi(x, tk)]);
            }
        }
        write_csv(&sub.join("profiles.csv"), &m, &["t", "x", "u_numeric", "u_closed", "chi_closed"], profile)?;
        let passed = rep.passed();
        all_passed &= passed;
        lines.push(format!(
            "{}: {} sup error {:.3e} ({:.2}h, bound 2h), sandwich violations {}, consistency {:.2}h",
            gamma,
            if passed { "PASS" } else { "FAIL" },
            rep.sup_error,
            rep.sup_error / h,
            rep.sandwich_violations,
            rep.consistency_error / h
        ));
        summary.push([
            i.to_string(),
            gamma.to_string(),
            rep.sup_error.to_string(),
            (rep.sup_error / h).to_string(),
            rep.sandwich_violations.to_string(),
            rep.consistency_error.to_string(),
            passed.to_string(),
        ]);
    }
    write_csv(
        &dir.join("verification.csv"),
        &manifest,
        &["index", "gamma", "sup_error", "sup_error_over_h", "sandwich_violations", "consistency_error", "passed"],
        summary,
    )?;

    let mut gaps = Vec::new();
    let mut key_gap = None;
    for a in 0..solutions.len() {
        for b in a + 1..solutions.len() {
            for t in report_times() {
                let gap = nonuniqueness_gap(&solutions[a], &solutions[b], &grid, t)?;
                gaps.push([a.to_string(), b.to_string(), t.to_string(), gap.to_string()]);
            }
            let (ga, gb) = (&gammas[a], &gammas[b]);
            let pair = (is_constant(ga, 0.0) && is_constant(gb, 1.0)) || (is_constant(ga, 1.0) && is_constant(gb, 0.0));
            if pair && key_gap.is_none() {
                key_gap = Some(nonuniqueness_gap(&solutions[a], &solutions[b], &grid, HORIZON)?);
            }
        }
    }
    write_csv(&dir.join("gaps.csv"), &manifest, &["gamma_a", "gamma_b", "t", "gap"], gaps)?;
    if let Some(g) = key_gap {
        lines.push(format!("gap(gamma=0, gamma=1, t=2) = {g:.6} (closed form 4/3)"));
    }
    let status = if all_passed && key_gap.map_or(true, |g| g >= 1.0) { Status::Pass } else { Status::PropertyFail };
    Ok(RunOutcome { status, output: Some(dir), lines })
}

/// Outcome of one verification suite.
#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: String,
    /// `module::op` the suite exercises.
    pub target: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Random ordered pairs `u ≤ v` with admissible speeds and steps; counts
/// pairs whose order the step breaks.
pub fn monotone_suite(cases: usize, seed: u64, upwinding: Upwinding) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut broken = 0;
    for _ in 0..cases {
        let dim = rng.gen_range(1..=2);
        let n = rng.gen_range(4..=24);
        let h = rng.gen_range(0.01..0.2);
        let grid = GridSpec::cube(dim, 0.0, n as f64 * h, h)?;
        let nodes = grid.node_count();
        let u: Vec<f64> = (0..nodes).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let v: Vec<f64> = u
            .iter()
            .map(|&x| if rng.gen_bool(0.3) { x } else { (x + rng.gen_range(0.0..0.5)).min(1.0) })
            .collect();
        let bound = rng.gen_range(0.1..5.0);
        let c: Vec<f64> = (0..nodes).map(|_| rng.gen_range(-bound..=bound)).collect();
        let c = ScalarField::new(grid, c)?;
        let dt = rng.gen_range(0.05..=0.9) * cfl_limit(&c);
        let su = step_with(&ScalarField::new(grid, u)?, &c, dt, upwinding)?;
        let sv = step_with(&ScalarField::new(grid, v)?, &c, dt, upwinding)?;
        if su.values().iter().zip(sv.values()).any(|(a, b)| a > b) {
            broken += 1;
        }
    }
    Ok(SuiteResult {
        name: "monotone".into(),
        target: "eikonal::step",
        passed: broken == 0,
        detail: format!("{broken}/{cases} pairs lost their order"),
    })
}

/// `−1 + 2(1 − x²/4)₊²`, the smooth bump used by the oracle checks.
pub fn smooth_bump(x: f64) -> f64 {
    let s = (1.0 - x * x / 4.0).max(0.0);
    -1.0 + 2.0 * s * s
}

/// Sup error of the scheme for `u_t = c|Du|`, `c = ±speed`, against the
/// inf/sup formulas at time `horizon`, on `[−3, 3]`.
pub fn oracle_error(h: f64, speed: f64, horizon: f64, cfl: f64, upwinding: Upwinding) -> Result<f64> {
    let grid = GridSpec::cube(1, -3.0, 3.0, h)?;
    let u0 = ScalarField::from_fn(grid, |x| smooth_bump(x[0]));
    let exact = if speed >= 0.0 {
        oleinik_lax_sup(&u0, speed * horizon)?
    } else {
        oleinik_lax_inf(&u0, -speed * horizon)?
    };
    let mut problem = EikonalProblem::new(u0, horizon).with_cfl(cfl).with_snapshots(vec![horizon]);
    problem.upwinding = upwinding;
    let traj = solve(&problem, &UniformSpeed::new(grid, speed.abs(), |_| speed))?;
    let last = traj.fields().last().expect("one snapshot requested");
    last.sup_distance(&exact)
}

fn oracle_suite(upwinding: Upwinding) -> Result<SuiteResult> {
    let h = 0.01;
    let mut worst: f64 = 0.0;
    for c in [1.0, -1.0] {
        worst = worst.max(oracle_error(h, c, 0.5, DEFAULT_CFL, upwinding)?);
    }
    Ok(SuiteResult {
        name: "oracle".into(),
        target: "eikonal::solve",
        passed: worst <= 2.0 * h,
        detail: format!("sup error {worst:.3e} against bound {:.3e}", 2.0 * h),
    })
}

/// Scatter convolution against a direct sum of the analytic kernel profile.
fn convolution_suite(cases: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    let cases = cases.clamp(1, 40);
    for _ in 0..cases {
        let dim = rng.gen_range(1..=2);
        let h = 0.1;
        let n = if dim == 1 { 40 } else { 16 };
        let grid = GridSpec::cube(dim, 0.0, n as f64 * h, h)?;
        let a = rng.gen_range(0.15..0.6);
        let indicator = rng.gen_bool(0.5);
        let (shape, profile): (KernelShape, Box<dyn Fn(f64) -> f64>) = if indicator {
            (KernelShape::Indicator { radius: a }, Box::new(move |r| if r <= a { 1.0 } else { 0.0 }))
        } else {
            (KernelShape::Triangle { a }, Box::new(move |r| (1.0 - r / a).max(0.0)))
        };
        let kernel = Kernel::builtin(shape, dim, h)?;
        let chi: Vec<f64> = (0..grid.node_count()).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let chi = OccupancyField::new(ScalarField::new(grid, chi)?)?;
        let fast = convolve(&kernel, &chi, 0.0)?;
        for i in 0..grid.node_count() {
            let xi = grid.coords(i);
            let mut direct = 0.0;
            for (j, &c) in chi.values().iter().enumerate() {
                let xj = grid.coords(j);
                let r = ((xi[0] - xj[0]).powi(2) + (xi[1] - xj[1]).powi(2)).sqrt();
                direct += grid.cell_measure() * profile(r) * c;
            }
            worst = worst.max((direct - fast.values()[i]).abs());
        }
    }
    Ok(SuiteResult {
        name: "convolution".into(),
        target: "velocity::convolve",
        passed: worst <= 1e-10,
        detail: format!("largest difference from the direct sum {worst:.3e} over {cases} fields"),
    })
}

/// Inclusion of `{u ≥ 0}` for nested data under a nonnegative kernel.
pub fn inclusion_run(h: f64) -> Result<Vec<bool>> {
    let grid = GridSpec::cube(1, -3.0, 3.0, h)?;
    let kernel = Kernel::builtin(KernelShape::Triangle { a: 1.0 }, 1, h)?;
    let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.05).collect();
    let config = FixedPointConfig::for_grid(h);
    let mut trajs = Vec::new();
    for r in [0.5, 1.0] {
        let u0 = ScalarField::from_fn(grid, |x| (r - x[0].abs()).clamp(-1.0, 1.0));
        let p = NonlocalProblem::new(kernel.clone(), ExternalVelocity::Constant(0.0), u0, 0.5).with_snapshots(times.clone());
        trajs.push(continuation(&p, &config)?.trajectory()?);
    }
    inclusion_test(&trajs[0], &trajs[1])
}

fn inclusion_suite() -> Result<SuiteResult> {
    let flags = inclusion_run(0.01)?;
    let held = flags.iter().filter(|&&f| f).count();
    Ok(SuiteResult {
        name: "inclusion".into(),
        target: "analysis::inclusion_test",
        passed: held == flags.len(),
        detail: format!("inclusion held at {held}/{} snapshots", flags.len()),
    })
}

/// One-dimensional expanding run: zero-mean kernel of mass 1, `c₁ ≡ 1.1`.
pub fn expanding_problem(dim: usize, h: f64) -> Result<NonlocalProblem> {
    let half = 3.2;
    let grid = GridSpec::cube(dim, -half, half, h)?;
    let kernel = Kernel::builtin(KernelShape::ZeroMeanWavelet { a: 0.1, mass: 1.0 }, dim, h)?;
    let u0 = ScalarField::from_fn(grid, |x| {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        (1.0 - r).clamp(-1.0, 1.0)
    });
    let times = (0..=10).map(|i| i as f64 * 0.05).collect();
    Ok(NonlocalProblem::new(kernel, ExternalVelocity::Constant(1.1), u0, 0.5).with_snapshots(times))
}

fn expanding_suites(want_band: bool, want_margin: bool) -> Result<Vec<SuiteResult>> {
    let problem = expanding_problem(1, 0.01)?;
    let w = continuation(&problem, &FixedPointConfig::for_grid(0.01))?;
    let (constants, band) = measure_constants(&problem, &w, None, None, want_band)?;
    let mut out = Vec::new();
    if want_band {
        let (passed, detail) = match &band {
            Some(b) => (
                b.holds() && w.converged(),
                format!("K_hat {:.3}, flagged at {} snapshots", b.k_hat, b.flagged.iter().filter(|&&f| f).count()),
            ),
            None => (false, "gradient margin vanished, band growth undefined".into()),
        };
        out.push(SuiteResult { name: "band_growth".into(), target: "analysis::band_growth", passed, detail });
    }
    if want_margin {
        let worst = w.diagnostics.iter().map(|d| d.gradient_margin).fold(f64::INFINITY, f64::min);
        out.push(SuiteResult {
            name: "gradient_margin".into(),
            target: "analysis::gradient_margin",
            passed: worst >= 0.5 * constants.eta0,
            detail: format!("smallest margin {worst:.4} against 0.5 x {:.4}", constants.eta0),
        });
    }
    Ok(out)
}

/// Runs the selected suites.
pub fn run_battery(suites: &[String], cases: usize, seed: u64, upwinding: Upwinding) -> Result<Vec<SuiteResult>> {
    if suites.is_empty() {
        return Err(Error::Config("empty suite selection".into()));
    }
    if let Some(bad) = suites.iter().find(|s| !ALL_SUITES.contains(&s.as_str())) {
        return Err(Error::Config(format!("unknown suite `{bad}`; known: {}", ALL_SUITES.join(", "))));
    }
    let want = |name: &str| suites.iter().any(|s| s == name);
    let mut out = Vec::new();
    if want("monotone") {
        out.push(monotone_suite(cases, seed, upwinding)?);
    }
    if want("oracle") {
        out.push(oracle_suite(upwinding)?);
    }
    if want("convolution") {
        out.push(convolution_suite(cases, seed)?);
    }
    if want("inclusion") {
        out.push(inclusion_suite()?);
    }
    if want("band_growth") || want("gradient_margin") {
        out.extend(expanding_suites(want("band_growth"), want("gradient_margin"))?);
    }
    Ok(out)
}

pub fn run_verify(ctx: &RunContext) -> Result<RunOutcome> {
    let vc = &ctx.config.config.verify;
    let upwinding = match vc.fault.as_deref() {
        None => Upwinding::Godunov,
        Some("flip-upwind") => Upwinding::Flipped,
        Some(other) => return Err(Error::Config(format!("unknown fault `{other}`"))),
    };
    let results = run_battery(&vc.suites, vc.cases, ctx.seed, upwinding)?;
    let dir = ctx.output_dir()?;
    let mut constants = vec![("cases", vc.cases.to_string())];
    if let Some(f) = &vc.fault {
        constants.push(("fault", f.clone()));
    }
    let manifest = ctx.manifest(constants);
    write_csv(
        &dir.join("verify.csv"),
        &manifest,
        &["suite", "target", "passed", "detail"],
        results.iter().map(|r| [r.name.clone(), r.target.to_string(), r.passed.to_string(), format!("\"{}\"", r.detail)]),
    )?;
    let lines = results
        .iter()
        .map(|r| format!("{} {} [{}]: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.target, r.detail))
        .collect();
    let status = if results.iter().all(|r| r.passed) { Status::Pass } else { Status::PropertyFail };
    Ok(RunOutcome { status, output: Some(dir), lines })
}

/// Largest `| |p| − radius |` over zero crossings of `u` interpolated along grid edges.
pub fn front_radius_error(u: &ScalarField, radius: f64) -> f64 {
    let g = u.grid();
    let v = u.values();
    let mut worst: f64 = 0.0;
    for i in 0..g.node_count() {
        for axis in 0..g.dim() {
            let Some(j) = g.neighbour(i, axis, 1) else { continue };
            let (a, b) = (v[i], v[j]);
            if (a >= 0.0) == (b >= 0.0) {
                continue;
            }
            let s = a / (a - b);
            let (p, q) = (g.coords(i), g.coords(j));
            let x = [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])];
            worst = worst.max(((x[0] * x[0] + x[1] * x[1]).sqrt() - radius).abs());
        }
    }
    worst
}

/// Error of one refinement level.
pub fn convergence_error(experiment: &ConvergenceConfig, h: f64) -> Result<f64> {
    match experiment {
        ConvergenceConfig::Counterexample { gamma, cfl } => {
            let gamma = GammaControl::new(gamma.clone()).map_err(|e| Error::Config(e.to_string()))?;
            let sol = solve_y_gamma(&gamma, crate::counterexample::DEFAULT_MESH)?;
            Ok(verify_weak_solution(&sol, &standard_grid(h)?, *cfl)?.sup_error)
        }
        ConvergenceConfig::Circle { radius, speed, horizon, cfl } => {
            if !(*radius > 0.0 && *speed >= 0.0 && *horizon > 0.0) {
                return Err(Error::Config("circle experiment needs radius > 0, speed >= 0, horizon > 0".into()));
            }
            let half = ((radius + 1.0 + speed * horizon + 0.5) / h).ceil() * h;
            let grid = GridSpec::cube(2, -half, half, h)?;
            let u0 = ScalarField::from_fn(grid, |x| (radius - (x[0] * x[0] + x[1] * x[1]).sqrt()).clamp(-1.0, 1.0));
            let times: Vec<f64> = (1..=5).map(|i| horizon * i as f64 / 5.0).collect();
            let problem = EikonalProblem::new(u0, *horizon).with_cfl(*cfl).with_snapshots(times);
            let c = *speed;
            let traj = solve(&problem, &UniformSpeed::new(grid, c.max(1e-12), move |_| c))?;
            Ok(traj
                .times()
                .iter()
                .zip(traj.fields())
                .map(|(t, u)| front_radius_error(u, radius + c * t))
                .fold(0.0, f64::max))
        }
        ConvergenceConfig::Oracle { speed, horizon, cfl } => oracle_error(h, *speed, *horizon, *cfl, Upwinding::Godunov),
    }
}

/// Least-squares slope of `log e` against `log h`.
pub fn fitted_rate(hs: &[f64], errors: &[f64]) -> f64 {
    let n = hs.len() as f64;
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Parses `0.02,1/100,0.005`.
pub fn parse_grids(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|tok| {
            let tok = tok.trim();
            let v = match tok.split_once('/') {
                Some((a, b)) => {
                    let a: f64 = a.trim().parse().map_err(|_| Error::Config(format!("bad grid spacing `{tok}`")))?;
                    let b: f64 = b.trim().parse().map_err(|_| Error::Config(format!("bad grid spacing `{tok}`")))?;
                    a / b
                }
                None => tok.parse().map_err(|_| Error::Config(format!("bad grid spacing `{tok}`")))?,
            };
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Config(format!("grid spacing must be positive, got `{tok}`")))
            }
        })
        .collect()
}

pub fn run_convergence(ctx: &RunContext, grids: &[f64]) -> Result<RunOutcome> {
    let mut hs = grids.to_vec();
    hs.sort_by(|a, b| b.total_cmp(a));
    hs.dedup();
    if hs.len() < 3 {
        return Err(Error::Config(format!("convergence needs at least 3 distinct grid levels, got {}", hs.len())));
    }
    let experiment = &ctx.config.config.convergence;
    let errors = hs.iter().map(|&h| convergence_error(experiment, h)).collect::<Result<Vec<_>>>()?;
    let rate = fitted_rate(&hs, &errors);
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    let dir = ctx.output_dir()?;
    let name = match experiment {
        ConvergenceConfig::Counterexample { .. } => "counterexample",
        ConvergenceConfig::Circle { .. } => "circle",
        ConvergenceConfig::Oracle { .. } => "oracle",
    };
    let manifest = ctx.manifest(vec![("experiment", name.into()), ("rate", rate.to_string())]);
    write_csv(
        &dir.join("convergence.csv"),
        &manifest,
        &["h", "error", "error_over_h", "local_rate"],
        hs.iter().enumerate().map(|(i, &h)| {
            let local = if i == 0 { f64::NAN } else { (errors[i - 1] / errors[i]).ln() / (hs[i - 1] / h).ln() };
            [h, errors[i], errors[i] / h, local].map(fmt_opt)
        }),
    )?;
    let mut lines: Vec<String> = hs.iter().zip(&errors).map(|(h, e)| format!("h {h:.5}  error {e:.4e}  ({:.2}h)", e / h)).collect();
    lines.push(format!("{name}: fitted rate {rate:.3} (required 0.8)"));
    let status = if !monotone {
        lines.push("errors do not decrease monotonically".into());
        Status::PropertyFail
    } else if rate >= 0.8 {
        Status::Pass
    } else {
        Status::PropertyFail
    };
    Ok(RunOutcome { status, output: Some(dir), lines })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_parse() {
        assert_eq!(parse_grids("0.5, 1/4,0.125").unwrap(), vec![0.5, 0.25, 0.125]);
        assert!(parse_grids("0.1,-1").is_err());
        assert!(parse_grids("a").is_err());
    }

    #[test]
    fn rate_of_power_law() {
        let hs = [0.1, 0.05, 0.025];
        let es: Vec<f64> = hs.iter().map(|h: &f64| 3.0 * h.powf(1.5)).collect();
        assert!((fitted_rate(&hs, &es) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn exact_circle_has_small_radius_error() {
        let grid = GridSpec::cube(2, -2.0, 2.0, 0.05).unwrap();
        let u = ScalarField::from_fn(grid, |x| (1.0 - (x[0] * x[0] + x[1] * x[1]).sqrt()).clamp(-1.0, 1.0));
        assert!(front_radius_error(&u, 1.0) < 0.01);
    }

    #[test]
    fn monotone_suite_catches_flipped_upwinding() {
        assert!(monotone_suite(200, 3, Upwinding::Godunov).unwrap().passed);
        assert!(!monotone_suite(200, 3, Upwinding::Flipped).unwrap().passed);
    }

    #[test]
    fn empty_and_unknown_selections_are_config_errors() {
        assert!(matches!(run_battery(&[], 10, 1, Upwinding::Godunov), Err(Error::Config(_))));
        assert!(matches!(run_battery(&["nope".into()], 10, 1, Upwinding::Godunov), Err(Error::Config(_))));
    }
}
