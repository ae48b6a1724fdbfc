//! Grid-level diagnostics: gradient margins, semiconvexity, inclusion,
//! band growth, continuous dependence, perimeters and indicator distances.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{godunov_at, lipschitz_estimate, sublevel_measure, ScalarField, Trajectory};
use crate::weak_engine::{solve_frozen, DenseTrajectory, SnapshotDiagnostics, WeakSolution};

/// `min_x (|u(x)| + max(∇⁺u, ∇⁻u))`.
pub fn gradient_margin(u: &ScalarField) -> f64 {
    let g = u.grid();
    let v = u.values();
    (0..v.len())
        .map(|i| {
            let (p, m) = godunov_at(g, v, i);
            v[i].abs() + p.max(m)
        })
        .fold(f64::INFINITY, f64::min)
}

fn lattice_offsets(dim: usize, reach: isize) -> Vec<[isize; 2]> {
    let mut out = Vec::new();
    let r2 = reach * reach;
    for i in 0..=reach {
        let js: Vec<isize> = if dim == 2 { (-reach..=reach).collect() } else { vec![0] };
        for j in js {
            // One representative of each ±k pair.
            if (i == 0 && j <= 0) || i * i + j * j > r2 {
                continue;
            }
            out.push([i, j]);
        }
    }
    out
}

/// `max(0, −(u(x+k) + u(x−k) − 2u(x)) / |k|²)` over nodes and lattice offsets
/// `0 < |k| ≤ max_offset`.
pub fn semiconvexity_modulus(u: &ScalarField, max_offset: f64) -> Result<f64> {
    semiconvexity_modulus_where(u, max_offset, |_| true)
}

/// As [`semiconvexity_modulus`], restricted to centres where `keep(u(x))`.
pub fn semiconvexity_modulus_where(u: &ScalarField, max_offset: f64, keep: impl Fn(f64) -> bool) -> Result<f64> {
    let g = u.grid();
    let h = g.h();
    if !(max_offset >= h * (1.0 - 1e-12)) {
        return Err(Error::Precondition(format!("offset {max_offset} is below the grid spacing {h}")));
    }
    let reach = (max_offset / h + 1e-9).floor() as isize;
    let offsets = lattice_offsets(g.dim(), reach);
    let n = [g.counts()[0] as isize, if g.dim() == 2 { g.counts()[1] as isize } else { 1 }];
    let v = u.values();
    let mut worst: f64 = 0.0;
    for (idx, &c) in v.iter().enumerate() {
        if !keep(c) {
            continue;
        }
        let m = g.multi_index(idx);
        let (x, y) = (m[0] as isize, m[1] as isize);
        for &[kx, ky] in &offsets {
            let (px, py, qx, qy) = (x + kx, y + ky, x - kx, y - ky);
            if px < 0 || qx < 0 || px >= n[0] || qx >= n[0] || py < 0 || qy < 0 || py >= n[1] || qy >= n[1] {
                continue;
            }
            let second = v[(px * n[1] + py) as usize] + v[(qx * n[1] + qy) as usize] - 2.0 * c;
            let k2 = ((kx * kx + ky * ky) as f64) * h * h;
            worst = worst.max(-second / k2);
        }
    }
    Ok(worst)
}

/// Per snapshot: every node with `u_inner ≥ 0` has `u_outer > 0`.
pub fn inclusion_test(inner: &Trajectory, outer: &Trajectory) -> Result<Vec<bool>> {
    if inner.len() != outer.len() {
        return Err(Error::Precondition("trajectories have different snapshot counts".into()));
    }
    inner
        .fields()
        .iter()
        .zip(outer.fields())
        .map(|(a, b)| {
            a.check_same_grid(b)?;
            Ok(a.values().iter().zip(b.values()).all(|(&x, &y)| x < 0.0 || y > 0.0))
        })
        .collect()
}

/// 1D: number of sign changes of `1_{u ≥ 0}` between neighbours. 2D: length of
/// the marching-squares zero contour.
pub fn front_perimeter(u: &ScalarField) -> f64 {
    let g = u.grid();
    let v = u.values();
    if g.dim() == 1 {
        return v.windows(2).filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0)).count() as f64;
    }
    let (nx, ny) = (g.counts()[0], g.counts()[1]);
    let h = g.h();
    let at = |i: usize, j: usize| v[i * ny + j];
    let mut length = 0.0;
    for i in 0..nx.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            // Corners counter-clockwise from (i, j), in cell-local units.
            let c = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
            let pos = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
            let mut crossings = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (c[e], c[(e + 1) % 4]);
                if (a >= 0.0) != (b >= 0.0) {
                    let s = a / (a - b);
                    let (p, q) = (pos[e], pos[(e + 1) % 4]);
                    crossings.push((p.0 + s * (q.0 - p.0), p.1 + s * (q.1 - p.1)));
                }
            }
            let seg = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            match crossings.len() {
                2 => length += seg(crossings[0], crossings[1]) * h,
                4 => {
                    // Saddle: pair the crossings according to the centre value.
                    let centre = c.iter().sum::<f64>() / 4.0;
                    let inside0 = c[0] >= 0.0;
                    if (centre >= 0.0) == inside0 {
                        length += (seg(crossings[0], crossings[3]) + seg(crossings[1], crossings[2])) * h;
                    } else {
                        length += (seg(crossings[0], crossings[1]) + seg(crossings[2], crossings[3])) * h;
                    }
                }
                _ => {}
            }
        }
    }
    length
}

/// `hᴺ · #{x : (u₁(x) ≥ 0) ≠ (u₂(x) ≥ 0)}`.
pub fn indicator_l1_distance(u1: &ScalarField, u2: &ScalarField) -> Result<f64> {
    u1.check_same_grid(u2)?;
    let n = u1.values().iter().zip(u2.values()).filter(|(a, b)| (**a >= 0.0) != (**b >= 0.0)).count();
    Ok(n as f64 * u1.grid().cell_measure())
}

/// Band measure history with its exponential envelope.
#[derive(Clone, Debug, PartialEq)]
pub struct BandGrowthReport {
    pub times: Vec<f64>,
    /// `|{−ρ ≤ u < 0}|` per snapshot.
    pub measures: Vec<f64>,
    /// `1.5·e^{K̂t}·m(0⁺)` per snapshot.
    pub bounds: Vec<f64>,
    pub flagged: Vec<bool>,
    pub rho: f64,
    /// Margin of the initial data.
    pub eta0: f64,
    /// Smallest margin over the trajectory.
    pub eta_hat: f64,
    /// Semiconvexity modulus near the front, largest over the trajectory.
    pub c_hat: f64,
    pub k_hat: f64,
    /// Floored initial band measure.
    pub initial: f64,
    /// `(2Ĉ/η₀)·|B(0, R₀+1)|·ρ`, to be multiplied by `e^{K̂t}`.
    pub ball_constant: f64,
}

impl BandGrowthReport {
    pub fn holds(&self) -> bool {
        !self.flagged.iter().any(|&f| f)
    }
}

/// Radius of the smallest origin-centred ball outside which `u ≡ −1`.
pub fn support_radius(u: &ScalarField) -> f64 {
    let g = u.grid();
    u.values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > -1.0)
        .map(|(i, _)| {
            let x = g.coords(i);
            (x[0] * x[0] + x[1] * x[1]).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Tracks `m(t) = |{−ρ ≤ u(·,t) < 0}|` against `1.5·e^{K̂t}·m(0⁺)` with
/// `K̂ = L + 2Ĉ·M/η̂`, `m(0⁺) = max(m(0), 2ρ/η₀·perimeter(u₀))`.
///
/// `speed` is `M`, `lipschitz` is `L`. `Ĉ` is measured at offsets up to `2h`
/// on nodes with `|u| ≤ 2ρ`.
pub fn band_growth(traj: &Trajectory, rho: f64, speed: f64, lipschitz: f64) -> Result<BandGrowthReport> {
    let fields = traj.fields();
    let u0 = &fields[0];
    let g = *u0.grid();
    let eta0 = gradient_margin(u0);
    let eta_hat = fields.iter().map(gradient_margin).fold(f64::INFINITY, f64::min);
    if !(rho > 0.0 && rho < eta_hat / 2.0) {
        return Err(Error::Precondition(format!("band width {rho} must lie in (0, {}/2)", eta_hat)));
    }
    let mut c_hat: f64 = 0.0;
    for u in fields {
        c_hat = c_hat.max(semiconvexity_modulus_where(u, 2.0 * g.h(), |v| v.abs() <= 2.0 * rho)?);
    }
    let k_hat = lipschitz + 2.0 * c_hat * speed / eta_hat;
    let measures: Vec<f64> = fields.iter().map(|u| sublevel_measure(u, -rho..0.0)).collect();
    let initial = measures[0].max(2.0 * rho / eta0 * front_perimeter(u0));
    let bounds: Vec<f64> = traj.times().iter().map(|t| 1.5 * (k_hat * t).exp() * initial).collect();
    let flagged = measures.iter().zip(&bounds).map(|(m, b)| m > b).collect();
    let r1 = support_radius(u0) + 1.0;
    let ball = if g.dim() == 1 { 2.0 * r1 } else { PI * r1 * r1 };
    Ok(BandGrowthReport {
        times: traj.times().to_vec(),
        measures,
        bounds,
        flagged,
        rho,
        eta0,
        eta_hat,
        c_hat,
        k_hat,
        initial,
        ball_constant: 2.0 * c_hat / eta0 * ball * rho,
    })
}

/// One row of a continuous-dependence comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DependenceCheck {
    pub t: f64,
    pub gap: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Checks `|u_a − u_b|_∞(t) ≤ Lip(u₀)·e^{Λt}·Σ_{s<t} dt·|c_a − c_b|_∞·(1 + tol) + slack`
/// at the listed steps, `Λ` the largest measured Lipschitz constant of the speeds.
pub fn continuous_dependence_gap(
    a: &DenseTrajectory,
    va: &[ScalarField],
    b: &DenseTrajectory,
    vb: &[ScalarField],
    steps: &[usize],
    tol: f64,
    slack: f64,
) -> Result<Vec<DependenceCheck>> {
    if a.time_grid != b.time_grid {
        return Err(Error::Precondition("trajectories use different time grids".into()));
    }
    let tg = a.time_grid;
    if va.len() < tg.steps || vb.len() < tg.steps {
        return Err(Error::Precondition("velocity records are shorter than the trajectories".into()));
    }
    if a.states[0] != b.states[0] {
        return Err(Error::Precondition("trajectories start from different data".into()));
    }
    let lip0 = lipschitz_estimate(&a.states[0]);
    let lambda = va[..tg.steps].iter().chain(&vb[..tg.steps]).map(lipschitz_estimate).fold(0.0, f64::max);
    let mut integral = vec![0.0; tg.steps + 1];
    for k in 0..tg.steps {
        integral[k + 1] = integral[k] + tg.dt() * va[k].sup_distance(&vb[k])?;
    }
    steps
        .iter()
        .map(|&k| {
            if k > tg.steps {
                return Err(Error::Precondition(format!("step {k} beyond the horizon")));
            }
            let t = tg.time(k);
            let gap = a.states[k].sup_distance(&b.states[k])?;
            let bound = lip0 * (lambda * t).exp() * integral[k] * (1.0 + tol) + slack;
            Ok(DependenceCheck { t, gap, bound, holds: gap <= bound })
        })
        .collect()
}

/// Re-solves with the solution's own recorded `c̄` from `u₀` and returns the
/// largest sup-norm distance to its `u` over the snapshots.
pub fn l1_stability_residual(w: &WeakSolution) -> Result<f64> {
    let velocities = w.velocities[..w.u.time_grid.steps].to_vec();
    let again = solve_frozen(w.u0(), w.u.time_grid, velocities, w.cfl, usize::MAX)?;
    w.snapshot_steps
        .iter()
        .map(|&k| again.states[k].sup_distance(&w.u.states[k]))
        .try_fold(0.0, |m, d| d.map(|d| f64::max(m, d)))
}

/// Constants of an experiment, measured or declared.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExperimentConstants {
    pub m0: f64,
    pub m1: f64,
    pub l0: f64,
    pub l1: f64,
    pub m: f64,
    pub l: f64,
    pub eta0: f64,
    pub eta_hat_t: f64,
    pub c_hat: f64,
    pub k_hat: f64,
    pub delta: f64,
    pub rho: f64,
}

impl ExperimentConstants {
    pub const COLUMNS: [&'static str; 12] =
        ["M0", "M1", "L0", "L1", "M", "L", "eta0", "eta_hat_T", "C_hat", "K_hat", "delta", "rho"];

    pub fn values(&self) -> [f64; 12] {
        [
            self.m0,
            self.m1,
            self.l0,
            self.l1,
            self.m,
            self.l,
            self.eta0,
            self.eta_hat_t,
            self.c_hat,
            self.k_hat,
            self.delta,
            self.rho,
        ]
    }
}

/// Snapshot diagnostics together with the experiment constants.
#[derive(Clone, Debug)]
pub struct DiagnosticsRecord {
    pub rows: Vec<SnapshotDiagnostics>,
    pub constants: ExperimentConstants,
    pub band: Option<BandGrowthReport>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn line(h: f64) -> GridSpec {
        GridSpec::cube(1, -3.0, 3.0, h).unwrap()
    }

    fn hat(x: &[f64]) -> f64 {
        (1.0 - x[0].abs()).max(-1.0)
    }

    #[test]
    fn gradient_margin_examples() {
        let g = line(0.01);
        let m = gradient_margin(&ScalarField::from_fn(g, hat));
        assert!((m - 1.0).abs() <= 0.02, "{m}");
        assert_eq!(gradient_margin(&ScalarField::constant(g, -1.0)), 1.0);
        assert_eq!(gradient_margin(&ScalarField::constant(g, 0.0)), 0.0);
    }

    #[test]
    fn semiconvexity_examples() {
        let h = 0.01;
        let g = line(h);
        let parabola = semiconvexity_modulus(&ScalarField::from_fn(g, |x| x[0] * x[0] / 9.0), 4.0 * h).unwrap();
        assert!(parabola < 1e-9);
        let v = semiconvexity_modulus(&ScalarField::from_fn(g, |x| -x[0].abs()), 4.0 * h).unwrap();
        assert!((v - 2.0 / h).abs() < 1e-6 / h, "{v}");
        let hat_c = semiconvexity_modulus(&ScalarField::from_fn(g, hat), 4.0 * h).unwrap();
        assert!(hat_c.is_finite());
        assert!(semiconvexity_modulus(&ScalarField::from_fn(g, hat), 0.5 * h).is_err());
    }

    #[test]
    fn inclusion_examples() {
        let g = line(0.1);
        let inner = Trajectory::new(vec![0.0], vec![ScalarField::from_fn(g, |x| 0.5 - x[0].abs())]).unwrap();
        let outer = Trajectory::new(vec![0.0], vec![ScalarField::from_fn(g, |x| 1.0 - x[0].abs())]).unwrap();
        assert_eq!(inclusion_test(&inner, &outer).unwrap(), vec![true]);
        assert_eq!(inclusion_test(&outer, &inner).unwrap(), vec![false]);
    }

    #[test]
    fn perimeter_examples() {
        let g = line(0.01);
        assert_eq!(front_perimeter(&ScalarField::from_fn(g, hat)), 2.0);
        assert_eq!(front_perimeter(&ScalarField::constant(g, -1.0)), 0.0);
        let g2 = GridSpec::cube(2, -1.5, 1.5, 0.01).unwrap();
        let circle = ScalarField::from_fn(g2, |x| 1.0 - (x[0] * x[0] + x[1] * x[1]).sqrt());
        let p = front_perimeter(&circle);
        assert!((p / (2.0 * PI) - 1.0).abs() < 0.05, "{p}");
    }

    #[test]
    fn indicator_distance_examples() {
        let h = 0.01;
        let g = line(h);
        let a = ScalarField::from_fn(g, |x| 0.3 - x[0].abs());
        let b = ScalarField::from_fn(g, |x| 0.8 - x[0].abs());
        assert_eq!(indicator_l1_distance(&a, &a).unwrap(), 0.0);
        assert!((indicator_l1_distance(&a, &b).unwrap() - 1.0).abs() <= 2.0 * h);
    }

    #[test]
    fn static_band_holds() {
        let g = line(0.01);
        let u = ScalarField::from_fn(g, hat);
        let traj = Trajectory::new(vec![0.0, 0.5, 1.0], vec![u.clone(), u.clone(), u]).unwrap();
        let r = band_growth(&traj, 0.2, 0.0, 0.0).unwrap();
        assert!(r.holds());
        assert!(band_growth(&traj, 0.6, 0.0, 0.0).is_err());
    }
}
