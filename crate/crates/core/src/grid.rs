//! Uniform box grids in one or two dimensions, grid-sampled fields and the
//! discrete difference / measure primitives the solvers are built from.
//!
//! Nodes are stored in row-major order: axis 0 is `x`, the last axis varies
//! fastest. In 1D the second axis is degenerate (`counts[1] == 1`).

use std::io::{BufRead, Write};
use std::ops::RangeBounds;

use crate::error::{Error, Result};
use crate::velocity::OccupancyField;

/// Geometry of a uniform box grid with the same spacing along every axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    dim: usize,
    lower: [f64; 2],
    h: f64,
    counts: [usize; 2],
}

impl GridSpec {
    pub fn new(dim: usize, lower: &[f64], h: f64, counts: &[usize]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if lower.len() != dim || counts.len() != dim {
            return Err(Error::Config(format!(
                "expected {dim} lower corner coordinates and node counts"
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("grid spacing must be positive, got {h}")));
        }
        if counts.iter().any(|&n| n < 3) {
            return Err(Error::Config("at least 3 nodes per axis are required".into()));
        }
        let mut lo = [0.0; 2];
        let mut n = [1; 2];
        lo[..dim].copy_from_slice(lower);
        n[..dim].copy_from_slice(counts);
        Ok(Self { dim, lower: lo, h, counts: n })
    }

    /// The box `[lo, hi]^dim`. `hi - lo` is rounded to a whole number of cells.
    pub fn cube(dim: usize, lo: f64, hi: f64, h: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::Config(format!("empty box [{lo}, {hi}]")));
        }
        let cells = ((hi - lo) / h).round() as usize;
        let lower = vec![lo; dim];
        let counts = vec![cells + 1; dim];
        Self::new(dim, &lower, h, &counts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.dim]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.lower[axis] + (self.counts[axis] - 1) as f64 * self.h
    }

    pub fn node_count(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    /// Volume element `h^N` attached to each node.
    pub fn cell_measure(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Index stride of a unit step along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            self.counts[1]
        } else {
            1
        }
    }

    pub fn index(&self, multi: [usize; 2]) -> usize {
        multi[0] * self.counts[1] + multi[1]
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        [idx / self.counts[1], idx % self.counts[1]]
    }

    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let m = self.multi_index(idx);
        let mut x = [0.0; 2];
        for axis in 0..self.dim {
            x[axis] = self.lower[axis] + m[axis] as f64 * self.h;
        }
        x
    }

    /// Whether the closed ball `B(0, radius)` lies inside the box.
    pub fn contains_ball(&self, radius: f64) -> bool {
        (0..self.dim).all(|a| self.lower[a] <= -radius && self.upper(a) >= radius)
    }

    /// Neighbour of `idx` one step along `axis` in direction `dir` (±1), if inside the grid.
    #[inline]
    pub fn neighbour(&self, idx: usize, axis: usize, dir: isize) -> Option<usize> {
        let m = self.multi_index(idx)[axis] as isize + dir;
        if m < 0 || m >= self.counts[axis] as isize {
            None
        } else {
            Some((idx as isize + dir * self.stride(axis) as isize) as usize)
        }
    }
}

/// One value per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Config(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self { grid, values: vec![value; grid.node_count()] }
    }

    /// Samples `f` at every node; `f` receives the node coordinates (length `dim`).
    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|i| f(&grid.coords(i)[..grid.dim()]))
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid, values })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Config("fields live on different grids".into()));
        }
        Ok(())
    }
}

/// Forward and backward difference quotients along each axis.
#[derive(Clone, Debug)]
pub struct Differences {
    pub forward: Vec<ScalarField>,
    pub backward: Vec<ScalarField>,
}

/// Forward difference at `idx` along `axis`; at the last node the backward
/// quotient is copied.
#[inline]
fn forward_at(g: &GridSpec, u: &[f64], idx: usize, axis: usize) -> f64 {
    match g.neighbour(idx, axis, 1) {
        Some(j) => (u[j] - u[idx]) / g.h,
        None => {
            let j = g.neighbour(idx, axis, -1).expect("at least 3 nodes per axis");
            (u[idx] - u[j]) / g.h
        }
    }
}

#[inline]
fn backward_at(g: &GridSpec, u: &[f64], idx: usize, axis: usize) -> f64 {
    match g.neighbour(idx, axis, -1) {
        Some(j) => (u[idx] - u[j]) / g.h,
        None => {
            let j = g.neighbour(idx, axis, 1).expect("at least 3 nodes per axis");
            (u[j] - u[idx]) / g.h
        }
    }
}

pub fn one_sided_differences(field: &ScalarField) -> Differences {
    let g = field.grid;
    let u = &field.values;
    let per_axis = |f: fn(&GridSpec, &[f64], usize, usize) -> f64| {
        (0..g.dim)
            .map(|axis| ScalarField {
                grid: g,
                values: (0..g.node_count()).map(|i| f(&g, u, i, axis)).collect(),
            })
            .collect::<Vec<_>>()
    };
    Differences { forward: per_axis(forward_at), backward: per_axis(backward_at) }
}

/// Upwind gradient magnitudes `(∇⁺, ∇⁻)` at a single node.
///
/// Per axis, `∇⁺` takes the larger of the increasing backward slope and the
/// decreasing forward slope, `∇⁻` the larger of the decreasing backward and the
/// increasing forward slope (Godunov flux for `c|p|`). `∇⁻` is the magnitude
/// used by expanding speeds, `∇⁺` by shrinking ones. Missing neighbours at the
/// box edge count as copies of the node, which keeps the step monotone.
#[inline]
pub fn godunov_at(g: &GridSpec, u: &[f64], idx: usize) -> (f64, f64) {
    let mut plus = 0.0;
    let mut minus = 0.0;
    for axis in 0..g.dim {
        let back = g.neighbour(idx, axis, -1).map_or(0.0, |j| (u[idx] - u[j]) / g.h);
        let fwd = g.neighbour(idx, axis, 1).map_or(0.0, |j| (u[j] - u[idx]) / g.h);
        let p = back.max(0.0).max(-fwd.min(0.0));
        let m = (-back.min(0.0)).max(fwd.max(0.0));
        plus += p * p;
        minus += m * m;
    }
    (plus.sqrt(), minus.sqrt())
}

pub fn godunov_magnitudes(field: &ScalarField) -> (ScalarField, ScalarField) {
    let g = field.grid;
    let (plus, minus): (Vec<f64>, Vec<f64>) =
        (0..g.node_count()).map(|i| godunov_at(&g, &field.values, i)).unzip();
    (ScalarField { grid: g, values: plus }, ScalarField { grid: g, values: minus })
}

/// `h^N` times the number of nodes whose value lies in `range`.
pub fn sublevel_measure(field: &ScalarField, range: impl RangeBounds<f64>) -> f64 {
    let count = field.values.iter().filter(|v| range.contains(v)).count();
    count as f64 * field.grid.cell_measure()
}

/// Largest absolute one-sided difference quotient over all nodes and axes.
pub fn lipschitz_estimate(field: &ScalarField) -> f64 {
    let g = field.grid;
    let u = &field.values;
    let mut lip: f64 = 0.0;
    for idx in 0..g.node_count() {
        for axis in 0..g.dim {
            if let Some(j) = g.neighbour(idx, axis, 1) {
                lip = lip.max(((u[j] - u[idx]) / g.h).abs());
            }
        }
    }
    lip
}

/// Time-ordered sequence of fields on one grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    times: Vec<f64>,
    fields: Vec<ScalarField>,
    occupancy: Option<Vec<OccupancyField>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, fields: Vec<ScalarField>) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::Config("trajectory needs one field per time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("trajectory times must be strictly increasing".into()));
        }
        let grid = *fields[0].grid();
        if fields.iter().any(|f| *f.grid() != grid) {
            return Err(Error::Config("trajectory fields must share one grid".into()));
        }
        Ok(Self { times, fields, occupancy: None })
    }

    pub fn with_occupancy(mut self, occupancy: Vec<OccupancyField>) -> Result<Self> {
        if occupancy.len() != self.fields.len()
            || occupancy.iter().any(|c| c.grid() != self.grid())
        {
            return Err(Error::Config("occupancy must match the trajectory snapshots".into()));
        }
        self.occupancy = Some(occupancy);
        Ok(self)
    }

    pub fn grid(&self) -> &GridSpec {
        self.fields[0].grid()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn occupancy(&self) -> Option<&[OccupancyField]> {
        self.occupancy.as_deref()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    /// Index of the snapshot closest to `t` (earlier one on ties).
    pub fn nearest(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            0
        } else if k == self.times.len() || (t - self.times[k - 1]) <= (self.times[k] - t) {
            k - 1
        } else {
            k
        }
    }

    /// Restriction to the snapshots closest to each requested time.
    pub fn sample(&self, times: &[f64]) -> Result<Self> {
        let mut idx: Vec<usize> = times.iter().map(|&t| self.nearest(t)).collect();
        idx.dedup();
        let occupancy = self
            .occupancy
            .as_ref()
            .map(|occ| idx.iter().map(|&k| occ[k].clone()).collect());
        let traj = Self::new(
            idx.iter().map(|&k| self.times[k]).collect(),
            idx.iter().map(|&k| self.fields[k].clone()).collect(),
        )?;
        Ok(Self { occupancy, ..traj })
    }

    /// Largest nodewise distance between two trajectories over all snapshots.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Config("trajectories have different snapshot counts".into()));
        }
        self.fields
            .iter()
            .zip(&other.fields)
            .try_fold(0.0_f64, |m, (a, b)| Ok(m.max(a.sup_distance(b)?)))
    }
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes one snapshot in the `# t=<time> h=<h> n=<counts>` CSV format.
pub fn write_snapshot<W: Write>(mut out: W, t: f64, field: &ScalarField) -> Result<()> {
    let g = field.grid();
    let counts: Vec<String> = g.counts().iter().map(|n| n.to_string()).collect();
    writeln!(out, "# t={} h={} n={}", fmt17(t), fmt17(g.h()), counts.join("x"))?;
    for (i, v) in field.values().iter().enumerate() {
        let x = g.coords(i);
        match g.dim() {
            1 => writeln!(out, "{},{}", fmt17(x[0]), fmt17(*v))?,
            _ => writeln!(out, "{},{},{}", fmt17(x[0]), fmt17(x[1]), fmt17(*v))?,
        }
    }
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`]; the lower corner is taken
/// from the first node line.
pub fn read_snapshot<R: BufRead>(input: R) -> Result<(f64, ScalarField)> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty file".into()))??;
    let rest = header
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse(format!("bad header `{header}`")))?;
    let (mut t, mut h, mut counts) = (None, None, None);
    for token in rest.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header token `{token}`")))?;
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        match key {
            "t" => t = Some(num(value)?),
            "h" => h = Some(num(value)?),
            "n" => {
                counts = Some(
                    value
                        .split('x')
                        .map(|s| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s}: {e}"))))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            _ => {}
        }
    }
    let missing = |k: &str| Error::Parse(format!("header lacks `{k}`"));
    let (t, h, counts) =
        (t.ok_or_else(|| missing("t"))?, h.ok_or_else(|| missing("h"))?, counts.ok_or_else(|| missing("n"))?);
    let dim = counts.len();
    let mut lower = None;
    let mut values = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if cols.len() != dim + 1 {
            return Err(Error::Parse(format!("expected {} columns in `{line}`", dim + 1)));
        }
        if lower.is_none() {
            lower = Some(cols[..dim].to_vec());
        }
        values.push(cols[dim]);
    }
    let lower = lower.ok_or_else(|| Error::Parse("no node lines".into()))?;
    let grid = GridSpec::new(dim, &lower, h, &counts)?;
    Ok((t, ScalarField::new(grid, values)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line(lo: f64, hi: f64, h: f64) -> GridSpec {
        GridSpec::cube(1, lo, hi, h).unwrap()
    }

    fn hat(x: &[f64]) -> f64 {
        (1.0 - x[0].abs()).max(-1.0)
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(3, &[0.0; 3], 0.1, &[4; 3]).is_err());
        assert!(GridSpec::new(1, &[0.0], 0.0, &[4]).is_err());
        assert!(GridSpec::new(1, &[0.0], 0.1, &[2]).is_err());
    }

    #[test]
    fn cube_node_layout() {
        let g = GridSpec::cube(2, -1.0, 1.0, 0.5).unwrap();
        assert_eq!(g.counts(), &[5, 5]);
        assert_eq!(g.coords(g.index([1, 3])), [-0.5, 0.5]);
        assert_eq!(g.multi_index(g.index([4, 2])), [4, 2]);
        assert!(g.contains_ball(1.0));
        assert!(!g.contains_ball(1.01));
    }

    #[test]
    fn differences_of_linear_field() {
        let g = line(-1.0, 1.0, 0.1);
        let d = one_sided_differences(&ScalarField::from_fn(g, |x| x[0]));
        for v in d.forward[0].values().iter().chain(d.backward[0].values()) {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn differences_of_constant_field() {
        let g = GridSpec::cube(2, -1.0, 1.0, 0.25).unwrap();
        let d = one_sided_differences(&ScalarField::constant(g, -1.0));
        assert!(d.forward.iter().chain(&d.backward).all(|f| f.sup_norm() == 0.0));
    }

    #[test]
    fn differences_of_hat_on_the_slope() {
        let g = line(-3.0, 3.0, 0.25);
        let u = ScalarField::from_fn(g, hat);
        let d = one_sided_differences(&u);
        let i = g.index([14, 0]);
        assert_eq!(g.coords(i)[0], 0.5);
        assert_abs_diff_eq!(d.forward[0].values()[i], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.backward[0].values()[i], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn godunov_of_linear_and_constant_fields() {
        let g = line(-1.0, 1.0, 0.1);
        let (p, m) = godunov_magnitudes(&ScalarField::from_fn(g, |x| x[0]));
        for i in 1..g.node_count() - 1 {
            assert_abs_diff_eq!(p.values()[i], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m.values()[i], 1.0, epsilon = 1e-12);
        }
        let (p, m) = godunov_magnitudes(&ScalarField::constant(g, 0.3));
        assert_eq!(p.sup_norm() + m.sup_norm(), 0.0);
    }

    #[test]
    fn godunov_at_concave_kink() {
        // u = -|x| at x = 0: D⁻ = 1, D⁺ = -1. Both slopes point away from the
        // peak, so the shrinking magnitude sees slope 1 and the expanding one 0.
        let g = line(-1.0, 1.0, 0.1);
        let u = ScalarField::from_fn(g, |x| -x[0].abs());
        let (p, m) = godunov_magnitudes(&u);
        let i = g.index([10, 0]);
        assert_abs_diff_eq!(p.values()[i], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.values()[i], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn godunov_converges_on_smooth_field() {
        // Away from the critical points of sin x, both magnitudes approach |cos x|.
        let err = |h: f64| {
            let g = line(-3.0, 3.0, h);
            let u = ScalarField::from_fn(g, |x| x[0].sin());
            let (p, m) = godunov_magnitudes(&u);
            (0..g.node_count())
                .filter(|&i| {
                    let x = g.coords(i)[0];
                    x.cos().abs() > 0.2 && x.abs() < 2.9
                })
                .map(|i| {
                    let exact = g.coords(i)[0].cos().abs();
                    (p.values()[i] - exact).abs().max((m.values()[i] - exact).abs())
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e1 < 0.02 && e2 < 0.01, "{e1} {e2}");
        assert!((e1 / e2).log2() > 0.9);
    }

    #[test]
    fn measure_of_hat_superlevel_set() {
        let h = 0.01;
        let u = ScalarField::from_fn(line(-3.0, 3.0, h), hat);
        assert!((sublevel_measure(&u, 0.0..) - 2.0).abs() <= 2.0 * h);
        assert_eq!(sublevel_measure(&u, 5.0..), 0.0);
        let zero = ScalarField::constant(line(-3.0, 3.0, h), 0.0);
        assert!((sublevel_measure(&zero, 0.0..) - 6.0).abs() <= 2.0 * h);
    }

    #[test]
    fn lipschitz_examples() {
        let g = line(-3.0, 3.0, 0.01);
        assert_abs_diff_eq!(lipschitz_estimate(&ScalarField::from_fn(g, hat)), 1.0, epsilon = 1e-9);
        assert_eq!(lipschitz_estimate(&ScalarField::constant(g, 0.5)), 0.0);
        assert_abs_diff_eq!(
            lipschitz_estimate(&ScalarField::from_fn(g, |x| 2.0 * x[0])),
            2.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn nearest_snapshot() {
        let g = line(0.0, 1.0, 0.25);
        let f = ScalarField::constant(g, 0.0);
        let traj = Trajectory::new(vec![0.0, 0.5, 1.0], vec![f.clone(), f.clone(), f]).unwrap();
        assert_eq!(traj.nearest(-1.0), 0);
        assert_eq!(traj.nearest(0.2), 0);
        assert_eq!(traj.nearest(0.3), 1);
        assert_eq!(traj.nearest(0.75), 1);
        assert_eq!(traj.nearest(2.0), 2);
    }

    #[test]
    fn trajectory_rejects_unordered_times() {
        let f = ScalarField::constant(line(0.0, 1.0, 0.25), 0.0);
        assert!(Trajectory::new(vec![0.0, 0.0], vec![f.clone(), f]).is_err());
    }

    #[test]
    fn snapshot_header_and_roundtrip() {
        let g = GridSpec::cube(2, -1.0, 1.0, 0.5).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0] * 0.1 + x[1] / 3.0);
        let mut buf = Vec::new();
        write_snapshot(&mut buf, 0.25, &u).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# t=2.5000000000000000e-1 h=5.0000000000000000e-1 n=5x5\n"));
        let (t, back) = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(t, 0.25);
        assert_eq!(back, u);
    }
}
