//! Interaction kernels `c₀`, external speeds `c₁` and the total normal
//! velocity `c̄ = c₀ ⋆ χ + c₁`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

/// Grid-sampled occupancy `χ` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyField(ScalarField);

impl OccupancyField {
    pub fn new(field: ScalarField) -> Result<Self> {
        if let Some(v) = field.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Precondition(format!("occupancy value {v} outside [0, 1]")));
        }
        Ok(Self(field))
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self(ScalarField::constant(grid, 0.0))
    }

    /// `1_{u ≥ 0}`.
    pub fn indicator_nonnegative(u: &ScalarField) -> Self {
        Self(u.map(|v| if v >= 0.0 { 1.0 } else { 0.0 }))
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::new(ScalarField::from_fn(grid, f))
    }

    pub fn grid(&self) -> &GridSpec {
        self.0.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn as_field(&self) -> &ScalarField {
        &self.0
    }
}

/// Builtin kernel profiles.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelShape {
    Zero,
    /// `1_{|z| ≤ radius}`.
    Indicator { radius: f64 },
    /// `max(1 − |z|/a, 0)`.
    Triangle { a: f64 },
    /// Polynomial bump `1 − |z|²/a²` on `|z| ≤ 2a`, shifted to zero mean and
    /// scaled to L¹ mass `mass`.
    ZeroMeanWavelet { a: f64, mass: f64 },
    /// Samples read from a snapshot file, centred at the origin.
    Sampled,
}

impl fmt::Display for KernelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "zero"),
            Self::Indicator { radius } => write!(f, "indicator({radius})"),
            Self::Triangle { a } => write!(f, "triangle({a})"),
            Self::ZeroMeanWavelet { a, mass } => write!(f, "zero-mean-wavelet({a}, mass {mass})"),
            Self::Sampled => write!(f, "sampled"),
        }
    }
}

/// Regularity constants of a kernel.
///
/// `l1` is `M₀`, `grad_l1` is `L₀` (total variation, jumps included), `sup`
/// is `m₀`, `semiconvexity` is the scalar surrogate for `N₀`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelBounds {
    pub l1: f64,
    pub grad_l1: f64,
    pub sup: f64,
    pub semiconvexity: f64,
}

type TimeProfile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A kernel sampled on the lattice `hℤᴺ` of one grid spacing.
#[derive(Clone)]
pub struct Kernel {
    shape: KernelShape,
    dim: usize,
    h: f64,
    support_radius: f64,
    stencil: Vec<([isize; 2], f64)>,
    declared_l1: f64,
    measured: KernelBounds,
    time_profile: Option<TimeProfile>,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("shape", &self.shape)
            .field("dim", &self.dim)
            .field("h", &self.h)
            .field("support_radius", &self.support_radius)
            .field("stencil_len", &self.stencil.len())
            .field("declared_l1", &self.declared_l1)
            .field("measured", &self.measured)
            .field("time_dependent", &self.time_profile.is_some())
            .finish()
    }
}

fn lattice_ball(dim: usize, h: f64, radius: f64) -> Vec<[isize; 2]> {
    let r = (radius / h + 1e-9).floor() as isize;
    let r2 = (radius / h) * (radius / h) + 1e-9;
    let ys: Vec<isize> = if dim == 2 { (-r..=r).collect() } else { vec![0] };
    let mut out = Vec::new();
    for i in -r..=r {
        for &j in &ys {
            if ((i * i + j * j) as f64) <= r2 {
                out.push([i, j]);
            }
        }
    }
    out
}

impl Kernel {
    pub fn builtin(shape: KernelShape, dim: usize, h: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("kernel dimension must be 1 or 2, got {dim}")));
        }
        let norm = |k: &[isize; 2]| h * ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt();
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("kernel parameter {name} must be positive, got {v}")))
            }
        };
        let (support, stencil, declared) = match shape {
            KernelShape::Zero => (0.0, Vec::new(), 0.0),
            KernelShape::Indicator { radius } => {
                positive("radius", radius)?;
                let st = lattice_ball(dim, h, radius).into_iter().map(|k| (k, 1.0)).collect();
                let l1 = if dim == 1 { 2.0 * radius } else { PI * radius * radius };
                (radius, st, l1)
            }
            KernelShape::Triangle { a } => {
                positive("a", a)?;
                let st = lattice_ball(dim, h, a)
                    .into_iter()
                    .map(|k| (k, (1.0 - norm(&k) / a).max(0.0)))
                    .collect();
                let l1 = if dim == 1 { a } else { PI * a * a / 3.0 };
                (a, st, l1)
            }
            KernelShape::ZeroMeanWavelet { a, mass } => {
                positive("a", a)?;
                positive("mass", mass)?;
                let ball = lattice_ball(dim, h, 2.0 * a);
                let raw: Vec<f64> = ball.iter().map(|k| 1.0 - (norm(k) / a).powi(2)).collect();
                let mean = raw.iter().sum::<f64>() / raw.len() as f64;
                let cell = h.powi(dim as i32);
                let l1: f64 = raw.iter().map(|v| (v - mean).abs()).sum::<f64>() * cell;
                let st = ball.into_iter().zip(raw).map(|(k, v)| (k, (v - mean) * mass / l1)).collect();
                (2.0 * a, st, mass)
            }
            KernelShape::Sampled => {
                return Err(Error::Config("sampled kernels are built with Kernel::from_samples".into()))
            }
        };
        Ok(Self::assemble(shape, dim, h, support, stencil, declared))
    }

    /// Kernel from a field sampled around the origin; nodes must sit on `hℤᴺ`.
    pub fn from_samples(samples: &ScalarField) -> Result<Self> {
        let g = samples.grid();
        let h = g.h();
        let mut stencil = Vec::new();
        let mut support: f64 = 0.0;
        for (i, &v) in samples.values().iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let x = g.coords(i);
            let mut k = [0isize; 2];
            for axis in 0..g.dim() {
                let q = x[axis] / h;
                if (q - q.round()).abs() > 1e-6 {
                    return Err(Error::Config("kernel samples are not aligned with the origin".into()));
                }
                k[axis] = q.round() as isize;
            }
            support = support.max((x[0] * x[0] + x[1] * x[1]).sqrt());
            stencil.push((k, v));
        }
        let l1 = stencil.iter().map(|(_, v)| v.abs()).sum::<f64>() * g.cell_measure();
        Ok(Self::assemble(KernelShape::Sampled, g.dim(), h, support, stencil, l1))
    }

    fn assemble(
        shape: KernelShape,
        dim: usize,
        h: f64,
        support_radius: f64,
        stencil: Vec<([isize; 2], f64)>,
        declared_l1: f64,
    ) -> Self {
        let measured = measure_bounds(dim, h, &stencil);
        Self { shape, dim, h, support_radius, stencil, declared_l1, measured, time_profile: None }
    }

    /// Multiplies the kernel by `profile(t)`; the profile must stay in `[-1, 1]`
    /// for the declared bounds to remain valid.
    pub fn with_time_profile(mut self, profile: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.time_profile = Some(Arc::new(profile));
        self
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn is_time_independent(&self) -> bool {
        self.time_profile.is_none()
    }

    pub fn is_zero(&self) -> bool {
        self.stencil.iter().all(|(_, v)| *v == 0.0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.stencil.iter().all(|(_, v)| *v >= 0.0)
    }

    pub fn stencil(&self) -> &[([isize; 2], f64)] {
        &self.stencil
    }

    /// Declared `M₀`, with the measured discrete constants for everything else.
    pub fn bounds(&self) -> KernelBounds {
        KernelBounds { l1: self.declared_l1, ..self.measured }
    }

    pub fn measured_bounds(&self) -> KernelBounds {
        self.measured
    }

    /// Checks `hᴺ Σ|c₀| ≤ M₀ (1 + tol)` with `tol = 2N·h / support_radius`,
    /// the node-counting error of the support.
    pub fn check_l1_bound(&self) -> Result<()> {
        if self.stencil.is_empty() {
            return Ok(());
        }
        let tol = 2.0 * self.dim as f64 * self.h / self.support_radius.max(self.h) + 1e-12;
        if self.measured.l1 > self.declared_l1 * (1.0 + tol) {
            return Err(Error::Config(format!(
                "kernel L1 norm {} exceeds declared bound {}",
                self.measured.l1, self.declared_l1
            )));
        }
        Ok(())
    }

    fn time_factor(&self, t: f64) -> f64 {
        self.time_profile.as_ref().map_or(1.0, |p| p(t))
    }
}

fn measure_bounds(dim: usize, h: f64, stencil: &[([isize; 2], f64)]) -> KernelBounds {
    let cell = h.powi(dim as i32);
    let lookup: std::collections::HashMap<[isize; 2], f64> = stencil.iter().copied().collect();
    let at = |k: [isize; 2]| lookup.get(&k).copied().unwrap_or(0.0);
    let l1 = stencil.iter().map(|(_, v)| v.abs()).sum::<f64>() * cell;
    let sup = stencil.iter().fold(0.0_f64, |m, (_, v)| m.max(v.abs()));
    // Forward differences over the support and one layer around it.
    let mut grad_l1 = 0.0;
    let mut semiconvexity: f64 = 0.0;
    let mut seen = std::collections::HashSet::new();
    for (k, _) in stencil {
        for axis in 0..dim {
            for shift in [-1isize, 0] {
                let mut base = *k;
                base[axis] += shift;
                if seen.insert((base, axis)) {
                    let mut next = base;
                    next[axis] += 1;
                    grad_l1 += (at(next) - at(base)).abs() / h * cell;
                }
            }
            let (mut p, mut m) = (*k, *k);
            p[axis] += 1;
            m[axis] -= 1;
            semiconvexity = semiconvexity.max(-(at(p) + at(m) - 2.0 * at(*k)) / (h * h));
        }
    }
    KernelBounds { l1, grad_l1, sup, semiconvexity }
}

/// Regularity constants of an external speed: `M₁`, `L₁`, `N₁`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExternalBounds {
    pub sup: f64,
    pub lipschitz: f64,
    pub semiconvexity: f64,
}

type SpaceTimeFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// External driving speed `c₁(x, t)`.
#[derive(Clone)]
pub enum ExternalVelocity {
    Constant(f64),
    /// `2(t − 1)(2 − t)`, used on `t ∈ [0, 2]`.
    Quadratic,
    /// Piecewise-linear in time through `(t, value)` knots, constant beyond them.
    TimeTable(Vec<(f64, f64)>),
    Custom { f: SpaceTimeFn, bounds: ExternalBounds, space_independent: bool },
}

impl fmt::Debug for ExternalVelocity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => write!(f, "Constant({v})"),
            Self::Quadratic => write!(f, "Quadratic"),
            Self::TimeTable(knots) => write!(f, "TimeTable({knots:?})"),
            Self::Custom { bounds, .. } => write!(f, "Custom({bounds:?})"),
        }
    }
}

/// `2(t − 1)(2 − t)`.
pub fn quadratic_speed(t: f64) -> f64 {
    2.0 * (t - 1.0) * (2.0 - t)
}

impl ExternalVelocity {
    pub fn custom(
        f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        bounds: ExternalBounds,
        space_independent: bool,
    ) -> Self {
        Self::Custom { f: Arc::new(f), bounds, space_independent }
    }

    pub fn time_table(mut knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Config("time table needs at least one knot".into()));
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self::TimeTable(knots))
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Quadratic => quadratic_speed(t),
            Self::TimeTable(knots) => {
                let k = knots.partition_point(|(s, _)| *s <= t);
                if k == 0 {
                    knots[0].1
                } else if k == knots.len() {
                    knots[k - 1].1
                } else {
                    let ((t0, v0), (t1, v1)) = (knots[k - 1], knots[k]);
                    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
                }
            }
            Self::Custom { f, .. } => f(x, t),
        }
    }

    pub fn is_space_independent(&self) -> bool {
        match self {
            Self::Custom { space_independent, .. } => *space_independent,
            _ => true,
        }
    }

    pub fn bounds(&self) -> ExternalBounds {
        match self {
            Self::Constant(v) => ExternalBounds { sup: v.abs(), lipschitz: 0.0, semiconvexity: 0.0 },
            // |c₁| on [0, 2] peaks at t = 0 where c₁ = −4.
            Self::Quadratic => ExternalBounds { sup: 4.0, lipschitz: 0.0, semiconvexity: 0.0 },
            Self::TimeTable(knots) => ExternalBounds {
                sup: knots.iter().fold(0.0, |m, (_, v)| m.max(v.abs())),
                lipschitz: 0.0,
                semiconvexity: 0.0,
            },
            Self::Custom { bounds, .. } => *bounds,
        }
    }

    pub fn sample(&self, grid: &GridSpec, t: f64) -> ScalarField {
        if self.is_space_independent() {
            ScalarField::constant(*grid, self.eval(&grid.coords(0)[..grid.dim()], t))
        } else {
            ScalarField::from_fn(*grid, |x| self.eval(x, t))
        }
    }
}

fn check_kernel_grid(kernel: &Kernel, grid: &GridSpec) -> Result<()> {
    if kernel.dim != grid.dim() || (kernel.h - grid.h()).abs() > 1e-12 * grid.h() {
        return Err(Error::Config(format!(
            "kernel sampled for dim {} h {} does not match grid dim {} h {}",
            kernel.dim,
            kernel.h,
            grid.dim(),
            grid.h()
        )));
    }
    Ok(())
}

/// `x ↦ hᴺ Σ_y c₀(x − y, t) χ(y)`, summed over the kernel's support. Occupancy
/// outside the grid is zero.
pub fn convolve(kernel: &Kernel, chi: &OccupancyField, t: f64) -> Result<ScalarField> {
    let g = *chi.grid();
    check_kernel_grid(kernel, &g)?;
    let mut out = vec![0.0; g.node_count()];
    let scale = g.cell_measure() * kernel.time_factor(t);
    if scale == 0.0 || kernel.stencil.is_empty() {
        return ScalarField::new(g, out);
    }
    let n = [g.counts()[0] as isize, if g.dim() == 2 { g.counts()[1] as isize } else { 1 }];
    // Scatter each occupied node onto the nodes its kernel window reaches.
    for (src, &c) in chi.values().iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let m = g.multi_index(src);
        let (mx, my) = (m[0] as isize, m[1] as isize);
        let w = scale * c;
        for &([kx, ky], value) in &kernel.stencil {
            let (x, y) = (mx + kx, my + ky);
            if x >= 0 && x < n[0] && y >= 0 && y < n[1] {
                out[(x * n[1] + y) as usize] += w * value;
            }
        }
    }
    ScalarField::new(g, out)
}

/// `c̄ = c₀ ⋆ χ + c₁(·, t)`.
pub fn assemble_total_velocity(
    kernel: &Kernel,
    chi: &OccupancyField,
    c1: &ExternalVelocity,
    t: f64,
) -> Result<ScalarField> {
    let mut cbar = convolve(kernel, chi, t)?;
    let g = *chi.grid();
    if c1.is_space_independent() {
        let v = c1.eval(&g.coords(0)[..g.dim()], t);
        cbar.values_mut().iter_mut().for_each(|c| *c += v);
    } else {
        for (i, c) in cbar.values_mut().iter_mut().enumerate() {
            *c += c1.eval(&g.coords(i)[..g.dim()], t);
        }
    }
    Ok(cbar)
}

/// Global speed bound `M = M₀ + M₁` and Lipschitz bound `L = L₀ + L₁`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityBounds {
    pub speed: f64,
    pub lipschitz: f64,
}

pub fn velocity_bounds(kernel: &Kernel, c1: &ExternalVelocity) -> VelocityBounds {
    let k = kernel.bounds();
    let e = c1.bounds();
    VelocityBounds { speed: k.l1 + e.sup, lipschitz: k.grad_l1 + e.lipschitz }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositivityReport {
    pub holds: bool,
    pub min: f64,
    pub worst_node: usize,
}

/// Whether `c̄ ≥ δ` at every node.
pub fn check_positivity(cbar: &ScalarField, delta: f64) -> PositivityReport {
    let (worst_node, min) = cbar
        .values()
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
    PositivityReport { holds: min >= delta, min, worst_node }
}
