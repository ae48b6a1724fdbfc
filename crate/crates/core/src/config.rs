//! Experiment configuration read from a TOML file.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::analysis::support_radius;
use crate::counterexample::{GammaControl, DEFAULT_MESH};
use crate::eikonal::{DEFAULT_CFL, DEFAULT_STEP_BUDGET};
use crate::error::{Error, Result};
use crate::grid::{read_snapshot, GridSpec, ScalarField};
use crate::velocity::{ExternalVelocity, Kernel, KernelShape};
use crate::weak_engine::{FixedPointConfig, NonlocalProblem};

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Explicit snapshot times; when absent, `snapshot_every` spaces them.
    #[serde(default)]
    pub snapshots: Option<Vec<f64>>,
    #[serde(default)]
    pub snapshot_every: Option<f64>,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub c1: SpeedConfig,
    #[serde(default)]
    pub u0: InitialConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub counterexample: CounterexampleConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_horizon() -> f64 {
    1.0
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "one")]
    pub dim: usize,
    pub lower: f64,
    pub upper: f64,
    pub h: f64,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelConfig {
    #[default]
    Zero,
    Indicator {
        radius: f64,
    },
    Triangle {
        a: f64,
    },
    ZeroMeanWavelet {
        a: f64,
        #[serde(default = "unit")]
        mass: f64,
    },
    File {
        path: PathBuf,
    },
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpeedConfig {
    Constant { value: f64 },
    Quadratic,
    Table { knots: Vec<(f64, f64)> },
}

impl Default for SpeedConfig {
    fn default() -> Self {
        Self::Constant { value: 1.0 }
    }
}

/// Initial data. `hat` and `circle` are both `clamp(radius − |x|, −1, 1)`,
/// `bump` is `−1 + 2(1 − |x|²/radius²)₊²`.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialConfig {
    Hat {
        #[serde(default = "unit")]
        radius: f64,
    },
    Circle {
        #[serde(default = "unit")]
        radius: f64,
    },
    Bump {
        #[serde(default = "two")]
        radius: f64,
    },
    File {
        path: PathBuf,
    },
}

fn two() -> f64 {
    2.0
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self::Hat { radius: 1.0 }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub eps: Option<Vec<f64>>,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    pub damping: Option<f64>,
    pub cfl: Option<f64>,
    pub step_budget: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Band width; `η̂/4` when absent.
    pub rho: Option<f64>,
    /// Declared positivity margin, checked against `min c̄`.
    pub delta: Option<f64>,
    /// Declared initial gradient margin, checked against the measured one.
    pub eta0: Option<f64>,
    #[serde(default = "yes")]
    pub band_growth: bool,
}

fn yes() -> bool {
    true
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { rho: None, delta: None, eta0: None, band_growth: true }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    #[serde(default = "default_counterexample_h")]
    pub h: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_mesh")]
    pub mesh: f64,
    #[serde(default = "default_controls")]
    pub controls: Vec<ControlConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub gamma: Vec<(f64, f64)>,
}

fn default_counterexample_h() -> f64 {
    1.0 / 200.0
}

fn default_cfl() -> f64 {
    DEFAULT_CFL
}

fn default_mesh() -> f64 {
    DEFAULT_MESH
}

fn default_controls() -> Vec<ControlConfig> {
    vec![ControlConfig { gamma: vec![(1.0, 0.0)] }, ControlConfig { gamma: vec![(1.0, 1.0)] }]
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self { h: default_counterexample_h(), cfl: default_cfl(), mesh: default_mesh(), controls: default_controls() }
    }
}

impl CounterexampleConfig {
    pub fn gammas(&self) -> Result<Vec<GammaControl>> {
        self.controls.iter().map(|c| GammaControl::new(c.gamma.clone())).collect()
    }
}

pub const ALL_SUITES: [&str; 6] = ["monotone", "oracle", "convolution", "inclusion", "band_growth", "gradient_margin"];

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "all_suites")]
    pub suites: Vec<String>,
    #[serde(default = "default_cases")]
    pub cases: usize,
    /// `"flip-upwind"` swaps the upwind direction in the suites that step directly.
    #[serde(default)]
    pub fault: Option<String>,
}

fn all_suites() -> Vec<String> {
    ALL_SUITES.iter().map(|s| s.to_string()).collect()
}

fn default_cases() -> usize {
    1000
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { suites: all_suites(), cases: default_cases(), fault: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConvergenceConfig {
    /// Sup error against the closed forms of the one-dimensional family.
    Counterexample {
        #[serde(default = "default_gamma_one")]
        gamma: Vec<(f64, f64)>,
        #[serde(default = "default_cfl")]
        cfl: f64,
    },
    /// Front radius of `clamp(radius − |x|, −1, 1)` moving at constant `speed`
    /// in two dimensions, against `radius + speed·t`.
    Circle {
        #[serde(default = "unit")]
        radius: f64,
        #[serde(default = "unit")]
        speed: f64,
        #[serde(default = "half")]
        horizon: f64,
        #[serde(default = "default_cfl")]
        cfl: f64,
    },
    /// Sup error of the scheme against the inf/sup formulas for `u₀ = bump`.
    Oracle {
        #[serde(default = "unit")]
        speed: f64,
        #[serde(default = "half")]
        horizon: f64,
        #[serde(default = "default_cfl")]
        cfl: f64,
    },
}

fn default_gamma_one() -> Vec<(f64, f64)> {
    vec![(1.0, 1.0)]
}

fn half() -> f64 {
    0.5
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self::Counterexample { gamma: default_gamma_one(), cfl: default_cfl() }
    }
}

/// A parsed configuration together with the text it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base)
    }

    pub fn from_str(text: &str, base_dir: PathBuf) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { config, text: text.to_string(), base_dir })
    }

    pub fn seed(&self, cli_seed: Option<u64>) -> u64 {
        cli_seed.or(self.config.seed).unwrap_or(DEFAULT_SEED)
    }

    /// SHA-256 of the configuration text and the effective seed.
    pub fn hash(&self, seed: u64) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.text.as_bytes());
        hasher.update(format!("\nseed={seed}\n").as_bytes());
        hex::encode(hasher.finalize())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Output directory, placed under `root` when one is given.
    pub fn output_dir(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) => r.join(&self.config.output),
            None => self.config.output.clone(),
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let g = &self.config.grid;
        if !(g.upper > g.lower) {
            return Err(Error::Config(format!("grid upper {} must exceed lower {}", g.upper, g.lower)));
        }
        GridSpec::cube(g.dim, g.lower, g.upper, g.h).map_err(as_config)
    }

    pub fn snapshot_times(&self) -> Result<Vec<f64>> {
        let c = &self.config;
        if !(c.horizon > 0.0 && c.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", c.horizon)));
        }
        let times = match (&c.snapshots, c.snapshot_every) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either snapshots or snapshot_every, not both".into()))
            }
            (Some(ts), None) => ts.clone(),
            (None, every) => {
                let every = every.unwrap_or(c.horizon / 10.0);
                if !(every > 0.0) {
                    return Err(Error::Config(format!("snapshot_every must be positive, got {every}")));
                }
                let n = (c.horizon / every + 1e-9).floor() as usize;
                (0..=n).map(|i| (i as f64 * every).min(c.horizon)).collect()
            }
        };
        if times.iter().any(|&t| !(0.0..=c.horizon).contains(&t)) {
            return Err(Error::Config(format!("snapshot times must lie in [0, {}]", c.horizon)));
        }
        Ok(times)
    }

    pub fn kernel(&self, grid: &GridSpec) -> Result<Kernel> {
        let (dim, h) = (grid.dim(), grid.h());
        let shape = match &self.config.kernel {
            KernelConfig::Zero => KernelShape::Zero,
            KernelConfig::Indicator { radius } => KernelShape::Indicator { radius: *radius },
            KernelConfig::Triangle { a } => KernelShape::Triangle { a: *a },
            KernelConfig::ZeroMeanWavelet { a, mass } => KernelShape::ZeroMeanWavelet { a: *a, mass: *mass },
            KernelConfig::File { path } => {
                let samples = self.read_field(path)?;
                if samples.grid().dim() != dim || (samples.grid().h() - h).abs() > 1e-12 * h {
                    return Err(Error::Config("kernel file does not match the grid spacing".into()));
                }
                return Kernel::from_samples(&samples).map_err(as_config);
            }
        };
        Kernel::builtin(shape, dim, h).map_err(as_config)
    }

    pub fn c1(&self) -> Result<ExternalVelocity> {
        match &self.config.c1 {
            SpeedConfig::Constant { value } if value.is_finite() => Ok(ExternalVelocity::Constant(*value)),
            SpeedConfig::Constant { value } => Err(Error::Config(format!("c1 value {value} is not finite"))),
            SpeedConfig::Quadratic => Ok(ExternalVelocity::Quadratic),
            SpeedConfig::Table { knots } => ExternalVelocity::time_table(knots.clone()).map_err(as_config),
        }
    }

    pub fn u0(&self, grid: &GridSpec) -> Result<ScalarField> {
        let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let positive = |r: f64| {
            if r > 0.0 {
                Ok(r)
            } else {
                Err(Error::Config(format!("u0 radius must be positive, got {r}")))
            }
        };
        match &self.config.u0 {
            InitialConfig::Hat { radius } | InitialConfig::Circle { radius } => {
                let r = positive(*radius)?;
                Ok(ScalarField::from_fn(*grid, |x| (r - norm(x)).clamp(-1.0, 1.0)))
            }
            InitialConfig::Bump { radius } => {
                let r = positive(*radius)?;
                Ok(ScalarField::from_fn(*grid, |x| {
                    let s = (1.0 - (norm(x) / r).powi(2)).max(0.0);
                    -1.0 + 2.0 * s * s
                }))
            }
            InitialConfig::File { path } => {
                let u = self.read_field(path)?;
                if u.grid() != grid {
                    return Err(Error::Config("u0 file grid differs from the configured grid".into()));
                }
                if u.values().iter().any(|v| !(-1.0..=1.0).contains(v)) {
                    return Err(Error::Config("u0 values must lie in [-1, 1]".into()));
                }
                Ok(u)
            }
        }
    }

    fn read_field(&self, path: &Path) -> Result<ScalarField> {
        let p = self.resolve(path);
        let file = fs::File::open(&p).map_err(|e| Error::Config(format!("cannot open {}: {e}", p.display())))?;
        Ok(read_snapshot(BufReader::new(file)).map_err(as_config)?.1)
    }

    pub fn engine(&self, h: f64) -> Result<FixedPointConfig> {
        let e = &self.config.engine;
        let mut c = FixedPointConfig::for_grid(h);
        if let Some(eps) = &e.eps {
            c.eps_schedule = eps.clone();
        }
        c.max_iterations = e.max_iterations.unwrap_or(c.max_iterations);
        c.tolerance = e.tolerance.unwrap_or(c.tolerance);
        c.damping = e.damping.unwrap_or(c.damping);
        c.cfl = e.cfl.unwrap_or(c.cfl);
        c.step_budget = e.step_budget.unwrap_or(DEFAULT_STEP_BUDGET);
        c.validate().map_err(as_config)?;
        Ok(c)
    }

    /// Builds the nonlocal problem and checks that the box holds `B(0, R₀ + M·T)`.
    pub fn problem(&self) -> Result<NonlocalProblem> {
        let grid = self.grid()?;
        let kernel = self.kernel(&grid)?;
        let u0 = self.u0(&grid)?;
        let times = self.snapshot_times()?;
        let problem = NonlocalProblem::new(kernel, self.c1()?, u0, self.config.horizon).with_snapshots(times);
        let r0 = support_radius(&problem.u0);
        let reach = r0 + problem.speed_bound() * self.config.horizon;
        if !grid.contains_ball(reach) {
            return Err(Error::Config(format!(
                "box does not contain B(0, R0 + M T) = B(0, {reach:.4}) (R0 = {r0:.4}, M = {:.4}, T = {})",
                problem.speed_bound(),
                self.config.horizon
            )));
        }
        if let Some(d) = self.config.diagnostics.delta {
            if !(d > 0.0) {
                return Err(Error::Config(format!("declared delta must be positive, got {d}")));
            }
        }
        if let Some(rho) = self.config.diagnostics.rho {
            if !(rho > 0.0) {
                return Err(Error::Config(format!("rho must be positive, got {rho}")));
            }
        }
        Ok(problem)
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
