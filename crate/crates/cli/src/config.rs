//! TOML experiment configuration and its validation.

use std::path::{Path, PathBuf};

use fdelay_core::delay::{
    BoundedTanh, Coefficient, ConstantCoefficient, DelayKernel, InitialSegment, ScalarSin, SolveOptions,
};
use fdelay_core::fbm::SamplingMethod;
use fdelay_core::sensitivity::hurst_threshold;
use fdelay_core::{GridPath, UniformGrid};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SMOOTH_REGIME: &str = "smooth-density regime";
pub const EXISTENCE_REGIME: &str = "existence-only regime";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub hurst: f64,
    /// Final time `T`.
    pub horizon: f64,
    /// History length `h`.
    pub delay: f64,
    pub n_steps: usize,
    pub mc_paths: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub gamma: f64,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<SamplingMethod>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// K* cells used for Malliavin matrices (must divide `n_steps`).
    #[serde(default = "default_cells")]
    pub density_cells: usize,
    /// Times at which Malliavin matrices are reported; default `T/4, T/2, T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_times: Option<Vec<f64>>,
    /// Column stride of the exported sensitivity field.
    #[serde(default = "default_stride")]
    pub sensitivity_stride: usize,
    pub kernel: KernelSpec,
    pub sigma: SigmaSpec,
    pub xi: XiSpec,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    200
}

fn default_cells() -> usize {
    64
}

fn default_stride() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// `discrete`, `weighted` or `lebesgue`.
    pub kind: String,
    /// `[lag, weight]` pairs for `discrete`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lags: Option<Vec<[f64; 2]>>,
    /// Density samples on `[-h, 0]` for `weighted`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Vec<f64>>,
    /// Quadrature points for `lebesgue`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSpec {
    /// `constant`, `scalar-sin` or `bounded-tanh-matrix`.
    pub kind: String,
    #[serde(default)]
    pub params: Vec<f64>,
    /// `[n, d]`; defaults to `[1, 1]` (`[n, n]` for `bounded-tanh-matrix`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiSpec {
    /// `constant` or `affine` (`value + slope * theta` on `[-h, 0]`).
    pub kind: String,
    pub value: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<Vec<f64>>,
}

/// Everything a run needs, built from a validated config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub grid: UniformGrid,
    pub kernel: DelayKernel,
    pub sigma: Box<dyn Coefficient>,
    pub xi: InitialSegment,
    pub opts: SolveOptions,
    pub method: SamplingMethod,
}

impl std::fmt::Debug for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Experiment")
            .field("config", &self.config)
            .field("sigma", &self.sigma.name())
            .finish()
    }
}

pub fn regime_label(hurst: f64) -> &'static str {
    if hurst > hurst_threshold() {
        SMOOTH_REGIME
    } else {
        EXISTENCE_REGIME
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn regime(&self) -> &'static str {
        regime_label(self.hurst)
    }

    fn build_sigma(&self, errors: &mut Vec<String>) -> Option<Box<dyn Coefficient>> {
        let p = &self.sigma.params;
        match self.sigma.kind.as_str() {
            "constant" => {
                let [n, d] = self.sigma.dims.unwrap_or([1, 1]);
                let entries = if p.len() == 1 && n == d {
                    (0..n * n).map(|k| if k % (n + 1) == 0 { p[0] } else { 0.0 }).collect()
                } else {
                    p.clone()
                };
                match ConstantCoefficient::new(n, d, entries) {
                    Ok(c) => Some(Box::new(c)),
                    Err(e) => {
                        errors.push(format!("sigma.params: {e}"));
                        None
                    }
                }
            }
            "scalar-sin" => {
                if self.sigma.dims.is_some_and(|d| d != [1, 1]) {
                    errors.push("sigma.dims: scalar-sin is scalar".into());
                }
                if p.len() != 2 {
                    errors.push(format!("sigma.params: scalar-sin takes [a, b], got {} values", p.len()));
                    return None;
                }
                Some(Box::new(ScalarSin { a: p[0], b: p[1] }))
            }
            "bounded-tanh-matrix" => {
                let [n, d] = self.sigma.dims.unwrap_or([1, 1]);
                if n != d || n == 0 {
                    errors.push("sigma.dims: bounded-tanh-matrix needs n = d >= 1".into());
                    return None;
                }
                if p.len() != 3 {
                    errors.push(format!(
                        "sigma.params: bounded-tanh-matrix takes [s, b, rho], got {} values",
                        p.len()
                    ));
                    return None;
                }
                if !(p[0] > p[1].abs()) {
                    errors.push("sigma.params: bounded-tanh-matrix needs s > |b|".into());
                }
                Some(Box::new(BoundedTanh {
                    n,
                    s: p[0],
                    b: p[1],
                    rho: p[2],
                }))
            }
            other => {
                errors.push(format!(
                    "sigma.kind: unknown coefficient {other:?} (constant, scalar-sin, bounded-tanh-matrix)"
                ));
                None
            }
        }
    }

    fn build_kernel(&self, dt: Option<f64>, errors: &mut Vec<String>) -> Option<DelayKernel> {
        let k = &self.kernel;
        let built = match k.kind.as_str() {
            "discrete" => match &k.lags {
                Some(l) => DelayKernel::discrete(self.delay, l.iter().map(|[a, b]| (*a, *b)).collect()),
                None => {
                    errors.push("kernel.lags: required for a discrete kernel".into());
                    return None;
                }
            },
            "weighted" => match &k.density {
                Some(d) => DelayKernel::weighted(self.delay, d.clone()),
                None => {
                    errors.push("kernel.density: required for a weighted kernel".into());
                    return None;
                }
            },
            "lebesgue" => DelayKernel::lebesgue(self.delay, k.points.unwrap_or(17)),
            other => {
                errors.push(format!("kernel.kind: unknown kernel {other:?} (discrete, weighted, lebesgue)"));
                return None;
            }
        };
        let kernel = match built {
            Ok(k) => k,
            Err(e) => {
                errors.push(format!("kernel: {e}"));
                return None;
            }
        };
        if let Some(dt) = dt {
            if let Err(e) = kernel.stencil(dt) {
                errors.push(format!("kernel: {e}"));
                return None;
            }
        }
        Some(kernel)
    }

    /// Checks every field and builds the run objects; the error lists every
    /// failed field.
    pub fn validate(&self) -> Result<Experiment, CliError> {
        let mut errors = Vec::new();
        let (h, g, l) = (self.hurst, self.gamma, self.lambda);
        if !(h > 0.5 && h < 1.0) {
            errors.push(format!("hurst: must lie in (1/2, 1), got {h}"));
        }
        if !(g < h && g > 0.5) {
            errors.push(format!("gamma: must satisfy 1/2 < gamma < hurst, got {g}"));
        }
        if !(l > 0.5 && l < g) {
            errors.push(format!("lambda: must satisfy 1/2 < lambda < gamma, got {l}"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            errors.push(format!("horizon: must be positive, got {}", self.horizon));
        }
        if !(self.delay > 0.0 && self.delay.is_finite()) {
            errors.push(format!("delay: must be positive, got {}", self.delay));
        }
        if self.n_steps == 0 {
            errors.push("n_steps: must be at least 1".into());
        }
        if self.mc_paths == 0 {
            errors.push("mc_paths: must be at least 1".into());
        }
        if !(self.tol > 0.0) {
            errors.push(format!("tol: must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            errors.push("max_iter: must be at least 1".into());
        }
        if self.density_cells == 0 || !self.n_steps.is_multiple_of(self.density_cells.max(1)) {
            errors.push(format!(
                "density_cells: must divide n_steps ({}), got {}",
                self.n_steps, self.density_cells
            ));
        }
        if self.sensitivity_stride == 0 {
            errors.push("sensitivity_stride: must be at least 1".into());
        }

        let grid = UniformGrid::new(0.0, self.horizon, self.n_steps).ok();
        let dt = grid.map(|g| g.dt());
        if let (Some(dt), true) = (dt, self.delay > 0.0) {
            let steps = self.delay / dt;
            if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
                errors.push(format!(
                    "delay: {} is not a positive multiple of the grid step {dt}",
                    self.delay
                ));
            }
        }
        if let (Some(g), Some(times)) = (grid, &self.density_times) {
            let stride = self.n_steps / self.density_cells.max(1);
            for t in times {
                let on_grid = g.index_of(*t).is_some_and(|i| stride > 0 && i % stride == 0 && i > 0);
                if !on_grid {
                    errors.push(format!("density_times: {t} is not a positive node of the K* grid"));
                }
            }
        }
        let sigma = self.build_sigma(&mut errors);
        let kernel = self.build_kernel(dt, &mut errors);
        let n = sigma.as_ref().map(|s| s.dims().0);
        let xi = self.build_xi(dt, n, &mut errors);
        let method = self
            .method
            .unwrap_or_else(|| SamplingMethod::default_for(self.n_steps));

        if !errors.is_empty() {
            return Err(CliError::Validation(errors));
        }
        Ok(Experiment {
            config: self.clone(),
            grid: grid.expect("validated grid"),
            kernel: kernel.expect("validated kernel"),
            sigma: sigma.expect("validated sigma"),
            xi: xi.expect("validated xi"),
            opts: SolveOptions {
                gamma: self.gamma,
                lambda: self.lambda,
                tol: self.tol,
                max_iter: self.max_iter,
                window: None,
            },
            method,
        })
    }

    fn build_xi(&self, dt: Option<f64>, n: Option<usize>, errors: &mut Vec<String>) -> Option<InitialSegment> {
        let v = &self.xi.value;
        if let Some(n) = n {
            if v.len() != n {
                errors.push(format!("xi.value: needs {n} components, got {}", v.len()));
                return None;
            }
        }
        if v.iter().any(|x| !x.is_finite()) {
            errors.push("xi.value: must be finite".into());
            return None;
        }
        let dt = dt?;
        if !(self.delay > 0.0) {
            return None;
        }
        let result = match self.xi.kind.as_str() {
            "constant" => InitialSegment::constant(self.delay, dt, v),
            "affine" => {
                let slope = match &self.xi.slope {
                    Some(s) if s.len() == v.len() => s.clone(),
                    _ => {
                        errors.push("xi.slope: affine history needs one slope per component".into());
                        return None;
                    }
                };
                let steps = (self.delay / dt).round().max(1.0) as usize;
                UniformGrid::with_step(-self.delay, dt, steps).and_then(|g| {
                    let path = GridPath::from_fn(g, v.len(), |t, out| {
                        for (c, o) in out.iter_mut().enumerate() {
                            *o = v[c] + slope[c] * t;
                        }
                    });
                    InitialSegment::new(path, self.lambda.clamp(0.01, 1.0))
                })
            }
            other => {
                errors.push(format!("xi.kind: unknown history {other:?} (constant, affine)"));
                return None;
            }
        };
        match result {
            Ok(x) => Some(x),
            Err(e) => {
                errors.push(format!("xi: {e}"));
                None
            }
        }
    }

    /// `density_times` or `T/4, T/2, T`, as forward node indices.
    pub fn density_nodes(&self) -> Vec<usize> {
        match &self.density_times {
            Some(ts) => ts
                .iter()
                .filter_map(|t| {
                    UniformGrid::new(0.0, self.horizon, self.n_steps)
                        .ok()
                        .and_then(|g| g.index_of(*t))
                })
                .collect(),
            None => {
                let stride = self.n_steps / self.density_cells.max(1);
                let cells = self.density_cells;
                let mut v: Vec<usize> = [cells / 4, cells / 2, cells]
                    .iter()
                    .filter(|c| **c > 0)
                    .map(|c| c * stride)
                    .collect();
                v.dedup();
                v
            }
        }
    }
}
