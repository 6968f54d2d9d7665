//! Delay equations `y_t = xi_0 + int_0^t sigma(Z^y_u) dx_u`, where `Z^y_u` is the
//! segment of `y` on `[u - h, u]`, solved window by window with Picard
//! iteration. A method-of-steps solver serves as an independent check.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{GridPath, UniformGrid};
use crate::holder::holder_seminorm;
use crate::young::sewing_constant;

/// How the coefficient reads the past.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelVariant {
    /// `sum_k w_k Z(-r_k)` with lags `r_k` in `(0, h]`.
    Discrete { lags: Vec<(f64, f64)> },
    /// `int_{-h}^0 Z(theta) rho(theta) d theta` with `rho` sampled at
    /// `theta_m = -h + m h / (len - 1)`.
    Weighted { density: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayKernel {
    pub variant: KernelVariant,
    pub h: f64,
}

impl DelayKernel {
    pub fn discrete(h: f64, lags: Vec<(f64, f64)>) -> Result<Self> {
        let k = Self {
            variant: KernelVariant::Discrete { lags },
            h,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn weighted(h: f64, density: Vec<f64>) -> Result<Self> {
        let k = Self {
            variant: KernelVariant::Weighted { density },
            h,
        };
        k.validate()?;
        Ok(k)
    }

    /// Lebesgue measure on `[-h, 0]` sampled at `points` nodes.
    pub fn lebesgue(h: f64, points: usize) -> Result<Self> {
        Self::weighted(h, vec![1.0; points])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(invalid(format!("delay horizon must be positive, got {}", self.h)));
        }
        match &self.variant {
            KernelVariant::Discrete { lags } => {
                if lags.is_empty() {
                    return Err(invalid("discrete kernel needs at least one lag"));
                }
                for &(r, w) in lags {
                    if !(r > 0.0 && r <= self.h * (1.0 + 1e-12)) {
                        return Err(invalid(format!("lag {r} outside (0, {}]", self.h)));
                    }
                    if !w.is_finite() {
                        return Err(invalid(format!("lag weight {w} is not finite")));
                    }
                }
            }
            KernelVariant::Weighted { density } => {
                if density.len() < 2 {
                    return Err(invalid("weighted kernel needs at least two density samples"));
                }
                if density.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(invalid("density samples must be finite and non-negative"));
                }
            }
        }
        Ok(())
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.variant, KernelVariant::Discrete { .. })
    }

    /// Total weight the stencil assigns, i.e. `nu([-h, 0])` under the quadrature.
    pub fn mass(&self) -> f64 {
        match &self.variant {
            KernelVariant::Discrete { lags } => lags.iter().map(|l| l.1).sum(),
            KernelVariant::Weighted { density } => {
                trapezoid_weights(self.h, density).iter().sum()
            }
        }
    }

    /// `(steps back, weight)` pairs on a grid of step `dt`.
    pub fn stencil(&self, dt: f64) -> Result<Vec<(usize, f64)>> {
        let steps = |lag: f64| -> Result<usize> {
            let x = lag / dt;
            let k = x.round();
            if (x - k).abs() > 1e-9 * x.abs().max(1.0) {
                return Err(Error::LagNotAligned { lag, dt });
            }
            Ok(k as usize)
        };
        steps(self.h)?;
        match &self.variant {
            KernelVariant::Discrete { lags } => lags
                .iter()
                .map(|&(r, w)| Ok((steps(r)?, w)))
                .collect(),
            KernelVariant::Weighted { density } => {
                let m = density.len() - 1;
                let stride = steps(self.h / m as f64)?;
                Ok(trapezoid_weights(self.h, density)
                    .into_iter()
                    .enumerate()
                    .map(|(i, w)| ((m - i) * stride, w))
                    .collect())
            }
        }
    }

    /// Largest offset of the stencil in steps.
    pub fn horizon_steps(&self, dt: f64) -> Result<usize> {
        let x = self.h / dt;
        let k = x.round();
        if (x - k).abs() > 1e-9 * x.max(1.0) {
            return Err(Error::LagNotAligned { lag: self.h, dt });
        }
        Ok(k as usize)
    }
}

fn trapezoid_weights(h: f64, density: &[f64]) -> Vec<f64> {
    let m = density.len() - 1;
    let step = h / m as f64;
    density
        .iter()
        .enumerate()
        .map(|(i, rho)| {
            let end = i == 0 || i == m;
            rho * step * if end { 0.5 } else { 1.0 }
        })
        .collect()
}

/// A diffusion coefficient `sigma: R^n -> R^{n x d}`.
pub trait Coefficient: Send + Sync {
    /// `(n, d)`.
    fn dims(&self) -> (usize, usize);

    /// Row-major `n x d` matrix written into `out`.
    fn value(&self, z: &[f64], out: &mut [f64]);

    /// `d sigma_ij / d z_k` at index `(i * d + j) * n + k`.
    fn grad(&self, z: &[f64], out: &mut [f64]);

    /// `d^2 sigma_ij / d z_k d z_l` at `((i * d + j) * n + k) * n + l`, by
    /// central differences of [`Coefficient::grad`].
    fn hess(&self, z: &[f64], out: &mut [f64]) {
        let (n, d) = self.dims();
        let g = n * d * n;
        let mut zp = z.to_vec();
        let mut hi = vec![0.0; g];
        let mut lo = vec![0.0; g];
        for l in 0..n {
            let e = 1e-5 * z[l].abs().max(1.0);
            zp[l] = z[l] + e;
            self.grad(&zp, &mut hi);
            zp[l] = z[l] - e;
            self.grad(&zp, &mut lo);
            zp[l] = z[l];
            for idx in 0..g {
                out[idx * n + l] = (hi[idx] - lo[idx]) / (2.0 * e);
            }
        }
    }

    /// Bound `M` on the operator norm of `sigma`.
    fn bound_m(&self) -> f64;

    /// Bound on the norm of `sigma'`.
    fn grad_bound(&self) -> f64;

    /// `eps` with `sigma(a) sigma(b)^T >= eps Id`; zero when not claimed.
    fn nondeg_eps(&self) -> f64 {
        0.0
    }

    fn name(&self) -> String;
}

/// `sigma = c` for a fixed `n x d` matrix.
#[derive(Clone, Debug)]
pub struct ConstantCoefficient {
    n: usize,
    d: usize,
    c: Vec<f64>,
}

impl ConstantCoefficient {
    pub fn new(n: usize, d: usize, c: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 || c.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                actual: c.len(),
            });
        }
        Ok(Self { n, d, c })
    }

    pub fn scalar(c: f64) -> Self {
        Self {
            n: 1,
            d: 1,
            c: vec![c],
        }
    }

    pub fn matrix(&self) -> &[f64] {
        &self.c
    }
}

impl Coefficient for ConstantCoefficient {
    fn dims(&self) -> (usize, usize) {
        (self.n, self.d)
    }

    fn value(&self, _z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.c);
    }

    fn grad(&self, _z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn bound_m(&self) -> f64 {
        DMatrix::from_row_slice(self.n, self.d, &self.c)
            .singular_values()
            .max()
    }

    fn grad_bound(&self) -> f64 {
        0.0
    }

    /// Smallest eigenvalue of `c c^T`.
    fn nondeg_eps(&self) -> f64 {
        let c = DMatrix::from_row_slice(self.n, self.d, &self.c);
        (&c * c.transpose()).symmetric_eigenvalues().min().max(0.0)
    }

    fn name(&self) -> String {
        "constant".into()
    }
}

/// Scalar `sigma(z) = a + b sin z`.
#[derive(Clone, Copy, Debug)]
pub struct ScalarSin {
    pub a: f64,
    pub b: f64,
}

impl Coefficient for ScalarSin {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn value(&self, z: &[f64], out: &mut [f64]) {
        out[0] = self.a + self.b * z[0].sin();
    }

    fn grad(&self, z: &[f64], out: &mut [f64]) {
        out[0] = self.b * z[0].cos();
    }

    fn hess(&self, z: &[f64], out: &mut [f64]) {
        out[0] = -self.b * z[0].sin();
    }

    fn bound_m(&self) -> f64 {
        self.a.abs() + self.b.abs()
    }

    fn grad_bound(&self) -> f64 {
        self.b.abs()
    }

    fn nondeg_eps(&self) -> f64 {
        (self.a.abs() - self.b.abs()).max(0.0).powi(2)
    }

    fn name(&self) -> String {
        "scalar-sin".into()
    }
}

/// Diagonal `sigma_ii(z) = s + b tanh(z_i + rho sum_{k != i} z_k)`, `n = d`.
#[derive(Clone, Copy, Debug)]
pub struct BoundedTanh {
    pub n: usize,
    pub s: f64,
    pub b: f64,
    pub rho: f64,
}

impl BoundedTanh {
    fn arg(&self, z: &[f64], i: usize) -> f64 {
        let total: f64 = z.iter().sum();
        z[i] + self.rho * (total - z[i])
    }
}

impl Coefficient for BoundedTanh {
    fn dims(&self) -> (usize, usize) {
        (self.n, self.n)
    }

    fn value(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..self.n {
            out[i * self.n + i] = self.s + self.b * self.arg(z, i).tanh();
        }
    }

    fn grad(&self, z: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.fill(0.0);
        for i in 0..n {
            let sech2 = 1.0 - self.arg(z, i).tanh().powi(2);
            for k in 0..n {
                let du = if k == i { 1.0 } else { self.rho };
                out[(i * n + i) * n + k] = self.b * sech2 * du;
            }
        }
    }

    fn bound_m(&self) -> f64 {
        self.s.abs() + self.b.abs()
    }

    fn grad_bound(&self) -> f64 {
        self.b.abs() * (1.0 + self.rho.abs() * (self.n as f64 - 1.0))
    }

    fn nondeg_eps(&self) -> f64 {
        (self.s.abs() - self.b.abs()).max(0.0).powi(2)
    }

    fn name(&self) -> String {
        "bounded-tanh-matrix".into()
    }
}

type ValueFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A coefficient given by closures, mainly for tests and oracles.
pub struct FnCoefficient {
    n: usize,
    d: usize,
    value: Box<ValueFn>,
    grad: Box<ValueFn>,
    bound_m: f64,
    grad_bound: f64,
    label: String,
}

impl FnCoefficient {
    pub fn new(
        n: usize,
        d: usize,
        value: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        bound_m: f64,
        grad_bound: f64,
    ) -> Self {
        Self {
            n,
            d,
            value: Box::new(value),
            grad: Box::new(grad),
            bound_m,
            grad_bound,
            label: "closure".into(),
        }
    }

    /// Scalar `sigma(z) = a z`; unbounded, so windows fall back to their minimum.
    pub fn linear(a: f64) -> Self {
        let mut c = Self::new(
            1,
            1,
            move |z, out| out[0] = a * z[0],
            move |_, out| out[0] = a,
            f64::INFINITY,
            a.abs(),
        );
        c.label = format!("linear({a})");
        c
    }
}

impl Coefficient for FnCoefficient {
    fn dims(&self) -> (usize, usize) {
        (self.n, self.d)
    }

    fn value(&self, z: &[f64], out: &mut [f64]) {
        (self.value)(z, out)
    }

    fn grad(&self, z: &[f64], out: &mut [f64]) {
        (self.grad)(z, out)
    }

    fn bound_m(&self) -> f64 {
        self.bound_m
    }

    fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Spot-checks `|sigma| <= M` and, if claimed, `sigma(a) sigma(b)^T >= eps Id`
/// at `samples` random points of `[-radius, radius]^n`.
pub fn spot_check_coefficient(
    sigma: &dyn Coefficient,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<()> {
    let (n, d) = sigma.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<f64> { (0..n).map(|_| rng.random_range(-radius..=radius)).collect() };
    let eps = sigma.nondeg_eps();
    let m = sigma.bound_m();
    let mut va = vec![0.0; n * d];
    let mut vb = vec![0.0; n * d];
    for _ in 0..samples {
        let (a, b) = (draw(), draw());
        sigma.value(&a, &mut va);
        sigma.value(&b, &mut vb);
        let ma = DMatrix::from_row_slice(n, d, &va);
        let norm = ma.singular_values().max();
        if norm > m * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "{}: |sigma| = {norm} exceeds bound_M = {m}",
                sigma.name()
            )));
        }
        if eps > 0.0 {
            let mb = DMatrix::from_row_slice(n, d, &vb);
            let prod = &ma * mb.transpose();
            let sym = (&prod + prod.transpose()) * 0.5;
            let low = sym.symmetric_eigenvalues().min();
            if low < eps * (1.0 - 1e-9) {
                return Err(invalid(format!(
                    "{}: sigma(a) sigma(b)^T has eigenvalue {low} below nondeg_eps = {eps}",
                    sigma.name()
                )));
            }
        }
    }
    Ok(())
}

/// The initial condition `xi` on `[-h, 0]`.
#[derive(Clone, Debug)]
pub struct InitialSegment {
    pub path: GridPath,
    pub seminorm_lambda: f64,
    pub lambda: f64,
}

impl InitialSegment {
    pub fn new(path: GridPath, lambda: f64) -> Result<Self> {
        let seminorm_lambda = holder_seminorm(&path, lambda, 0, path.grid().n_steps())?.seminorm;
        Ok(Self {
            path,
            seminorm_lambda,
            lambda,
        })
    }

    /// `xi` constant equal to `value` on `[-h, 0]` with step `dt`.
    pub fn constant(h: f64, dt: f64, value: &[f64]) -> Result<Self> {
        let steps = (h / dt).round() as usize;
        let grid = UniformGrid::with_step(-h, dt, steps.max(1))?;
        let path = GridPath::from_fn(grid, value.len(), |_, out| out.copy_from_slice(value));
        Ok(Self {
            path,
            seminorm_lambda: 0.0,
            lambda: 1.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    pub fn last(&self) -> &[f64] {
        self.path.last()
    }
}

/// `sigma(Z)` for a segment `Z` on `[-h, 0]`.
pub fn eval_coefficient(
    seg: &GridPath,
    kernel: &DelayKernel,
    sigma: &dyn Coefficient,
) -> Result<Vec<f64>> {
    let (n, d) = sigma.dims();
    if seg.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: seg.dim(),
        });
    }
    let dt = seg.grid().dt();
    let p = kernel.horizon_steps(dt)?;
    if seg.grid().n_steps() != p || seg.grid().t_end().abs() > 1e-9 * kernel.h {
        return Err(Error::GridMismatch(format!(
            "segment must cover [-{}, 0], got {:?}",
            kernel.h,
            seg.grid()
        )));
    }
    let stencil = kernel.stencil(dt)?;
    let mut z = vec![0.0; n];
    aggregate(seg.values(), n, p, &stencil, &mut z);
    let mut out = vec![0.0; n * d];
    sigma.value(&z, &mut out);
    Ok(out)
}

/// `z = sum w y_{node - offset}` over node-major values.
pub(crate) fn aggregate(values: &[f64], n: usize, node: usize, stencil: &[(usize, f64)], z: &mut [f64]) {
    z.fill(0.0);
    for &(o, w) in stencil {
        let row = &values[(node - o) * n..(node - o + 1) * n];
        for (zi, yi) in z.iter_mut().zip(row) {
            *zi += w * yi;
        }
    }
}

/// `[4 M c ||x||_gamma]^{-1/gamma} ^ 1` with `c = (2^{gamma+lambda} - 2)^{-1}`.
pub fn window_epsilon(m: f64, gamma: f64, lambda: f64, x_seminorm: f64) -> f64 {
    let c = sewing_constant(gamma, lambda);
    (4.0 * m * c * x_seminorm).powf(-1.0 / gamma).min(1.0)
}

/// `[2 (1 + c) c_N ||x||_gamma]^{-1/gamma} ^ eps`.
pub fn contraction_eta(gamma: f64, lambda: f64, c_n: f64, x_seminorm: f64, eps: f64) -> f64 {
    let c = sewing_constant(gamma, lambda);
    (2.0 * (1.0 + c) * c_n * x_seminorm)
        .powf(-1.0 / gamma)
        .min(eps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub gamma: f64,
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Fixed window length; `None` uses the contraction window clamped to `4 dt`.
    pub window: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            lambda: 0.7,
            tol: 1e-10,
            max_iter: 200,
            window: None,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.5 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma must lie in (1/2, 1], got {}", self.gamma)));
        }
        if !(self.lambda > 0.0 && self.lambda <= self.gamma) {
            return Err(invalid(format!(
                "lambda must lie in (0, gamma], got {}",
                self.lambda
            )));
        }
        if self.gamma + self.lambda <= 1.0 {
            return Err(invalid("gamma + lambda must exceed 1"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        if let Some(w) = self.window {
            if !(w > 0.0) {
                return Err(invalid(format!("window must be positive, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub start: f64,
    pub end: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Residual after each iteration.
    pub history: Vec<f64>,
    pub c_n: f64,
    pub eta: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    /// Solution on `[-h, T]`.
    pub y: GridPath,
    pub windows: Vec<WindowRecord>,
    pub epsilon_used: f64,
    pub eta_used: f64,
    pub seminorm_lambda: f64,
    pub x_seminorm_gamma: f64,
}

/// JSON view of a [`SolveReport`] without the path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveSummary {
    pub epsilon_used: f64,
    pub eta_used: f64,
    pub seminorm_lambda: f64,
    pub x_seminorm_gamma: f64,
    pub windows: Vec<WindowRecord>,
}

impl SolveReport {
    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            epsilon_used: self.epsilon_used,
            eta_used: self.eta_used,
            seminorm_lambda: self.seminorm_lambda,
            x_seminorm_gamma: self.x_seminorm_gamma,
            windows: self.windows.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.summary()).map_err(|e| Error::Format(e.to_string()))
    }

    /// The solution restricted to `[0, T]`.
    pub fn forward(&self) -> Result<GridPath> {
        let p = self.y.grid().index_of(0.0).unwrap_or(0);
        if p == 0 {
            return Ok(self.y.clone());
        }
        self.y.slice(p, self.y.grid().n_steps())
    }
}

/// Grid, horizon offset and stencil shared by both solvers.
struct Setup {
    grid: UniformGrid,
    p: usize,
    n: usize,
    d: usize,
    stencil: Vec<(usize, f64)>,
}

fn setup(
    x: &GridPath,
    xi: &InitialSegment,
    sigma: &dyn Coefficient,
    kernel: &DelayKernel,
) -> Result<Setup> {
    kernel.validate()?;
    let (n, d) = sigma.dims();
    if x.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x.dim(),
        });
    }
    if xi.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: xi.dim(),
        });
    }
    let dt = x.grid().dt();
    let p = kernel.horizon_steps(dt)?;
    let stencil = kernel.stencil(dt)?;
    let xg = xi.path.grid();
    let scale = x.grid().t_end() - x.grid().t_start();
    if xg.n_steps() != p
        || (xg.dt() - dt).abs() > 1e-9 * dt
        || (xg.t_end() - x.grid().t_start()).abs() > 1e-9 * scale
    {
        return Err(Error::GridMismatch(format!(
            "initial segment {:?} must have {p} steps of {dt} ending at {}",
            xg,
            x.grid().t_start()
        )));
    }
    let grid = UniformGrid::new(x.grid().t_start() - kernel.h, x.grid().t_end(), p + x.grid().n_steps())?;
    Ok(Setup {
        grid,
        p,
        n,
        d,
        stencil,
    })
}

/// `y_{j+1} = y_j + sigma(Z_j) (x_{j+1} - x_j)` with `Z_j` aggregated from `src`
/// for `j` in `from..to` (indices on the full grid); writes into `dst`.
#[allow(clippy::too_many_arguments)]
fn sweep(
    s: &Setup,
    x: &GridPath,
    sigma: &dyn Coefficient,
    src: &[f64],
    dst: &mut [f64],
    from: usize,
    to: usize,
    scratch: &mut (Vec<f64>, Vec<f64>),
) {
    let (n, d) = (s.n, s.d);
    let (z, m) = scratch;
    for j in from..to {
        aggregate(src, n, j, &s.stencil, z);
        sigma.value(z, m);
        let (dx0, dx1) = (x.at(j - s.p), x.at(j + 1 - s.p));
        for i in 0..n {
            let mut inc = 0.0;
            for l in 0..d {
                inc += m[i * d + l] * (dx1[l] - dx0[l]);
            }
            dst[(j + 1) * n + i] = dst[j * n + i] + inc;
        }
    }
}

/// Windowed Picard solver.
///
/// Each window `[a, a + eta]` iterates the left-point Young map from the
/// constant guess `y_a` until the `lambda`-seminorm of successive differences
/// on the window is at most `tol`.
pub fn solve_delay(
    x: &GridPath,
    xi: &InitialSegment,
    sigma: &dyn Coefficient,
    kernel: &DelayKernel,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    let s = setup(x, xi, sigma, kernel)?;
    let (n, p) = (s.n, s.p);
    let dt = s.grid.dt();
    let total = s.grid.n_steps();

    let x_sem = holder_seminorm(x, opts.gamma, 0, x.grid().n_steps())?.seminorm;
    let m = sigma.bound_m().max(sigma.grad_bound());
    let eps = window_epsilon(m, opts.gamma, opts.lambda, x_sem);

    let mut y = vec![0.0; s.grid.n_nodes() * n];
    y[..(p + 1) * n].copy_from_slice(xi.path.values());
    let mut next = y.clone();
    let mut scratch = (vec![0.0; n], vec![0.0; n * s.d]);

    let mut windows = Vec::new();
    let mut eta_used = f64::INFINITY;
    let mut prev_sem = xi.seminorm_lambda;
    let mut a = p;
    while a < total {
        let c_n = 2.0 * m * (1.0 + prev_sem);
        let eta = contraction_eta(opts.gamma, opts.lambda, c_n, x_sem, eps);
        eta_used = eta_used.min(eta);
        let len = match opts.window {
            Some(w) => ((w / dt).round() as usize).max(1),
            None => ((eta / dt).floor() as usize).max(4),
        };
        let b = (a + len).min(total);

        for j in a + 1..=b {
            y.copy_within(a * n..(a + 1) * n, j * n);
        }
        let mut history = Vec::new();
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            next[a * n..(a + 1) * n].copy_from_slice(&y[a * n..(a + 1) * n]);
            sweep(&s, x, sigma, &y, &mut next, a, b, &mut scratch);
            iterations += 1;
            if let Some(bad) = next[(a + 1) * n..(b + 1) * n].iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    window: windows.len(),
                    node: a + 1 + bad / n,
                });
            }
            let diff: Vec<f64> = next[a * n..(b + 1) * n]
                .iter()
                .zip(&y[a * n..(b + 1) * n])
                .map(|(u, v)| u - v)
                .collect();
            let wgrid = UniformGrid::new(s.grid.node(a), s.grid.node(b), b - a)?;
            residual = holder_seminorm(&GridPath::new(wgrid, n, diff)?, opts.lambda, 0, b - a)?.seminorm;
            history.push(residual);
            y[a * n..(b + 1) * n].copy_from_slice(&next[a * n..(b + 1) * n]);
            if residual <= opts.tol {
                break;
            }
        }
        if residual > opts.tol {
            return Err(Error::MaxIterations {
                window: windows.len(),
                iterations,
                residual,
            });
        }
        let ypath = GridPath::new(s.grid, n, y.clone())?;
        prev_sem = holder_seminorm(&ypath, opts.lambda, a, b)?.seminorm;
        windows.push(WindowRecord {
            start: s.grid.node(a),
            end: s.grid.node(b),
            iterations,
            residual,
            history,
            c_n,
            eta,
        });
        a = b;
    }

    let y = GridPath::new(s.grid, n, y)?;
    let seminorm_lambda = holder_seminorm(&y, opts.lambda, 0, total)?.seminorm;
    Ok(SolveReport {
        y,
        windows,
        epsilon_used: eps,
        eta_used,
        seminorm_lambda,
        x_seminorm_gamma: x_sem,
    })
}

/// Segment-by-segment solver for discrete kernels.
///
/// Segments have the length of the smallest lag, so every value of `sigma`
/// needed on a segment is read from segments already computed. Integrals use
/// the trapezoid rule `sum (sigma_j + sigma_{j+1}) / 2 dx_j`, a different
/// discretization from [`solve_delay`] with the same limit.
pub fn method_of_steps(
    x: &GridPath,
    xi: &InitialSegment,
    sigma: &dyn Coefficient,
    kernel: &DelayKernel,
) -> Result<GridPath> {
    if !kernel.is_discrete() {
        return Err(Error::Unsupported(
            "method of steps needs a discrete-lag kernel".into(),
        ));
    }
    let s = setup(x, xi, sigma, kernel)?;
    let (n, d, p) = (s.n, s.d, s.p);
    let total = s.grid.n_steps();
    let seg = s.stencil.iter().map(|o| o.0).min().unwrap_or(1).max(1);

    let mut y = vec![0.0; s.grid.n_nodes() * n];
    y[..(p + 1) * n].copy_from_slice(xi.path.values());
    let mut z = vec![0.0; n];
    let mut a = p;
    while a < total {
        let b = (a + seg).min(total);
        // Frozen data: sigma at every node of the segment.
        let sig: Vec<Vec<f64>> = (a..=b)
            .map(|j| {
                aggregate(&y, n, j, &s.stencil, &mut z);
                let mut m = vec![0.0; n * d];
                sigma.value(&z, &mut m);
                m
            })
            .collect();
        for j in a..b {
            let (m0, m1) = (&sig[j - a], &sig[j + 1 - a]);
            let (dx0, dx1) = (x.at(j - p), x.at(j + 1 - p));
            for i in 0..n {
                let mut inc = 0.0;
                for l in 0..d {
                    inc += 0.5 * (m0[i * d + l] + m1[i * d + l]) * (dx1[l] - dx0[l]);
                }
                y[(j + 1) * n + i] = y[j * n + i] + inc;
            }
        }
        a = b;
    }
    GridPath::new(s.grid, n, y)
}

/// `||y||_lambda / max[||xi||_lambda, ||x||_gamma^{lambda/(gamma+lambda-1)}, ||x||_gamma]`.
pub fn moment_bound_check(
    report: &SolveReport,
    x: &GridPath,
    xi: &InitialSegment,
    gamma: f64,
    lambda: f64,
) -> Result<f64> {
    if gamma + lambda <= 1.0 {
        return Err(invalid("gamma + lambda must exceed 1"));
    }
    let y_sem = holder_seminorm(&report.y, lambda, 0, report.y.grid().n_steps())?.seminorm;
    let xi_sem = holder_seminorm(&xi.path, lambda, 0, xi.path.grid().n_steps())?.seminorm;
    let x_sem = holder_seminorm(x, gamma, 0, x.grid().n_steps())?.seminorm;
    let scale = xi_sem
        .max(x_sem.powf(lambda / (gamma + lambda - 1.0)))
        .max(x_sem);
    if scale == 0.0 {
        return Ok(if y_sem == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(y_sem / scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id_driver(t_end: f64, n: usize) -> GridPath {
        GridPath::from_scalar_fn(UniformGrid::new(0.0, t_end, n).unwrap(), |t| t)
    }

    #[test]
    fn eval_constant_segment_scales_by_mass() {
        let g = UniformGrid::new(-1.0, 0.0, 16).unwrap();
        let seg = GridPath::from_scalar_fn(g, |_| 0.3);
        let sig = FnCoefficient::new(1, 1, |z, o| o[0] = z[0], |_, o| o[0] = 1.0, 1.0, 1.0);
        let disc = DelayKernel::discrete(1.0, vec![(0.25, 2.0), (1.0, 0.5)]).unwrap();
        let v = eval_coefficient(&seg, &disc, &sig).unwrap();
        assert!((v[0] - 2.5 * 0.3).abs() < 1e-15);
        let w = DelayKernel::weighted(1.0, vec![1.0, 2.0, 3.0, 2.0, 1.0]).unwrap();
        let v = eval_coefficient(&seg, &w, &sig).unwrap();
        assert!((v[0] - w.mass() * 0.3).abs() < 1e-15);
    }

    #[test]
    fn eval_point_and_lebesgue() {
        let g = UniformGrid::new(-1.0, 0.0, 64).unwrap();
        let seg = GridPath::from_scalar_fn(g, |t| t);
        let sig = ScalarSin { a: 1.0, b: 0.5 };
        let k = DelayKernel::discrete(1.0, vec![(0.375, 1.0)]).unwrap();
        let v = eval_coefficient(&seg, &k, &sig).unwrap();
        assert!((v[0] - (1.0 + 0.5 * (-0.375f64).sin())).abs() < 1e-15);
        let leb = DelayKernel::lebesgue(1.0, 65).unwrap();
        let v = eval_coefficient(&seg, &leb, &sig).unwrap();
        assert!((v[0] - (1.0 + 0.5 * (-0.5f64).sin())).abs() < g.dt().powi(2));
    }

    #[test]
    fn misaligned_lag_is_rejected() {
        let g = UniformGrid::new(-1.0, 0.0, 10).unwrap();
        let seg = GridPath::from_scalar_fn(g, |t| t);
        let k = DelayKernel::discrete(1.0, vec![(0.33, 1.0)]).unwrap();
        let err = eval_coefficient(&seg, &k, &ScalarSin { a: 1.0, b: 0.0 }).unwrap_err();
        assert!(matches!(err, Error::LagNotAligned { .. }));
        assert!(DelayKernel::discrete(1.0, vec![(1.5, 1.0)]).is_err());
        assert!(DelayKernel::discrete(1.0, vec![(0.0, 1.0)]).is_err());
        assert!(DelayKernel::weighted(1.0, vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn epsilon_and_eta_formulas() {
        assert!(window_epsilon(1.0, 0.75, 0.75, 1e12) < 1e-10);
        let c = sewing_constant(0.75, 0.75);
        let x = 1.0 / (4.0 * c);
        assert!((window_epsilon(1.0, 0.75, 0.75, x) - 1.0).abs() < 1e-12);
        assert_eq!(window_epsilon(1.0, 0.75, 0.75, 0.1 * x), 1.0);
        // independent evaluation: 8 / (2^1.5 - 2) = 9.65685..., ^(-4/3)
        let want = (8.0 / (2f64.powf(1.5) - 2.0)).powf(-4.0 / 3.0);
        assert!((window_epsilon(1.0, 0.75, 0.75, 2.0) - want).abs() < 1e-14);
        assert!((want - 0.048628).abs() < 1e-6);

        let eta = contraction_eta(0.75, 0.75, 2.0, 1.0, 1.0);
        let want = (4.0 * (1.0 + 1.0 / (2f64.powf(1.5) - 2.0))).powf(-4.0 / 3.0);
        assert!((eta - want).abs() < 1e-14);
        assert_eq!(contraction_eta(0.75, 0.75, 2.0, 1.0, 1e-3), 1e-3);
        assert!(contraction_eta(0.75, 0.75, 4.0, 1.0, 1.0) < eta);
    }

    #[test]
    fn builtin_coefficients_satisfy_their_claims() {
        spot_check_coefficient(&ScalarSin { a: 1.0, b: 0.5 }, 200, 10.0, 1).unwrap();
        let t = BoundedTanh {
            n: 2,
            s: 1.0,
            b: 0.5,
            rho: 0.3,
        };
        assert!((t.nondeg_eps() - 0.25).abs() < 1e-15);
        spot_check_coefficient(&t, 200, 10.0, 2).unwrap();
        let c = ConstantCoefficient::new(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((c.nondeg_eps() - 1.0).abs() < 1e-12);
        assert!((c.bound_m() - 2.0).abs() < 1e-12);
        spot_check_coefficient(&c, 20, 1.0, 3).unwrap();
        let liar = FnCoefficient::new(1, 1, |z, o| o[0] = z[0], |_, o| o[0] = 1.0, 1.0, 1.0);
        assert!(spot_check_coefficient(&liar, 50, 10.0, 4).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let t = BoundedTanh {
            n: 3,
            s: 1.0,
            b: 0.5,
            rho: 0.2,
        };
        let z = [0.3, -0.7, 1.1];
        let mut g = vec![0.0; 27];
        t.grad(&z, &mut g);
        let (mut hi, mut lo) = (vec![0.0; 9], vec![0.0; 9]);
        for k in 0..3 {
            let mut zp = z;
            zp[k] += 1e-6;
            t.value(&zp, &mut hi);
            zp[k] -= 2e-6;
            t.value(&zp, &mut lo);
            for ij in 0..9 {
                let fd = (hi[ij] - lo[ij]) / 2e-6;
                assert!((fd - g[ij * 3 + k]).abs() < 1e-8);
            }
        }
        let s = ScalarSin { a: 1.0, b: 0.5 };
        let mut h = [0.0];
        s.hess(&[0.4], &mut h);
        let mut hd = [0.0];
        FnCoefficient::new(1, 1, |z, o| o[0] = 1.0 + 0.5 * z[0].sin(), |z, o| o[0] = 0.5 * z[0].cos(), 1.5, 0.5)
            .hess(&[0.4], &mut hd);
        assert!((h[0] - hd[0]).abs() < 1e-8);
    }

    #[test]
    fn zero_and_constant_coefficients() {
        let x = GridPath::from_scalar_fn(UniformGrid::new(0.0, 1.0, 64).unwrap(), |t| (7.0 * t).sin());
        let xi = InitialSegment::constant(0.5, 1.0 / 64.0, &[2.0]).unwrap();
        let k = DelayKernel::discrete(0.5, vec![(0.25, 1.0)]).unwrap();
        let r = solve_delay(&x, &xi, &ConstantCoefficient::scalar(0.0), &k, &SolveOptions::default()).unwrap();
        assert!(r.forward().unwrap().values().iter().all(|v| *v == 2.0));
        let r = solve_delay(&x, &xi, &ConstantCoefficient::scalar(1.5), &k, &SolveOptions::default()).unwrap();
        let f = r.forward().unwrap();
        for i in 0..=64 {
            assert!((f.at(i)[0] - (2.0 + 1.5 * (x.at(i)[0] - x.at(0)[0]))).abs() < 1e-13);
        }
        assert_eq!(r.y.slice(0, 32).unwrap().values(), xi.path.values());
    }

    /// `1 + t` on `[0, r]`, `1 + t + (t - r)^2 / 2` on `[r, 2r]`.
    fn linear_oracle(t: f64, r: f64) -> f64 {
        if t <= r {
            1.0 + t
        } else {
            1.0 + t + (t - r).powi(2) / 2.0
        }
    }

    #[test]
    fn linear_delay_matches_method_of_steps_formula() {
        let r = 0.5;
        let n = 256;
        let x = id_driver(2.0 * r, n);
        let dt = x.grid().dt();
        let xi = InitialSegment::constant(r, dt, &[1.0]).unwrap();
        let k = DelayKernel::discrete(r, vec![(r, 1.0)]).unwrap();
        let sig = FnCoefficient::linear(1.0);
        let rep = solve_delay(&x, &xi, &sig, &k, &SolveOptions::default()).unwrap();
        let mos = method_of_steps(&x, &xi, &sig, &k).unwrap();
        let p = 128;
        for i in 0..=n {
            let t = x.grid().node(i);
            assert!((rep.y.at(i + p)[0] - linear_oracle(t, r)).abs() <= 10.0 * dt);
            assert!((mos.at(i + p)[0] - linear_oracle(t, r)).abs() <= 10.0 * dt);
        }
    }

    #[test]
    fn method_of_steps_rejects_weighted_kernel() {
        let x = id_driver(1.0, 16);
        let xi = InitialSegment::constant(0.5, 1.0 / 16.0, &[1.0]).unwrap();
        let k = DelayKernel::lebesgue(0.5, 9).unwrap();
        let e = method_of_steps(&x, &xi, &ScalarSin { a: 1.0, b: 0.2 }, &k).unwrap_err();
        assert!(matches!(e, Error::Unsupported(_)));
    }

    fn rough(n: usize, t_end: f64) -> GridPath {
        GridPath::from_scalar_fn(UniformGrid::new(0.0, t_end, n).unwrap(), |t| {
            (0..12)
                .map(|k| {
                    let b = 2f64.powi(k);
                    b.powf(-0.75) * (b * 3.0 * t + 0.4 * k as f64).sin()
                })
                .sum()
        })
    }

    #[test]
    fn picard_residuals_halve() {
        let x = rough(512, 1.0);
        let dt = x.grid().dt();
        let xi = InitialSegment::constant(0.25, dt, &[0.5]).unwrap();
        let k = DelayKernel::lebesgue(0.25, 33).unwrap();
        let opts = SolveOptions {
            tol: 1e-13,
            ..SolveOptions::default()
        };
        let rep = solve_delay(&x, &xi, &ScalarSin { a: 1.0, b: 0.5 }, &k, &opts).unwrap();
        for w in &rep.windows {
            assert!(w.residual <= 1e-13);
            for pair in w.history.windows(2) {
                if pair[0] > 1e-12 {
                    assert!(pair[1] <= 0.5 * pair[0], "{:?}", w.history);
                }
            }
        }
        let json = rep.to_json().unwrap();
        assert!(json.contains("epsilon_used") && json.contains("windows"));
    }

    #[test]
    fn flow_property_with_aligned_windows() {
        let x = rough(256, 1.0);
        let dt = x.grid().dt();
        let h = 0.25;
        let xi = InitialSegment::constant(h, dt, &[0.5]).unwrap();
        let k = DelayKernel::discrete(h, vec![(0.125, 0.6), (0.25, 0.4)]).unwrap();
        let sig = ScalarSin { a: 1.0, b: 0.5 };
        let opts = SolveOptions {
            window: Some(8.0 * dt),
            ..SolveOptions::default()
        };
        let full = solve_delay(&x, &xi, &sig, &k, &opts).unwrap();
        let first = solve_delay(&x.slice(0, 128).unwrap(), &xi, &sig, &k, &opts).unwrap();
        // history on [0.5 - h, 0.5] from the first run
        let hist = first.y.slice(128 + 64 - 64, 128 + 64).unwrap();
        let xi2 = InitialSegment::new(hist, 0.7).unwrap();
        let second = solve_delay(&x.slice(128, 256).unwrap(), &xi2, &sig, &k, &opts).unwrap();
        for i in 0..=128 {
            assert_eq!(full.y.at(64 + i), first.y.at(64 + i));
            assert_eq!(full.y.at(64 + 128 + i), second.y.at(64 + i));
        }
    }

    #[test]
    fn lipschitz_in_the_driver() {
        let x = rough(256, 1.0);
        let bump = GridPath::from_scalar_fn(*x.grid(), |t| 1e-6 * (2.0 * t).sin());
        let x2 = GridPath::new(
            *x.grid(),
            1,
            x.values().iter().zip(bump.values()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let dt = x.grid().dt();
        let xi = InitialSegment::constant(0.25, dt, &[0.0]).unwrap();
        let k = DelayKernel::lebesgue(0.25, 17).unwrap();
        let sig = ScalarSin { a: 1.0, b: 0.5 };
        let o = SolveOptions::default();
        let a = solve_delay(&x, &xi, &sig, &k, &o).unwrap();
        let b = solve_delay(&x2, &xi, &sig, &k, &o).unwrap();
        let gap = a.y.sup_distance(&b.y).unwrap();
        let dx = holder_seminorm(&bump, 0.7, 0, 256).unwrap().seminorm;
        assert!(gap > 0.0 && gap < 50.0 * dx, "{gap} vs {dx}");
    }

    #[test]
    fn dimension_and_grid_errors() {
        let x = id_driver(1.0, 16);
        let xi = InitialSegment::constant(0.5, 1.0 / 16.0, &[1.0, 2.0]).unwrap();
        let k = DelayKernel::discrete(0.5, vec![(0.5, 1.0)]).unwrap();
        let e = solve_delay(&x, &xi, &ScalarSin { a: 1.0, b: 0.1 }, &k, &SolveOptions::default());
        assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
        let xi = InitialSegment::constant(0.5, 1.0 / 32.0, &[1.0]).unwrap();
        let e = solve_delay(&x, &xi, &ScalarSin { a: 1.0, b: 0.1 }, &k, &SolveOptions::default());
        assert!(matches!(e, Err(Error::GridMismatch(_))));
    }

    #[test]
    fn max_iterations_reported() {
        let x = rough(64, 1.0);
        let xi = InitialSegment::constant(0.25, 1.0 / 64.0, &[0.5]).unwrap();
        let k = DelayKernel::lebesgue(0.25, 17).unwrap();
        let opts = SolveOptions {
            max_iter: 1,
            tol: 1e-15,
            ..SolveOptions::default()
        };
        let e = solve_delay(&x, &xi, &ScalarSin { a: 1.0, b: 0.5 }, &k, &opts).unwrap_err();
        assert!(matches!(e, Error::MaxIterations { .. }));
        assert!(e.is_numerical());
    }

    #[test]
    fn moment_ratio_for_trivial_cases() {
        let x = rough(128, 1.0);
        let g = UniformGrid::new(-0.25, 0.0, 32).unwrap();
        let xi = InitialSegment::new(GridPath::from_scalar_fn(g, |t| 1.0 + t), 0.7).unwrap();
        let k = DelayKernel::discrete(0.25, vec![(0.25, 1.0)]).unwrap();
        let o = SolveOptions::default();
        let zero = solve_delay(&x, &xi, &ConstantCoefficient::scalar(0.0), &k, &o).unwrap();
        let r = moment_bound_check(&zero, &x, &xi, 0.7, 0.7).unwrap();
        assert!(r > 0.0 && r <= 1.0);

        // sigma = c with x = id: y is piecewise linear with slopes 1 and c.
        let id = id_driver(1.0, 128);
        let c = ConstantCoefficient::scalar(3.0);
        let rep = solve_delay(&id, &xi, &c, &k, &o).unwrap();
        let r = moment_bound_check(&rep, &id, &xi, 0.7, 0.7).unwrap();
        // ||y||_0.7 = 3 (steepest over the longest span: slope 3 on [0,1]);
        // ||xi||_0.7 = 0.25^0.3, ||x||_0.7 = 1.
        let want = 3.0 / (0.25f64.powf(0.3)).max(1.0);
        assert!((r - want).abs() < 1e-9, "{r} vs {want}");
    }
}
