//! Fractional Brownian motion: covariance, exact grid samplers, the Volterra
//! kernel `K_H` and a quadrature realization of the operator `K*_H`, through
//! which the Cameron–Martin inner product is computed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{GridPath, UniformGrid};
use crate::quad::{adaptive, gl8};

/// `E[B_s B_t] = (s^{2H} + t^{2H} - |t-s|^{2H}) / 2`.
pub fn covariance(s: f64, t: f64, hurst: f64) -> f64 {
    let e = 2.0 * hurst;
    0.5 * (s.abs().powf(e) + t.abs().powf(e) - (t - s).abs().powf(e))
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(k: usize, hurst: f64) -> f64 {
    let e = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
}

fn check_sampler_hurst(hurst: f64) -> Result<()> {
    if !(0.5..1.0).contains(&hurst) {
        return Err(invalid(format!(
            "Hurst parameter must lie in [1/2, 1) for sampling, got {hurst}"
        )));
    }
    Ok(())
}

/// Hurst parameter in `(1/2, 1)` with the kernel normalization `c_H`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HurstParams {
    pub hurst: f64,
    pub c_h: f64,
}

impl HurstParams {
    /// Calibrates `c_H` so that `R_H(1, 1/2) = int_0^{1/2} K(1,r) K(1/2,r) dr`.
    pub fn new(hurst: f64) -> Result<Self> {
        if !(hurst > 0.5 && hurst < 1.0) {
            return Err(invalid(format!(
                "kernel representation needs 1/2 < H < 1, got {hurst}"
            )));
        }
        let unit = Self { hurst, c_h: 1.0 };
        let raw = unit.reproduction(1.0, 0.5)?;
        Ok(Self {
            hurst,
            c_h: (covariance(0.5, 1.0, hurst) / raw).sqrt(),
        })
    }

    /// `int_0^{min(t,s)} K(t,r) K(s,r) dr` by adaptive quadrature.
    pub fn reproduction(&self, t: f64, s: f64) -> Result<f64> {
        let (hi, lo) = if t >= s { (t, s) } else { (s, t) };
        if lo <= 0.0 {
            return Ok(0.0);
        }
        let h = self.hurst;
        // r = lo * w^m flattens the r^{1-2H} singularity at zero.
        let m = 1.0 / (2.0 - 2.0 * h);
        let mut failure = None;
        let value = adaptive(
            |w| {
                let r = lo * w.powf(m);
                let jac = lo * m * w.powf(m - 1.0);
                if r <= 0.0 || r >= lo {
                    return 0.0;
                }
                match (self.kernel_raw(hi, r), self.kernel_raw(lo, r)) {
                    (Ok(a), Ok(b)) => a * b * jac,
                    (Err(e), _) | (_, Err(e)) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                }
            },
            0.0,
            1.0,
            1e-13,
            1e-11,
        )?;
        match failure {
            Some(e) => Err(e),
            None => Ok(value),
        }
    }

    /// `c_H s^{1/2-H} int_s^t (u-s)^{H-3/2} u^{H-1/2} du` for `0 < s <= t`.
    fn kernel_raw(&self, t: f64, s: f64) -> Result<f64> {
        if t <= s {
            return Ok(0.0);
        }
        Ok(self.c_h * s.powf(0.5 - self.hurst) * substituted_integral(self.hurst, s, s, t)?)
    }

    /// `d/dr K(r, s) = c_H (r/s)^{H-1/2} (r-s)^{H-3/2}` for `r > s > 0`.
    pub fn kernel_dr(&self, r: f64, s: f64) -> f64 {
        let h = self.hurst;
        self.c_h * (r / s).powf(h - 0.5) * (r - s).powf(h - 1.5)
    }
}

/// `int_a^b (u-s)^{H-3/2} u^{H-1/2} du` for `s <= a < b`, via
/// `u = s + v^{1/(H-1/2)}`, which turns the integrand into
/// `(s + v^p)^{H-1/2} / (H - 1/2)`.
fn substituted_integral(hurst: f64, s: f64, a: f64, b: f64) -> Result<f64> {
    let alpha = hurst - 0.5;
    let p = 1.0 / alpha;
    let v0 = (a - s).max(0.0).powf(alpha);
    let v1 = (b - s).powf(alpha);
    let val = adaptive(|v| (s + v.powf(p)).powf(alpha), v0, v1, 1e-15, 1e-12)?;
    Ok(val / alpha)
}

/// The Volterra kernel `K_H(t, s)` for `0 < s < t`.
pub fn kernel_k(t: f64, s: f64, params: &HurstParams) -> Result<f64> {
    if s <= 0.0 {
        return Err(invalid(format!("K_H(t, s) is singular at s = {s}")));
    }
    if s >= t {
        return Err(invalid(format!("K_H(t, s) needs s < t, got s = {s}, t = {t}")));
    }
    params.kernel_raw(t, s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    Cholesky,
    Circulant,
}

impl SamplingMethod {
    /// Cholesky up to 2048 steps, circulant embedding above.
    pub fn default_for(n_steps: usize) -> Self {
        if n_steps <= 2048 {
            SamplingMethod::Cholesky
        } else {
            SamplingMethod::Circulant
        }
    }
}

enum Factor {
    /// Packed lower-triangular Cholesky factor of the increment covariance.
    Cholesky(Vec<f64>),
    /// `sqrt(lambda_k / 2n)` for the circulant eigenvalues.
    Circulant(Vec<f64>),
}

/// Exact sampler of fBm on a grid starting at zero; precomputes its factorization.
pub struct FbmSampler {
    grid: UniformGrid,
    hurst: f64,
    method: SamplingMethod,
    factor: Factor,
}

impl FbmSampler {
    pub fn new(grid: UniformGrid, hurst: f64, method: SamplingMethod) -> Result<Self> {
        check_sampler_hurst(hurst)?;
        if grid.t_start() != 0.0 {
            return Err(invalid("fBm grids must start at t = 0"));
        }
        let n = grid.n_steps();
        let factor = match method {
            SamplingMethod::Cholesky => Factor::Cholesky(cholesky_toeplitz(n, hurst)?),
            SamplingMethod::Circulant => Factor::Circulant(circulant_factor(n, hurst)?),
        };
        Ok(Self {
            grid,
            hurst,
            method,
            factor,
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn method(&self) -> SamplingMethod {
        self.method
    }

    /// Unit-step fGn from the given stream.
    fn noise(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.grid.n_steps();
        match &self.factor {
            Factor::Cholesky(l) => {
                let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                (0..n)
                    .map(|i| {
                        let row = &l[i * (i + 1) / 2..(i + 1) * (i + 2) / 2];
                        row.iter().zip(&z).map(|(a, b)| a * b).sum()
                    })
                    .collect()
            }
            Factor::Circulant(sq) => {
                let m = sq.len();
                let mut a = vec![Complex::new(0.0, 0.0); m];
                a[0] = Complex::new(sq[0] * Distribution::<f64>::sample(&StandardNormal, rng), 0.0);
                a[n] = Complex::new(sq[n] * Distribution::<f64>::sample(&StandardNormal, rng), 0.0);
                for k in 1..n {
                    let u: f64 = StandardNormal.sample(rng);
                    let v: f64 = StandardNormal.sample(rng);
                    let s = sq[k] / std::f64::consts::SQRT_2;
                    a[k] = Complex::new(s * u, s * v);
                    a[m - k] = a[k].conj();
                }
                FftPlanner::new().plan_fft_forward(m).process(&mut a);
                a[..n].iter().map(|c| c.re).collect()
            }
        }
    }

    /// Path number `path_index` of the batch seeded by `seed`. Component `c`
    /// draws from ChaCha stream `path_index * d + c`.
    pub fn sample_path(&self, d: usize, seed: u64, path_index: u64) -> GridPath {
        let n = self.grid.n_steps();
        let scale = self.grid.dt().powf(self.hurst);
        let mut values = vec![0.0; (n + 1) * d];
        for c in 0..d {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path_index * d as u64 + c as u64);
            let fgn = self.noise(&mut rng);
            let mut acc = 0.0;
            for (i, x) in fgn.iter().enumerate() {
                acc += scale * x;
                values[(i + 1) * d + c] = acc;
            }
        }
        GridPath::new(self.grid, d, values).expect("sized by construction")
    }

    pub fn sample_batch(&self, d: usize, seed: u64, count: usize) -> Vec<GridPath> {
        (0..count as u64)
            .into_par_iter()
            .map(|p| self.sample_path(d, seed, p))
            .collect()
    }
}

fn cholesky_toeplitz(n: usize, hurst: f64) -> Result<Vec<f64>> {
    let acf: Vec<f64> = (0..n).map(|k| fgn_autocovariance(k, hurst)).collect();
    let mut l = vec![0.0; n * (n + 1) / 2];
    let idx = |i: usize, j: usize| i * (i + 1) / 2 + j;
    for i in 0..n {
        for j in 0..=i {
            let mut s = acf[i - j];
            for k in 0..j {
                s -= l[idx(i, k)] * l[idx(j, k)];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                }
                l[idx(i, i)] = s.sqrt();
            } else {
                l[idx(i, j)] = s / l[idx(j, j)];
            }
        }
    }
    Ok(l)
}

fn circulant_factor(n: usize, hurst: f64) -> Result<Vec<f64>> {
    let m = 2 * n;
    let mut row: Vec<Complex<f64>> = (0..m)
        .map(|k| {
            let lag = if k <= n { k } else { m - k };
            Complex::new(fgn_autocovariance(lag, hurst), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut row);
    let top = row.iter().fold(0.0_f64, |a, c| a.max(c.re.abs()));
    row.iter()
        .enumerate()
        .map(|(k, c)| {
            if c.re < -1e-10 * top {
                Err(Error::CirculantNegative { index: k, value: c.re })
            } else {
                Ok((c.re.max(0.0) / m as f64).sqrt())
            }
        })
        .collect()
}

/// A sampled path together with how it was produced.
#[derive(Clone, Debug)]
pub struct FbmSample {
    pub path: GridPath,
    pub hurst: f64,
    pub seed: u64,
    pub method: SamplingMethod,
}

/// One `d`-dimensional fBm path (stream layout of path index 0).
pub fn sample_fbm(
    grid: UniformGrid,
    hurst: f64,
    d: usize,
    seed: u64,
    method: SamplingMethod,
) -> Result<FbmSample> {
    if d == 0 {
        return Err(invalid("fBm dimension must be at least 1"));
    }
    let sampler = FbmSampler::new(grid, hurst, method)?;
    Ok(FbmSample {
        path: sampler.sample_path(d, seed, 0),
        hurst,
        seed,
        method,
    })
}

/// Quadrature realization of `K*_H` on functions that are constant on the
/// cells of a grid starting at zero.
///
/// Row `q` evaluates `[K* phi](s_q) = sum_j phi_j int_{cell j, r > s_q} d_r K(r, s_q) dr`
/// at the quadrature node `s_q`; the cell integrals of `d_r K` are exact
/// increments `K(t_{j+1}, s_q) - K(t_j, s_q)`.
pub struct KStarMatrix {
    grid: UniformGrid,
    params: HurstParams,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// First cell touched by each row.
    first_cell: Vec<usize>,
    /// Row-major `nodes.len() x n` entries, zero left of `first_cell`.
    entries: Vec<f64>,
    /// `A^T W A`, the Gram matrix of cell indicators.
    gram: Vec<f64>,
}

impl std::fmt::Debug for KStarMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KStarMatrix")
            .field("grid", &self.grid)
            .field("params", &self.params)
            .field("quadrature_nodes", &self.nodes.len())
            .finish()
    }
}

/// Builds the `K*_H` quadrature on `grid`.
pub fn build_kstar(grid: UniformGrid, params: &HurstParams) -> Result<KStarMatrix> {
    if grid.t_start() != 0.0 {
        return Err(invalid("K* grids must start at t = 0"));
    }
    let n = grid.n_steps();
    let dt = grid.dt();
    let h = params.hurst;
    let rule = gl8();
    let q_per = rule.x.len();

    // s-quadrature: 8 Gauss points per cell; the first cell uses s = dt w^m
    // so that the s^{1-2H} factor of the integrand is absorbed.
    let m = 1.0 / (2.0 - 2.0 * h);
    let mut nodes = Vec::with_capacity(n * q_per);
    let mut weights = Vec::with_capacity(n * q_per);
    let mut first_cell = Vec::with_capacity(n * q_per);
    for c in 0..n {
        for (x, w) in rule.x.iter().zip(&rule.w) {
            let z = 0.5 * (x + 1.0);
            if c == 0 {
                nodes.push(dt * z.powf(m));
                weights.push(0.5 * w * dt * m * z.powf(m - 1.0));
            } else {
                nodes.push(grid.node(c) + dt * z);
                weights.push(0.5 * w * dt);
            }
            first_cell.push(c);
        }
    }

    let rows: Vec<Result<Vec<f64>>> = nodes
        .par_iter()
        .zip(&first_cell)
        .map(|(&s, &c)| {
            let mut row = vec![0.0; n];
            let pref = params.c_h * s.powf(0.5 - h);
            let near_end = (c + 2).min(n);
            let mut prev = 0.0;
            for (j, slot) in row.iter_mut().enumerate().take(near_end).skip(c) {
                let k = pref * substituted_integral(h, s, s, grid.node(j + 1))?;
                *slot = k - prev;
                prev = k;
            }
            for (j, slot) in row.iter_mut().enumerate().skip(near_end) {
                let (a, b) = (grid.node(j), grid.node(j + 1));
                *slot = pref
                    * rule.integrate(
                        &mut |u| (u - s).powf(h - 1.5) * u.powf(h - 0.5),
                        a,
                        b,
                    );
            }
            Ok(row)
        })
        .collect();
    let mut entries = Vec::with_capacity(nodes.len() * n);
    for r in rows {
        entries.extend(r?);
    }

    let gram_rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut out = vec![0.0; n];
            for (q, &c) in first_cell.iter().enumerate() {
                if c > j {
                    break;
                }
                let row = &entries[q * n..(q + 1) * n];
                let wa = weights[q] * row[j];
                for k in c..n {
                    out[k] += wa * row[k];
                }
            }
            out
        })
        .collect();

    Ok(KStarMatrix {
        grid,
        params: *params,
        nodes,
        weights,
        first_cell,
        entries,
        gram: gram_rows.concat(),
    })
}

impl KStarMatrix {
    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn params(&self) -> &HurstParams {
        &self.params
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn quadrature(&self) -> (&[f64], &[f64]) {
        (&self.nodes, &self.weights)
    }

    /// `K* phi` at the quadrature nodes, for `phi` constant on cells.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        let n = self.n_cells();
        self.entries
            .chunks_exact(n)
            .zip(&self.first_cell)
            .map(|(row, &c)| row[c..].iter().zip(&phi[c..]).map(|(a, p)| a * p).sum())
            .collect()
    }

    /// `<K* phi, K* psi>_{L^2}` by the stored quadrature.
    pub fn l2_pairing(&self, phi: &[f64], psi: &[f64]) -> f64 {
        let a = self.apply(phi);
        let b = self.apply(psi);
        a.iter()
            .zip(&b)
            .zip(&self.weights)
            .map(|((x, y), w)| w * x * y)
            .sum()
    }

    /// Same pairing through the precomputed Gram matrix.
    pub fn inner(&self, phi: &[f64], psi: &[f64]) -> f64 {
        let n = self.n_cells();
        let mut total = 0.0;
        for (j, p) in phi.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            let row = &self.gram[j * n..(j + 1) * n];
            total += p * row.iter().zip(psi).map(|(g, q)| g * q).sum::<f64>();
        }
        total
    }

    /// Cell values of `1_{[0, t_k]}`.
    pub fn indicator(&self, k: usize) -> Vec<f64> {
        (0..self.n_cells()).map(|j| if j < k { 1.0 } else { 0.0 }).collect()
    }
}

/// `sum_l <K* phi_l, K* psi_l>` over driver components.
pub fn h_inner(phi: &[Vec<f64>], psi: &[Vec<f64>], kstar: &KStarMatrix) -> Result<f64> {
    if phi.len() != psi.len() {
        return Err(Error::DimensionMismatch {
            expected: phi.len(),
            actual: psi.len(),
        });
    }
    let n = kstar.n_cells();
    for v in phi.iter().chain(psi) {
        if v.len() != n {
            return Err(Error::GridMismatch(format!(
                "function has {} cells, K* grid has {n}",
                v.len()
            )));
        }
    }
    Ok(phi.iter().zip(psi).map(|(a, b)| kstar.inner(a, b)).sum())
}
