//! Malliavin covariance matrices, the non-degeneracy lower bound, and kernel
//! density estimates of the law of `y_t`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fbm::KStarMatrix;
use crate::grid::GridPath;
use crate::sensitivity::SensitivityField;
use crate::young::slope;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MalliavinMatrix {
    pub t: f64,
    pub n: usize,
    /// Row-major `n x n`.
    pub q: Vec<f64>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub det: f64,
}

impl MalliavinMatrix {
    /// Symmetric part of `q` with its spectrum; errors if `q` is not
    /// symmetric to `1e-10` relative.
    pub fn from_matrix(t: f64, n: usize, q: Vec<f64>) -> Result<Self> {
        if q.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: q.len(),
            });
        }
        let m = DMatrix::from_row_slice(n, n, &q);
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(invalid(format!("matrix is not symmetric (gap {asym:e})")));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sym.clone()).eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(f64::total_cmp);
        let det = eigenvalues.iter().product();
        Ok(Self {
            t,
            n,
            q: sym.as_slice().to_vec(),
            eigenvalues,
            det,
        })
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.n - 1]
    }
}

/// Checks that `kstar` lives on the r-grid of `field` and returns the stride.
fn matching_stride(field: &SensitivityField, kstar: &KStarMatrix) -> Result<usize> {
    let cells = field.r_nodes.len();
    let g = kstar.grid();
    let fine = field.grid.n_steps();
    let stride = fine / cells.max(1);
    let uniform = field.r_nodes.iter().enumerate().all(|(c, &r)| r == c * stride);
    let scale = field.grid.t_end().abs().max(1.0);
    if kstar.n_cells() != cells
        || !uniform
        || stride * cells != fine
        || (g.t_end() - field.grid.t_end()).abs() > 1e-9 * scale
        || (g.t_start() - field.grid.t_start()).abs() > 1e-9 * scale
    {
        return Err(Error::GridMismatch(format!(
            "K* has {} cells on {:?}; field has {cells} r-nodes on {:?}",
            kstar.n_cells(),
            g,
            field.grid
        )));
    }
    Ok(stride)
}

/// `Q_t^{ij} = sum_l <Phi_t^{il}, Phi_t^{jl}>_H` at forward node `t`.
pub fn malliavin_matrix(field: &SensitivityField, t: usize, kstar: &KStarMatrix) -> Result<MalliavinMatrix> {
    let stride = matching_stride(field, kstar)?;
    if !t.is_multiple_of(stride) || t > field.grid.n_steps() {
        return Err(Error::GridMismatch(format!(
            "t node {t} is not on the r-grid of stride {stride}"
        )));
    }
    let (n, d) = (field.n, field.d);
    let cells = field.r_nodes.len();
    // cell functions phi^{il}(r_c) = Phi_t^{il}(r_c) for r_c < t
    let funcs: Vec<Vec<f64>> = (0..n * d)
        .map(|il| {
            (0..cells)
                .map(|c| {
                    if field.r_nodes[c] < t {
                        field.value(c, t)[il]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = (0..d).map(|l| kstar.inner(&funcs[i * d + l], &funcs[j * d + l])).sum();
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    MalliavinMatrix::from_matrix(field.grid.node(t), n, q)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub t: f64,
    pub lambda_min: f64,
    pub bound: f64,
    /// `<1_t, 1_t>_H / t^{2H}` under the same quadrature.
    pub c: f64,
    pub pass: bool,
    pub matrix: MalliavinMatrix,
}

/// `L_t = sum_l <q^{il} 1_{[0,t]}, q^{jl} 1_{[0,t]}>_H` against `c eps t^{2H}`.
///
/// `q` holds the `n x d` coefficient values along the solution (dimension
/// `n * d`, forward grid); it is read at the left node of each K* cell.
pub fn lower_bound_lt(q: &GridPath, n: usize, kstar: &KStarMatrix, t: usize, eps: f64) -> Result<LowerBound> {
    if !(eps > 0.0) {
        return Err(invalid(format!("non-degeneracy constant must be positive, got {eps}")));
    }
    if !q.dim().is_multiple_of(n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: q.dim(),
        });
    }
    let d = q.dim() / n;
    let cells = kstar.n_cells();
    let fine = q.grid().n_steps();
    if !fine.is_multiple_of(cells) || (q.grid().t_end() - kstar.grid().t_end()).abs() > 1e-9 * q.grid().t_end().abs().max(1.0) {
        return Err(Error::GridMismatch("coefficient path and K* grids differ".into()));
    }
    let stride = fine / cells;
    if !t.is_multiple_of(stride) || t > fine {
        return Err(Error::GridMismatch(format!("t node {t} is not on the K* grid")));
    }
    let tc = t / stride;
    let funcs: Vec<Vec<f64>> = (0..n * d)
        .map(|il| (0..cells).map(|c| if c < tc { q.at(c * stride)[il] } else { 0.0 }).collect())
        .collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = (0..d).map(|m| kstar.inner(&funcs[i * d + m], &funcs[j * d + m])).sum();
            l[i * n + j] = v;
            l[j * n + i] = v;
        }
    }
    let time = q.grid().node(t);
    let matrix = MalliavinMatrix::from_matrix(time, n, l)?;
    let h = kstar.params().hurst;
    let ind = kstar.indicator(tc);
    let scale = time.powf(2.0 * h);
    let c = if tc == 0 { 1.0 } else { kstar.inner(&ind, &ind) / scale };
    let bound = c * eps * scale;
    let lambda_min = matrix.lambda_min();
    Ok(LowerBound {
        t: time,
        lambda_min,
        bound,
        c,
        pass: lambda_min >= bound * (1.0 - 1e-9),
        matrix,
    })
}

/// Gaussian kernel density estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub sample_count: usize,
    pub dim: usize,
    /// Per-coordinate bandwidth.
    pub bandwidth: Vec<f64>,
    /// Evaluation axes (one per coordinate) for `dim <= 2`; empty otherwise.
    pub axes: Vec<Vec<f64>>,
    /// Density on the tensor grid of `axes`, first axis slowest.
    pub values: Vec<f64>,
    #[serde(skip)]
    samples: Vec<f64>,
}

pub const MIN_KDE_SAMPLES: usize = 100;

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Silverman's rule in one dimension, Scott's rule per coordinate above.
pub fn default_bandwidth(samples: &[f64], dim: usize) -> Result<Vec<f64>> {
    let count = samples.len() / dim;
    let mut out = Vec::with_capacity(dim);
    for c in 0..dim {
        let col: Vec<f64> = samples.iter().skip(c).step_by(dim).copied().collect();
        let (_, sd) = mean_sd(&col);
        let h = if dim == 1 {
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
            let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
            0.9 * spread * (count as f64).powf(-0.2)
        } else {
            sd * (count as f64).powf(-1.0 / (dim as f64 + 4.0))
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid(format!(
                "coordinate {c} of the samples has zero spread; density estimate is degenerate"
            )));
        }
        out.push(h);
    }
    Ok(out)
}

/// KDE of `samples` (row-major, `dim` coordinates each). Gridded output uses
/// 512 points in one dimension and 128 x 128 in two, covering the samples
/// with a margin of 5 bandwidths.
pub fn density_estimate(samples: &[f64], dim: usize, bandwidth: Option<Vec<f64>>) -> Result<DensityEstimate> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(invalid("sample array length must be a multiple of the dimension"));
    }
    let count = samples.len() / dim;
    if count < MIN_KDE_SAMPLES {
        return Err(invalid(format!(
            "density estimation needs at least {MIN_KDE_SAMPLES} samples, got {count}"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(invalid("samples contain non-finite values"));
    }
    let bandwidth = match bandwidth {
        Some(b) => {
            if b.len() != dim || b.iter().any(|h| !(*h > 0.0)) {
                return Err(invalid("bandwidth needs one positive entry per coordinate"));
            }
            b
        }
        None => default_bandwidth(samples, dim)?,
    };
    let mut est = DensityEstimate {
        sample_count: count,
        dim,
        bandwidth,
        axes: Vec::new(),
        values: Vec::new(),
        samples: samples.to_vec(),
    };
    if dim <= 2 {
        let points = if dim == 1 { 512 } else { 128 };
        est.axes = (0..dim)
            .map(|c| {
                let col = samples.iter().skip(c).step_by(dim);
                let lo = col.clone().fold(f64::INFINITY, |a, b| a.min(*b)) - 5.0 * est.bandwidth[c];
                let hi = col.fold(f64::NEG_INFINITY, |a, b| a.max(*b)) + 5.0 * est.bandwidth[c];
                (0..points)
                    .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
                    .collect()
            })
            .collect();
        est.values = if dim == 1 {
            est.axes[0].iter().map(|x| est.evaluate(&[*x])).collect()
        } else {
            let (a0, a1) = (&est.axes[0], &est.axes[1]);
            a0.iter()
                .flat_map(|u| a1.iter().map(move |v| [*u, *v]))
                .map(|p| est.evaluate(&p))
                .collect()
        };
    }
    Ok(est)
}

impl DensityEstimate {
    /// Density at a point.
    pub fn evaluate(&self, point: &[f64]) -> f64 {
        let norm: f64 = self
            .bandwidth
            .iter()
            .map(|h| h * (2.0 * std::f64::consts::PI).sqrt())
            .product();
        let total: f64 = self
            .samples
            .chunks_exact(self.dim)
            .map(|s| {
                let e: f64 = s
                    .iter()
                    .zip(point)
                    .zip(&self.bandwidth)
                    .map(|((a, b), h)| ((a - b) / h).powi(2))
                    .sum();
                (-0.5 * e).exp()
            })
            .sum();
        total / (norm * self.sample_count as f64)
    }

    /// Trapezoid integral of the gridded values.
    pub fn integral(&self) -> f64 {
        let trap = |axis: &[f64], f: &dyn Fn(usize) -> f64| -> f64 {
            (0..axis.len() - 1)
                .map(|i| 0.5 * (f(i) + f(i + 1)) * (axis[i + 1] - axis[i]))
                .sum()
        };
        match self.axes.len() {
            1 => trap(&self.axes[0], &|i| self.values[i]),
            2 => {
                let m = self.axes[1].len();
                trap(&self.axes[0], &|i| trap(&self.axes[1], &|j| self.values[i * m + j]))
            }
            _ => f64::NAN,
        }
    }

    /// Largest gap to `other` over this estimate's grid points.
    pub fn sup_change(&self, other: &DensityEstimate) -> f64 {
        match self.axes.len() {
            1 => self
                .axes[0]
                .iter()
                .zip(&self.values)
                .map(|(x, v)| (v - other.evaluate(&[*x])).abs())
                .fold(0.0, f64::max),
            2 => {
                let m = self.axes[1].len();
                self.values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| {
                        let p = [self.axes[0][k / m], self.axes[1][k % m]];
                        (v - other.evaluate(&p)).abs()
                    })
                    .fold(0.0, f64::max)
            }
            _ => f64::NAN,
        }
    }

    /// Same samples with every bandwidth halved.
    pub fn halved(&self) -> Result<DensityEstimate> {
        density_estimate(&self.samples, self.dim, Some(self.bandwidth.iter().map(|h| 0.5 * h).collect()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("no values"));
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            min: s[0],
            q05: quantile_sorted(&s, 0.05),
            q25: quantile_sorted(&s, 0.25),
            median: quantile_sorted(&s, 0.5),
            q75: quantile_sorted(&s, 0.75),
            q95: quantile_sorted(&s, 0.95),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetQReport {
    pub count: usize,
    pub det: Quantiles,
    pub lambda_min: Quantiles,
    pub nonpositive_fraction: f64,
    /// Slope of the mean of `log lambda_min` per time against `log t`; NaN
    /// with fewer than two distinct times.
    pub log_slope: f64,
    pub times: Vec<f64>,
}

/// Tail summary of a batch of matrices, possibly at several times.
pub fn detq_tail_report(batch: &[MalliavinMatrix]) -> Result<DetQReport> {
    if batch.is_empty() {
        return Err(invalid("empty batch of Malliavin matrices"));
    }
    let dets: Vec<f64> = batch.iter().map(|m| m.det).collect();
    let mins: Vec<f64> = batch.iter().map(|m| m.lambda_min()).collect();
    let nonpos = mins.iter().filter(|v| **v <= 0.0).count();

    let mut times: Vec<f64> = batch.iter().map(|m| m.t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let pts: Vec<(f64, f64)> = times
        .iter()
        .filter(|t| **t > 0.0)
        .filter_map(|t| {
            let logs: Vec<f64> = batch
                .iter()
                .filter(|m| (m.t - t).abs() <= 1e-12 * t.abs().max(1.0) && m.lambda_min() > 0.0)
                .map(|m| m.lambda_min().ln())
                .collect();
            (!logs.is_empty()).then(|| (t.ln(), logs.iter().sum::<f64>() / logs.len() as f64))
        })
        .collect();
    Ok(DetQReport {
        count: batch.len(),
        det: Quantiles::of(&dets)?,
        lambda_min: Quantiles::of(&mins)?,
        nonpositive_fraction: nonpos as f64 / batch.len() as f64,
        log_slope: slope(&pts),
        times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{solve_delay, ConstantCoefficient, DelayKernel, InitialSegment, ScalarSin, SolveOptions};
    use crate::fbm::{build_kstar, sample_fbm, HurstParams, SamplingMethod};
    use crate::grid::UniformGrid;
    use crate::sensitivity::{solve_field, GradCoefficient};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit(n: usize) -> UniformGrid {
        UniformGrid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn matrix_spectrum_and_det() {
        let m = MalliavinMatrix::from_matrix(1.0, 2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        assert!((m.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((m.eigenvalues[1] - 3.0).abs() < 1e-12);
        assert!((m.det - 3.0).abs() < 1e-12);
        assert!(MalliavinMatrix::from_matrix(1.0, 2, vec![2.0, 1.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn constant_sigma_gives_t_to_the_2h() {
        let g = unit(256);
        let x = sample_fbm(g, 0.75, 1, 9, SamplingMethod::Cholesky).unwrap().path;
        let xi = InitialSegment::constant(0.25, g.dt(), &[0.0]).unwrap();
        let ker = DelayKernel::discrete(0.25, vec![(0.25, 1.0)]).unwrap();
        let c = ConstantCoefficient::scalar(1.3);
        let rep = solve_delay(&x, &xi, &c, &ker, &SolveOptions::default()).unwrap();
        let field = solve_field(&rep, &x, &c, &ker, 1).unwrap();
        let ks = build_kstar(g, &HurstParams::new(0.75).unwrap()).unwrap();
        for t in [64usize, 128, 256] {
            let q = malliavin_matrix(&field, t, &ks).unwrap();
            let want = 1.69 * g.node(t).powf(1.5);
            assert!((q.q[0] - want).abs() < 0.01 * want, "t={t}: {} vs {want}", q.q[0]);
        }
        let zero = SensitivityField {
            columns: field.columns.iter().map(|c| vec![0.0; c.len()]).collect(),
            ..field.clone()
        };
        assert_eq!(malliavin_matrix(&zero, 256, &ks).unwrap().q, vec![0.0]);
    }

    #[test]
    fn coarse_and_fine_r_grids_agree() {
        let g = unit(256);
        let h = HurstParams::new(0.75).unwrap();
        let x = sample_fbm(g, 0.75, 1, 4, SamplingMethod::Cholesky).unwrap().path;
        let xi = InitialSegment::constant(0.25, g.dt(), &[0.2]).unwrap();
        let ker = DelayKernel::lebesgue(0.25, 17).unwrap();
        let s = ScalarSin { a: 1.0, b: 0.5 };
        let rep = solve_delay(&x, &xi, &s, &ker, &SolveOptions::default()).unwrap();
        let fine = solve_field(&rep, &x, &s, &ker, 1).unwrap();
        let coarse = solve_field(&rep, &x, &s, &ker, 4).unwrap();
        let qf = malliavin_matrix(&fine, 256, &build_kstar(g, &h).unwrap()).unwrap();
        let qc = malliavin_matrix(&coarse, 256, &build_kstar(unit(64), &h).unwrap()).unwrap();
        assert!((qf.q[0] - qc.q[0]).abs() < 0.02 * qf.q[0], "{} vs {}", qf.q[0], qc.q[0]);
        assert!(malliavin_matrix(&coarse, 256, &build_kstar(g, &h).unwrap()).is_err());
        assert!(malliavin_matrix(&coarse, 2, &build_kstar(unit(64), &h).unwrap()).is_err());
    }

    #[test]
    fn lower_bound_constant_case_is_tight() {
        let g = unit(64);
        let ks = build_kstar(g, &HurstParams::new(0.75).unwrap()).unwrap();
        let eps: f64 = 0.25;
        let s = eps.sqrt();
        let q = GridPath::from_fn(g, 4, |_, o| o.copy_from_slice(&[s, 0.0, 0.0, s]));
        for t in [16usize, 64] {
            let lb = lower_bound_lt(&q, 2, &ks, t, eps).unwrap();
            assert!(lb.pass);
            assert!((lb.lambda_min - lb.bound).abs() < 1e-12 * lb.bound);
            assert!((lb.c - 1.0).abs() < 2e-3);
        }
        let tiny = lower_bound_lt(&q, 2, &ks, 1, eps).unwrap();
        assert!(tiny.lambda_min < 0.01);
        assert!(lower_bound_lt(&q, 2, &ks, 16, 0.0).is_err());
    }

    fn normal_sup_deviation(seed: u64) -> (f64, DensityEstimate) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let est = density_estimate(&xs, 1, None).unwrap();
        let dev = est
            .axes[0]
            .iter()
            .zip(&est.values)
            .map(|(x, v)| (v - (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()).abs())
            .fold(0.0, f64::max);
        (dev, est)
    }

    // The sup deviation of a single 10^4-draw estimate is itself random
    // (median about 0.015, 95th percentile about 0.023), so the bound is
    // checked on the median over independent draws.
    #[test]
    fn kde_matches_standard_normal() {
        let mut devs: Vec<f64> = (0..20).map(|s| normal_sup_deviation(100 + s).0).collect();
        devs.sort_by(f64::total_cmp);
        let median = 0.5 * (devs[9] + devs[10]);
        assert!(median <= 0.02, "{devs:?}");
        let (_, est) = normal_sup_deviation(17);
        assert!((est.integral() - 1.0).abs() < 1e-2);
        assert!(est.values.iter().all(|v| *v >= 0.0));
        assert!(est.sup_change(&est.halved().unwrap()) <= 0.05);
    }

    #[test]
    fn kde_two_dimensional_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let est = density_estimate(&xs, 2, None).unwrap();
        assert_eq!(est.values.len(), 128 * 128);
        assert!((est.integral() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn kde_input_errors() {
        assert!(density_estimate(&[1.0; 99], 1, None).is_err());
        assert!(density_estimate(&[1.0; 500], 1, None).is_err());
        assert!(density_estimate(&vec![0.5; 200], 1, Some(vec![0.1])).is_ok());
    }

    #[test]
    fn tail_report_slope_and_errors() {
        assert!(detq_tail_report(&[]).is_err());
        let batch: Vec<MalliavinMatrix> = [0.25f64, 0.5, 1.0]
            .iter()
            .map(|t| MalliavinMatrix::from_matrix(*t, 1, vec![4.0 * t.powf(1.5)]).unwrap())
            .collect();
        let r = detq_tail_report(&batch).unwrap();
        assert!((r.log_slope - 1.5).abs() < 1e-12);
        assert_eq!(r.nonpositive_fraction, 0.0);
        assert_eq!(r.times.len(), 3);
    }

    #[test]
    fn gradient_path_feeds_lower_bound() {
        let g = unit(64);
        let x = sample_fbm(g, 0.75, 1, 3, SamplingMethod::Cholesky).unwrap().path;
        let xi = InitialSegment::constant(0.25, g.dt(), &[0.0]).unwrap();
        let ker = DelayKernel::lebesgue(0.25, 9).unwrap();
        let s = ScalarSin { a: 1.0, b: 0.5 };
        let rep = solve_delay(&x, &xi, &s, &ker, &SolveOptions::default()).unwrap();
        let gc = GradCoefficient::along(&rep, &s, &ker).unwrap();
        let ks = build_kstar(g, &HurstParams::new(0.75).unwrap()).unwrap();
        let lb = lower_bound_lt(&gc.q_path().unwrap(), 1, &ks, 64, 0.25).unwrap();
        assert!(lb.pass, "{lb:?}");
    }
}
