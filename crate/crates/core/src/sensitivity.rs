//! Derivatives of the delay solution with respect to its driver.
//!
//! Everything here differentiates the discrete scheme used by
//! [`solve_delay`](crate::delay::solve_delay): with `q_j = sigma(Z_j)` and
//! `q'_j = sigma'(Z_j)` along the solution, the derivative in direction `k`
//! solves `z_{j+1} = z_j + q_j dk_j + q'_j(Z^z_j) dx_j` with `z = 0` on `[-h, 0]`.
//! The kernel `Phi_t(r_i)` is the response at `t` to a unit kick at step `i`,
//! so `z_t = sum_{i < t} Phi_t(r_i) dk_i` holds exactly on the grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::delay::{
    aggregate, solve_delay, Coefficient, DelayKernel, InitialSegment, SolveOptions, SolveReport,
};
use crate::error::{invalid, Error, Result};
use crate::grid::{GridPath, UniformGrid};
use crate::holder::holder_seminorm;
use crate::young::young_integrate;

/// `(7 + sqrt 17) / 16`.
pub fn hurst_threshold() -> f64 {
    (7.0 + 17f64.sqrt()) / 16.0
}

/// Exponent `(2 lambda + gamma - 1) / ((gamma + lambda)(gamma + lambda - 1))`
/// of the last term of [`linear_moment_d`].
pub fn moment_exponent(gamma: f64, lambda: f64) -> f64 {
    (2.0 * lambda + gamma - 1.0) / ((gamma + lambda) * (gamma + lambda - 1.0))
}

/// `(|xi| |x|)^{1/(gamma+lambda)} + |x|^{1/gamma} + |x|^{moment_exponent}`.
///
/// Zero when `x_seminorm` is zero.
pub fn linear_moment_d(xi_seminorm: f64, x_seminorm: f64, gamma: f64, lambda: f64) -> Result<f64> {
    if gamma + lambda <= 1.0 {
        return Err(invalid("gamma + lambda must exceed 1"));
    }
    if xi_seminorm < 0.0 || x_seminorm < 0.0 {
        return Err(invalid("seminorms must be non-negative"));
    }
    if x_seminorm == 0.0 {
        return Ok(0.0);
    }
    Ok((xi_seminorm * x_seminorm).powf(1.0 / (gamma + lambda))
        + x_seminorm.powf(1.0 / gamma)
        + x_seminorm.powf(moment_exponent(gamma, lambda)))
}

/// `q_j = sigma(Z_j)` and `q'_j = sigma'(Z_j)` along a solved path, on the
/// forward nodes `0..=N`.
#[derive(Clone, Debug)]
pub struct GradCoefficient {
    pub n: usize,
    pub d: usize,
    /// Row-major `n x d` per node.
    pub q: Vec<f64>,
    /// `(i * d + l) * n + k` layout per node.
    pub q_prime: Vec<f64>,
    stencil: Vec<(usize, f64)>,
    p: usize,
    grid: UniformGrid,
}

impl GradCoefficient {
    pub fn along(report: &SolveReport, sigma: &dyn Coefficient, kernel: &DelayKernel) -> Result<Self> {
        let (n, d) = sigma.dims();
        if report.y.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: report.y.dim(),
            });
        }
        let dt = report.y.grid().dt();
        let p = kernel.horizon_steps(dt)?;
        let stencil = kernel.stencil(dt)?;
        let total = report.y.grid().n_steps();
        if total <= p {
            return Err(invalid("solution has no forward part"));
        }
        let nodes = total - p + 1;
        let mut q = vec![0.0; nodes * n * d];
        let mut q_prime = vec![0.0; nodes * n * d * n];
        let mut z = vec![0.0; n];
        for j in 0..nodes {
            aggregate(report.y.values(), n, p + j, &stencil, &mut z);
            sigma.value(&z, &mut q[j * n * d..(j + 1) * n * d]);
            sigma.grad(&z, &mut q_prime[j * n * d * n..(j + 1) * n * d * n]);
        }
        let grid = UniformGrid::new(report.y.grid().node(p), report.y.grid().t_end(), nodes - 1)?;
        Ok(Self {
            n,
            d,
            q,
            q_prime,
            stencil,
            p,
            grid,
        })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    /// `q` as a path of dimension `n * d` on the forward grid.
    pub fn q_path(&self) -> Result<GridPath> {
        GridPath::new(self.grid, self.n * self.d, self.q.clone())
    }

    pub fn q_at(&self, j: usize) -> &[f64] {
        let s = self.n * self.d;
        &self.q[j * s..(j + 1) * s]
    }

    fn qp_at(&self, j: usize) -> &[f64] {
        let s = self.n * self.d * self.n;
        &self.q_prime[j * s..(j + 1) * s]
    }

    /// `out += q'_j(v) dx`.
    fn apply_prime(&self, j: usize, v: &[f64], dx: &[f64], out: &mut [f64]) {
        let (n, d) = (self.n, self.d);
        let qp = self.qp_at(j);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (l, dxl) in dx.iter().enumerate() {
                let row = &qp[(i * d + l) * n..(i * d + l + 1) * n];
                let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
                acc += dot * dxl;
            }
            *o += acc;
        }
    }
}

fn driver_increment(x: &GridPath, j: usize) -> Vec<f64> {
    x.at(j + 1).iter().zip(x.at(j)).map(|(a, b)| a - b).collect()
}

/// `Dy(x)(k)` on `[0, T]`, by Picard iteration on the windows of `report`.
pub fn directional_derivative(
    report: &SolveReport,
    x: &GridPath,
    k: &GridPath,
    sigma: &dyn Coefficient,
    kernel: &DelayKernel,
    opts: &SolveOptions,
) -> Result<GridPath> {
    let gc = GradCoefficient::along(report, sigma, kernel)?;
    let (n, d, p) = (gc.n, gc.d, gc.p);
    x.check_compatible(k)?;
    if !x.grid().same_as(gc.grid()) {
        return Err(Error::GridMismatch("driver and solution grids differ".into()));
    }
    if k.at(0).iter().any(|v| *v != 0.0) {
        return Err(invalid("perturbation must start at zero"));
    }
    let total = p + x.grid().n_steps();
    let dt = x.grid().dt();
    let t0 = report.y.grid().t_start();

    let mut z = vec![0.0; (total + 1) * n];
    let mut next = z.clone();
    let mut agg = vec![0.0; n];
    for (w_idx, w) in report.windows.iter().enumerate() {
        let a = ((w.start - t0) / dt).round() as usize;
        let b = ((w.end - t0) / dt).round() as usize;
        for j in a + 1..=b {
            z.copy_within(a * n..(a + 1) * n, j * n);
        }
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            next[a * n..(a + 1) * n].copy_from_slice(&z[a * n..(a + 1) * n]);
            for j in a..b {
                let f = j - p;
                let dk = driver_increment(k, f);
                let dx = driver_increment(x, f);
                let (head, tail) = next.split_at_mut((j + 1) * n);
                let out = &mut tail[..n];
                out.copy_from_slice(&head[j * n..]);
                let q = gc.q_at(f);
                for (i, o) in out.iter_mut().enumerate() {
                    *o += (0..d).map(|l| q[i * d + l] * dk[l]).sum::<f64>();
                }
                aggregate(&z, n, j, &gc.stencil, &mut agg);
                gc.apply_prime(f, &agg, &dx, out);
            }
            iterations += 1;
            if let Some(bad) = next[(a + 1) * n..(b + 1) * n].iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    window: w_idx,
                    node: a + 1 + bad / n,
                });
            }
            let diff: Vec<f64> = next[a * n..(b + 1) * n]
                .iter()
                .zip(&z[a * n..(b + 1) * n])
                .map(|(u, v)| u - v)
                .collect();
            let wg = UniformGrid::new(w.start, w.end, b - a)?;
            residual = holder_seminorm(&GridPath::new(wg, n, diff)?, opts.lambda, 0, b - a)?.seminorm;
            z[a * n..(b + 1) * n].copy_from_slice(&next[a * n..(b + 1) * n]);
            if residual <= opts.tol {
                break;
            }
        }
        if residual > opts.tol {
            return Err(Error::MaxIterations {
                window: w_idx,
                iterations,
                residual,
            });
        }
    }
    GridPath::new(*x.grid(), n, z[p * n..].to_vec())
}

/// `Phi_t(r)` for `r` on a (possibly coarsened) set of forward nodes and all `t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SensitivityField {
    pub grid: UniformGrid,
    pub n: usize,
    pub d: usize,
    /// Forward node index of each `r`.
    pub r_nodes: Vec<usize>,
    /// One column per `r`: `(N + 1) x n x d` values indexed by `t` node.
    pub columns: Vec<Vec<f64>>,
}

impl SensitivityField {
    /// `Phi_{t_t}(r)` for column `c`, row-major `n x d`; zero for `t < r`.
    pub fn value(&self, c: usize, t: usize) -> &[f64] {
        let s = self.n * self.d;
        &self.columns[c][t * s..(t + 1) * s]
    }

    /// Index of the column at forward node `r`, if stored.
    pub fn column_of(&self, r: usize) -> Option<usize> {
        self.r_nodes.binary_search(&r).ok()
    }

    /// `sum_{i < t} Phi_t(r_i) dk_i` as a Young integral in `r`; needs every
    /// node to carry a column.
    pub fn represent(&self, k: &GridPath, t: usize) -> Result<Vec<f64>> {
        if self.r_nodes.len() < self.grid.n_steps() {
            return Err(Error::Unsupported(
                "representation needs the full r-grid (stride 1)".into(),
            ));
        }
        if k.dim() != self.d || !k.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch("perturbation does not match the field".into()));
        }
        if t == 0 {
            return Ok(vec![0.0; self.n]);
        }
        let s = self.n * self.d;
        let sub = UniformGrid::new(self.grid.node(0), self.grid.node(t), t)?;
        let mut vals = vec![0.0; (t + 1) * s];
        for i in 0..t {
            vals[i * s..(i + 1) * s].copy_from_slice(self.value(i, t));
        }
        let f = GridPath::new(sub, s, vals)?;
        let g = k.slice(0, t)?;
        let res = young_integrate(&f, &g, 1.0, 1.0)?;
        Ok(res.integral_path.last().to_vec())
    }
}

/// One column `r -> Phi_.(r)` of the field, marching forward in `t`.
pub fn solve_phi(
    report: &SolveReport,
    x: &GridPath,
    sigma: &dyn Coefficient,
    kernel: &DelayKernel,
    r: usize,
) -> Result<Vec<f64>> {
    let gc = GradCoefficient::along(report, sigma, kernel)?;
    phi_column(&gc, x, r)
}

fn phi_column(gc: &GradCoefficient, x: &GridPath, r: usize) -> Result<Vec<f64>> {
    let (n, d) = (gc.n, gc.d);
    let nt = gc.grid.n_steps();
    if r > nt {
        return Err(invalid(format!("r node {r} beyond {nt}")));
    }
    let s = n * d;
    let mut col = vec![0.0; (nt + 1) * s];
    col[r * s..(r + 1) * s].copy_from_slice(gc.q_at(r));
    let mut v = vec![0.0; n];
    let mut upd = vec![0.0; n];
    for j in r..nt {
        let dx = driver_increment(x, j);
        let (head, tail) = col.split_at_mut((j + 1) * s);
        tail[..s].copy_from_slice(&head[j * s..]);
        for c in 0..d {
            // Only nodes strictly after r carry a response to the kick at r.
            v.fill(0.0);
            for &(o, w) in &gc.stencil {
                if o > j || j - o <= r {
                    continue;
                }
                let m = j - o;
                for (a, va) in v.iter_mut().enumerate() {
                    *va += w * head[m * s + a * d + c];
                }
            }
            upd.fill(0.0);
            gc.apply_prime(j, &v, &dx, &mut upd);
            for a in 0..n {
                tail[a * d + c] += upd[a];
            }
        }
        if tail[..s].iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                window: 0,
                node: j + 1,
            });
        }
    }
    Ok(col)
}

/// Columns at every `stride`-th forward node `r < T`, computed in parallel.
pub fn solve_field(
    report: &SolveReport,
    x: &GridPath,
    sigma: &dyn Coefficient,
    kernel: &DelayKernel,
    stride: usize,
) -> Result<SensitivityField> {
    let gc = GradCoefficient::along(report, sigma, kernel)?;
    if !x.grid().same_as(gc.grid()) {
        return Err(Error::GridMismatch("driver and solution grids differ".into()));
    }
    let nt = gc.grid.n_steps();
    if stride == 0 || nt % stride != 0 {
        return Err(invalid(format!("stride {stride} does not divide {nt} steps")));
    }
    let r_nodes: Vec<usize> = (0..nt).step_by(stride).collect();
    let columns = r_nodes
        .par_iter()
        .map(|&r| phi_column(&gc, x, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityField {
        grid: gc.grid,
        n: gc.n,
        d: gc.d,
        r_nodes,
        columns,
    })
}

/// Stride keeping at most `max_cells` r-cells.
pub fn default_stride(n_steps: usize, max_cells: usize) -> usize {
    let mut m = 1;
    while n_steps / m > max_cells || !n_steps.is_multiple_of(m) {
        m += 1;
        if m > n_steps {
            return n_steps;
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdCheck {
    /// `sup |fd - z| / sup |z|`.
    pub relative_error: f64,
    pub epsilon: f64,
    pub richardson: bool,
}

/// Central differences `(y(x + e k) - y(x - e k)) / 2e` against
/// [`directional_derivative`], with a Richardson step at `e / 2` when the
/// first estimate misses `tolerance`.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check(
    x: &GridPath,
    k: &GridPath,
    xi: &InitialSegment,
    sigma: &dyn Coefficient,
    kernel: &DelayKernel,
    opts: &SolveOptions,
    eps: f64,
    tolerance: f64,
) -> Result<FdCheck> {
    let base = solve_delay(x, xi, sigma, kernel, opts)?;
    let z = directional_derivative(&base, x, k, sigma, kernel, opts)?;
    let fd = |e: f64| -> Result<Vec<f64>> {
        let shift = |sgn: f64| -> Result<GridPath> {
            let v = x.values().iter().zip(k.values()).map(|(a, b)| a + sgn * e * b).collect();
            let xs = GridPath::new(*x.grid(), x.dim(), v)?;
            solve_delay(&xs, xi, sigma, kernel, opts)?.forward()
        };
        let (hi, lo) = (shift(1.0)?, shift(-1.0)?);
        Ok(hi.values().iter().zip(lo.values()).map(|(a, b)| (a - b) / (2.0 * e)).collect())
    };
    let scale = z.sup_norm().max(f64::MIN_POSITIVE);
    let err = |v: &[f64]| -> f64 {
        v.iter().zip(z.values()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())) / scale
    };
    let first = fd(eps)?;
    let e1 = err(&first);
    if e1 <= tolerance {
        return Ok(FdCheck {
            relative_error: e1,
            epsilon: eps,
            richardson: false,
        });
    }
    let half = fd(0.5 * eps)?;
    let rich: Vec<f64> = half.iter().zip(&first).map(|(h, f)| (4.0 * h - f) / 3.0).collect();
    Ok(FdCheck {
        relative_error: err(&rich),
        epsilon: 0.5 * eps,
        richardson: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::{BoundedTanh, ConstantCoefficient, ScalarSin};

    fn smooth(n: usize, f: impl Fn(f64) -> f64) -> GridPath {
        GridPath::from_scalar_fn(UniformGrid::new(0.0, 1.0, n).unwrap(), f)
    }

    fn setup_sin(n: usize) -> (GridPath, InitialSegment, ScalarSin, DelayKernel, SolveOptions) {
        let x = smooth(n, |t| (3.0 * t).sin() + t * t);
        let xi = InitialSegment::constant(0.25, 1.0 / n as f64, &[0.3]).unwrap();
        let k = DelayKernel::lebesgue(0.25, 9).unwrap();
        (x, xi, ScalarSin { a: 1.0, b: 0.5 }, k, SolveOptions::default())
    }

    #[test]
    fn threshold_value() {
        let h0 = hurst_threshold();
        assert!(h0 > 0.695 && h0 < 0.696);
        assert!(((16.0 * h0 - 7.0).powi(2) - 17.0).abs() < 1e-12);
        assert!(0.70 > h0 && 0.69 < h0);
    }

    #[test]
    fn moment_exponent_below_two_iff_above_threshold() {
        let h0 = hurst_threshold();
        for g in [0.6, 0.65, 0.69, 0.7, 0.75, 0.9] {
            assert_eq!(moment_exponent(g, g) < 2.0, g > h0, "gamma = {g}");
        }
        assert!((moment_exponent(h0, h0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn moment_d_examples() {
        assert_eq!(linear_moment_d(1.0, 0.0, 0.75, 0.75).unwrap(), 0.0);
        // independent: 2^{2/3} + 2^{4/3} + 2^{1.25/(1.5*0.5)}
        let want = 2f64.powf(1.0 / 1.5) + 2f64.powf(1.0 / 0.75) + 2f64.powf(1.25 / 0.75);
        let v = linear_moment_d(1.0, 2.0, 0.75, 0.75).unwrap();
        assert!((v - want).abs() < 1e-12);
        assert!((v - 7.282045).abs() < 1e-5);
        assert!(linear_moment_d(1.0, 1.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn constant_sigma_closed_forms() {
        let x = smooth(64, |t| (5.0 * t).cos());
        let xi = InitialSegment::constant(0.25, 1.0 / 64.0, &[1.0]).unwrap();
        let ker = DelayKernel::discrete(0.25, vec![(0.25, 1.0)]).unwrap();
        let c = ConstantCoefficient::scalar(1.7);
        let o = SolveOptions::default();
        let rep = solve_delay(&x, &xi, &c, &ker, &o).unwrap();
        let k = smooth(64, |t| t * (1.0 - t));
        let z = directional_derivative(&rep, &x, &k, &c, &ker, &o).unwrap();
        for i in 0..=64 {
            assert!((z.at(i)[0] - 1.7 * k.at(i)[0]).abs() < 1e-14);
        }
        let field = solve_field(&rep, &x, &c, &ker, 1).unwrap();
        for (ci, &r) in field.r_nodes.iter().enumerate() {
            for t in 0..=64 {
                let want = if t >= r { 1.7 } else { 0.0 };
                assert_eq!(field.value(ci, t)[0], want);
            }
        }
    }

    #[test]
    fn zero_perturbation_gives_zero() {
        let (x, xi, s, ker, o) = setup_sin(64);
        let rep = solve_delay(&x, &xi, &s, &ker, &o).unwrap();
        let z = directional_derivative(&rep, &x, &GridPath::zeros(*x.grid(), 1), &s, &ker, &o).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn diagonal_is_sigma_and_below_diagonal_is_zero() {
        let (x, xi, s, ker, o) = setup_sin(64);
        let rep = solve_delay(&x, &xi, &s, &ker, &o).unwrap();
        let field = solve_field(&rep, &x, &s, &ker, 4).unwrap();
        let gc = GradCoefficient::along(&rep, &s, &ker).unwrap();
        for (c, &r) in field.r_nodes.iter().enumerate() {
            assert_eq!(field.value(c, r), gc.q_at(r));
            for t in 0..r {
                assert_eq!(field.value(c, t), &[0.0]);
            }
        }
    }

    #[test]
    fn finite_differences_nonlinear() {
        let (x, xi, s, ker, o) = setup_sin(128);
        for (i, k) in [
            smooth(128, |t| t * t),
            smooth(128, |t| (4.0 * t).sin()),
            smooth(128, |t| t * (2.0 - t).exp() - t),
        ]
        .iter()
        .enumerate()
        {
            let chk = finite_difference_check(&x, k, &xi, &s, &ker, &o, 1e-4, 1e-2).unwrap();
            assert!(chk.relative_error <= 1e-2, "k#{i}: {chk:?}");
        }
    }

    #[test]
    fn representation_matches_directional_derivative() {
        let (x, xi, s, ker, o) = setup_sin(64);
        let rep = solve_delay(&x, &xi, &s, &ker, &o).unwrap();
        let field = solve_field(&rep, &x, &s, &ker, 1).unwrap();
        let k = smooth(64, |t| (2.0 * t).sin() * t);
        let z = directional_derivative(&rep, &x, &k, &s, &ker, &o).unwrap();
        for t in [1usize, 10, 33, 64] {
            let v = field.represent(&k, t).unwrap();
            assert!((v[0] - z.at(t)[0]).abs() <= 1e-9 * z.at(t)[0].abs().max(1e-12));
        }
    }

    #[test]
    fn matrix_case_is_linear_in_k() {
        let g = UniformGrid::new(0.0, 1.0, 64).unwrap();
        let x = GridPath::from_fn(g, 2, |t, o| {
            o[0] = (3.0 * t).sin();
            o[1] = t * t - t;
        });
        let xi = InitialSegment::constant(0.25, 1.0 / 64.0, &[0.1, -0.2]).unwrap();
        let ker = DelayKernel::discrete(0.25, vec![(0.125, 0.5), (0.25, 0.5)]).unwrap();
        let s = BoundedTanh {
            n: 2,
            s: 1.0,
            b: 0.5,
            rho: 0.3,
        };
        let o = SolveOptions::default();
        let rep = solve_delay(&x, &xi, &s, &ker, &o).unwrap();
        let k1 = GridPath::from_fn(g, 2, |t, o| {
            o[0] = t;
            o[1] = (2.0 * t).sin();
        });
        let k2 = GridPath::from_fn(g, 2, |t, o| {
            o[0] = t * t;
            o[1] = -t;
        });
        let sum = GridPath::new(g, 2, k1.values().iter().zip(k2.values()).map(|(a, b)| 2.0 * a + b).collect()).unwrap();
        let z1 = directional_derivative(&rep, &x, &k1, &s, &ker, &o).unwrap();
        let z2 = directional_derivative(&rep, &x, &k2, &s, &ker, &o).unwrap();
        let zs = directional_derivative(&rep, &x, &sum, &s, &ker, &o).unwrap();
        let scale = zs.sup_norm();
        for i in 0..zs.values().len() {
            let lin = 2.0 * z1.values()[i] + z2.values()[i];
            assert!((zs.values()[i] - lin).abs() <= 1e-8 * scale);
        }
        let field = solve_field(&rep, &x, &s, &ker, 1).unwrap();
        let v = field.represent(&k1, 64).unwrap();
        for c in 0..2 {
            assert!((v[c] - z1.last()[c]).abs() <= 1e-9 * z1.sup_norm());
        }
    }

    #[test]
    fn stride_selection() {
        assert_eq!(default_stride(1024, 256), 4);
        assert_eq!(default_stride(256, 256), 1);
        assert_eq!(default_stride(300, 256), 2);
    }

    #[test]
    fn perturbation_must_start_at_zero() {
        let (x, xi, s, ker, o) = setup_sin(32);
        let rep = solve_delay(&x, &xi, &s, &ker, &o).unwrap();
        let k = smooth(32, |t| 1.0 + t);
        assert!(directional_derivative(&rep, &x, &k, &s, &ker, &o).is_err());
    }
}
