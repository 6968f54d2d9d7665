//! Young integration by left-point Riemann sums, its a-priori bound, and
//! numerical residuals for integration by parts, the chain rule and Fubini.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::GridPath;
use crate::holder::holder_seminorm;

/// `(2^{a+b} - 2)^{-1}`, the sewing constant used in every bound of the crate.
pub fn sewing_constant(a: f64, b: f64) -> f64 {
    1.0 / (2f64.powf(a + b) - 2.0)
}

#[derive(Clone, Debug)]
pub struct YoungIntegralResult {
    /// Running integral `t -> J_{0t}(f dg)`, zero at the first node.
    pub integral_path: GridPath,
    /// `(level, J_{0T})` for each dyadic sub-grid, coarse to fine.
    pub levels: Vec<(u32, Vec<f64>)>,
    /// Fitted decay exponent of `|level_{k+1} - level_k|` in powers of two.
    pub rate_estimate: f64,
    pub warnings: Vec<String>,
}

/// Shape of `f dg`: `f` has `out * d` coordinates, `g` has `d`.
fn shapes(f: &GridPath, g: &GridPath) -> Result<(usize, usize)> {
    if !f.grid().same_as(g.grid()) {
        return Err(Error::GridMismatch(format!(
            "integrand on {:?}, integrator on {:?}",
            f.grid(),
            g.grid()
        )));
    }
    let d = g.dim();
    if !f.dim().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: f.dim(),
        });
    }
    Ok((f.dim() / d, d))
}

/// `sum_{i in from..to step stride} f(t_i) (g(t_{i+stride}) - g(t_i))` into `acc`.
fn left_sum(f: &GridPath, g: &GridPath, from: usize, to: usize, stride: usize, acc: &mut [f64]) {
    let d = g.dim();
    let out = acc.len();
    let mut i = from;
    while i + stride <= to {
        let fi = f.at(i);
        let (g0, g1) = (g.at(i), g.at(i + stride));
        for r in 0..out {
            let row = &fi[r * d..(r + 1) * d];
            acc[r] += row
                .iter()
                .zip(g0.iter().zip(g1))
                .map(|(a, (x0, x1))| a * (x1 - x0))
                .sum::<f64>();
        }
        i += stride;
    }
}

/// Left-point Riemann sums of `f dg` with `f` matrix-valued (row-major `out x d`).
pub fn young_integrate(
    f: &GridPath,
    g: &GridPath,
    kappa: f64,
    gamma: f64,
) -> Result<YoungIntegralResult> {
    let (out, _) = shapes(f, g)?;
    let mut warnings = Vec::new();
    if kappa + gamma <= 1.0 {
        warnings.push(format!(
            "kappa + gamma = {} <= 1: Riemann sums need not converge",
            kappa + gamma
        ));
    }
    let grid = *g.grid();
    let n = grid.n_steps();

    let mut values = vec![0.0; grid.n_nodes() * out];
    for i in 0..n {
        let (head, tail) = values.split_at_mut((i + 1) * out);
        let next = &mut tail[..out];
        next.copy_from_slice(&head[i * out..]);
        left_sum(f, g, i, i + 1, 1, next);
    }
    let integral_path = GridPath::new(grid, out, values)?;

    let mut levels = Vec::new();
    if grid.is_dyadic() {
        let depth = n.trailing_zeros();
        for k in 0..=depth {
            let mut acc = vec![0.0; out];
            left_sum(f, g, 0, n, n >> k, &mut acc);
            levels.push((k, acc));
        }
    } else {
        levels.push((0, integral_path.last().to_vec()));
    }
    let rate_estimate = level_rate(&levels);

    Ok(YoungIntegralResult {
        integral_path,
        levels,
        rate_estimate,
        warnings,
    })
}

/// Decay exponent from dyadic levels: minus the least-squares slope of
/// `log2 |S_{k+1} - S_k|` against `k`, fitted from level 6 on when at least
/// three gaps are available there.
pub fn level_rate(levels: &[(u32, Vec<f64>)]) -> f64 {
    let gaps: Vec<(f64, f64)> = levels
        .windows(2)
        .filter_map(|w| {
            let gap = w[1]
                .1
                .iter()
                .zip(&w[0].1)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            (gap > 0.0).then(|| (w[0].0 as f64, gap.log2()))
        })
        .collect();
    let tail: Vec<(f64, f64)> = gaps.iter().copied().filter(|(k, _)| *k >= 6.0).collect();
    let pts = if tail.len() >= 3 { tail } else { gaps };
    -slope(&pts)
}

/// Ordinary least-squares slope of `y` on `x`; NaN with fewer than two points.
pub fn slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// `||f||_inf ||g||_gamma L^gamma + c ||f||_kappa ||g||_gamma L^{gamma+kappa}`.
pub fn apriori_bound_from_norms(
    f_sup: f64,
    f_kappa: f64,
    g_gamma: f64,
    kappa: f64,
    gamma: f64,
    length: f64,
) -> Result<f64> {
    if kappa + gamma <= 1.0 {
        return Err(invalid(format!(
            "a-priori bound needs kappa + gamma > 1, got {}",
            kappa + gamma
        )));
    }
    Ok(f_sup * g_gamma * length.powf(gamma)
        + sewing_constant(gamma, kappa) * f_kappa * g_gamma * length.powf(gamma + kappa))
}

/// A-priori bound for `J_{st}(f dg)` on nodes `s..=t` with grid-estimated norms,
/// each seminorm multiplied by `inflate`.
pub fn apriori_bound(
    f: &GridPath,
    g: &GridPath,
    kappa: f64,
    gamma: f64,
    s: usize,
    t: usize,
    inflate: f64,
) -> Result<f64> {
    shapes(f, g)?;
    let f_sup = (s..=t)
        .map(|i| f.at(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let f_kappa = holder_seminorm(f, kappa, s, t)?.seminorm * inflate;
    let g_gamma = holder_seminorm(g, gamma, s, t)?.seminorm * inflate;
    let length = g.grid().node(t) - g.grid().node(s);
    apriori_bound_from_norms(f_sup, f_kappa, g_gamma, kappa, gamma, length)
}

fn scalar_integral(f: &GridPath, g: &GridPath) -> Result<Vec<f64>> {
    Ok(young_integrate(f, g, 1.0, 1.0)?.integral_path.into_values())
}

/// `max_t |f g(t) - f g(0) - J_{0t}(f dg) - J_{0t}(g df)|`, componentwise.
pub fn check_ibp(f: &GridPath, g: &GridPath) -> Result<f64> {
    f.check_compatible(g)?;
    let mut worst = 0.0_f64;
    for c in 0..f.dim() {
        let fc = GridPath::new(*f.grid(), 1, f.component(c))?;
        let gc = GridPath::new(*g.grid(), 1, g.component(c))?;
        let fdg = scalar_integral(&fc, &gc)?;
        let gdf = scalar_integral(&gc, &fc)?;
        let p0 = fc.at(0)[0] * gc.at(0)[0];
        for i in 0..fc.len() {
            let r = fc.at(i)[0] * gc.at(i)[0] - p0 - fdg[i] - gdf[i];
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// Chain-rule residual for `x = x0 + J(g dh)`:
/// `max_t |fun(x_t) - fun(x_0) - J_{0t}(fun'(x) g dh)|`.
pub fn check_chain_rule(
    fun: impl Fn(f64) -> f64,
    dfun: impl Fn(f64) -> f64,
    x0: f64,
    g: &GridPath,
    h: &GridPath,
) -> Result<f64> {
    if g.dim() != 1 || h.dim() != 1 {
        return Err(invalid("chain-rule check is scalar"));
    }
    g.check_compatible(h)?;
    let grid = *h.grid();
    let x: Vec<f64> = scalar_integral(g, h)?.into_iter().map(|v| x0 + v).collect();
    let integrand = GridPath::new(
        grid,
        1,
        x.iter().zip(g.values()).map(|(xv, gv)| dfun(*xv) * gv).collect(),
    )?;
    let j = scalar_integral(&integrand, h)?;
    let f0 = fun(x[0]);
    Ok(x.iter()
        .zip(&j)
        .map(|(xv, jv)| (fun(*xv) - f0 - jv).abs())
        .fold(0.0, f64::max))
}

/// Both sides of `int_0^T int_0^r h(r,u) dg_u df_r = int_0^T int_u^T h(r,u) df_r dg_u`.
///
/// The kernel is assumed Hölder in each argument uniformly; this is not verified.
pub fn fubini_sides<H>(h: H, f: &GridPath, g: &GridPath) -> Result<(f64, f64)>
where
    H: Fn(f64, f64) -> f64 + Sync,
{
    if f.dim() != 1 || g.dim() != 1 {
        return Err(invalid("Fubini check is scalar"));
    }
    f.check_compatible(g)?;
    let grid = *f.grid();
    let n = grid.n_steps();

    // inner_l[i] = int_0^{t_i} h(t_i, u) dg_u
    let inner_l: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = grid.node(i);
            (0..i)
                .map(|j| h(r, grid.node(j)) * (g.at(j + 1)[0] - g.at(j)[0]))
                .sum()
        })
        .collect();
    // inner_r[j] = int_{t_j}^T h(r, t_j) df_r
    let inner_r: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let u = grid.node(j);
            (j..n)
                .map(|i| h(grid.node(i), u) * (f.at(i + 1)[0] - f.at(i)[0]))
                .sum()
        })
        .collect();

    let lhs = (0..n).map(|i| inner_l[i] * (f.at(i + 1)[0] - f.at(i)[0])).sum();
    let rhs = (0..n).map(|j| inner_r[j] * (g.at(j + 1)[0] - g.at(j)[0])).sum();
    Ok((lhs, rhs))
}

/// `|LHS - RHS|` of [`fubini_sides`].
pub fn check_fubini<H>(h: H, f: &GridPath, g: &GridPath) -> Result<f64>
where
    H: Fn(f64, f64) -> f64 + Sync,
{
    let (l, r) = fubini_sides(h, f, g)?;
    Ok((l - r).abs())
}
