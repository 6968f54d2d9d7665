//! Discrete increment calculus: the coboundary operators, grid Hölder
//! seminorms and a dyadic sewing routine.
//!
//! A 1-increment `h` assigns a vector to each ordered pair of grid nodes and
//! vanishes on the diagonal. `delta1` lifts a path to its increments
//! `f(j) - f(i)`; `delta2` measures how far a 1-increment is from being such
//! a difference, `h(s,t) - h(s,u) - h(u,t)`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{GridPath, UniformGrid};

type Germ = dyn Fn(usize, usize, &mut [f64]) + Send + Sync;

#[derive(Clone)]
enum Repr {
    Exact(GridPath),
    Table(Arc<Vec<f64>>),
    Germ(Arc<Germ>),
}

/// A two-parameter increment on grid node pairs, zero on the diagonal.
#[derive(Clone)]
pub struct Increment2 {
    grid: UniformGrid,
    dim: usize,
    repr: Repr,
}

impl fmt::Debug for Increment2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.repr {
            Repr::Exact(_) => "exact",
            Repr::Table(_) => "table",
            Repr::Germ(_) => "germ",
        };
        f.debug_struct("Increment2")
            .field("grid", &self.grid)
            .field("dim", &self.dim)
            .field("repr", &kind)
            .finish()
    }
}

impl Increment2 {
    /// Increment defined by a germ `(i, j, out)`; the diagonal is forced to zero.
    pub fn from_fn<F>(grid: UniformGrid, dim: usize, germ: F) -> Self
    where
        F: Fn(usize, usize, &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            grid,
            dim,
            repr: Repr::Germ(Arc::new(germ)),
        }
    }

    /// Dense `(n+1) x (n+1) x dim` table, evaluated once.
    pub fn tabulate<F>(grid: UniformGrid, dim: usize, germ: F) -> Self
    where
        F: Fn(usize, usize, &mut [f64]),
    {
        let n = grid.n_nodes();
        let mut table = vec![0.0; n * n * dim];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let at = (i * n + j) * dim;
                    germ(i, j, &mut table[at..at + dim]);
                }
            }
        }
        Self {
            grid,
            dim,
            repr: Repr::Table(Arc::new(table)),
        }
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value_into(&self, i: usize, j: usize, out: &mut [f64]) {
        if i == j {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        match &self.repr {
            Repr::Exact(f) => {
                for ((o, a), b) in out.iter_mut().zip(f.at(i)).zip(f.at(j)) {
                    *o = b - a;
                }
            }
            Repr::Table(t) => {
                let at = (i * self.grid.n_nodes() + j) * self.dim;
                out.copy_from_slice(&t[at..at + self.dim]);
            }
            Repr::Germ(g) => g(i, j, out),
        }
    }

    pub fn value(&self, i: usize, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.value_into(i, j, &mut out);
        out
    }
}

/// `(delta f)_{ij} = f(j) - f(i)`.
pub fn delta1(f: &GridPath) -> Increment2 {
    Increment2 {
        grid: *f.grid(),
        dim: f.dim(),
        repr: Repr::Exact(f.clone()),
    }
}

/// `(delta h)_{sut} = h(s,t) - h(s,u) - h(u,t)`, evaluated lazily.
#[derive(Clone, Debug)]
pub struct Increment3 {
    h: Increment2,
}

pub fn delta2(h: &Increment2) -> Increment3 {
    Increment3 { h: h.clone() }
}

impl Increment3 {
    pub fn dim(&self) -> usize {
        self.h.dim
    }

    pub fn value_into(&self, s: usize, u: usize, t: usize, out: &mut [f64]) {
        let d = self.h.dim;
        let mut su = vec![0.0; d];
        let mut ut = vec![0.0; d];
        self.h.value_into(s, t, out);
        self.h.value_into(s, u, &mut su);
        self.h.value_into(u, t, &mut ut);
        for k in 0..d {
            out[k] -= su[k] + ut[k];
        }
    }

    pub fn value(&self, s: usize, u: usize, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.h.dim];
        self.value_into(s, u, t, &mut out);
        out
    }

    /// Largest coordinate magnitude over all ordered triples `s <= u <= t`.
    pub fn max_abs(&self) -> f64 {
        let n = self.h.grid.n_nodes();
        let d = self.h.dim;
        (0..n)
            .into_par_iter()
            .map(|s| {
                let mut m = 0.0_f64;
                if let Repr::Exact(f) = &self.h.repr {
                    let v = f.values();
                    for k in 0..d {
                        let fs = v[s * d + k];
                        for u in s..n {
                            let fu = v[u * d + k];
                            let su = fu - fs;
                            m = v[u * d + k..]
                                .iter()
                                .step_by(d)
                                .map(|ft| ((ft - fs) - (su + (ft - fu))).abs())
                                .fold(m, |a, b| if b > a { b } else { a });
                        }
                    }
                    return m;
                }
                let mut out = vec![0.0; d];
                for u in s..n {
                    for t in u..n {
                        self.value_into(s, u, t, &mut out);
                        m = out.iter().fold(m, |m, v| m.max(v.abs()));
                    }
                }
                m
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Grid estimate of a Hölder seminorm. It is a lower bound for the continuum
/// supremum since only node pairs are inspected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub exponent: f64,
    pub seminorm: f64,
    pub argmax_pair: (usize, usize),
}

/// Pairs further apart than this many nodes are skipped by default on long grids.
pub const FULL_PAIR_LIMIT: usize = 4096;

/// `max_{i<j} |f(j) - f(i)| / |t_j - t_i|^mu` over nodes `from..=to`.
///
/// Full pair scan when the range has at most [`FULL_PAIR_LIMIT`] steps,
/// otherwise pairs are restricted to that span.
pub fn holder_seminorm(f: &GridPath, mu: f64, from: usize, to: usize) -> Result<HolderReport> {
    let span = (to.saturating_sub(from) > FULL_PAIR_LIMIT).then_some(FULL_PAIR_LIMIT);
    holder_seminorm_with(f, mu, from, to, span)
}

/// Seminorm over the whole grid.
pub fn holder_seminorm_full(f: &GridPath, mu: f64) -> Result<HolderReport> {
    holder_seminorm(f, mu, 0, f.grid().n_steps())
}

/// As [`holder_seminorm`] with an explicit cap on `j - i`.
pub fn holder_seminorm_with(
    f: &GridPath,
    mu: f64,
    from: usize,
    to: usize,
    max_span: Option<usize>,
) -> Result<HolderReport> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(invalid(format!("Hölder exponent must lie in (0, 1], got {mu}")));
    }
    if to > f.grid().n_steps() || to <= from {
        return Err(invalid(format!(
            "sub-interval {from}..={to} needs at least two nodes inside 0..={}",
            f.grid().n_steps()
        )));
    }
    let span = max_span.unwrap_or(usize::MAX).min(to - from).max(1);
    let dt = f.grid().dt();
    let denom: Vec<f64> = (0..=span).map(|k| (k as f64 * dt).powf(mu)).collect();

    let scan_row = |i: usize| -> (f64, usize) {
        let mut best = (0.0, i + 1);
        let last = (i + span).min(to);
        for j in i + 1..=last {
            let r = f.increment_norm(i, j) / denom[j - i];
            if r > best.0 {
                best = (r, j);
            }
        }
        best
    };

    let rows: Vec<(f64, usize)> = if (to - from) * span < 1 << 16 {
        (from..to).map(scan_row).collect()
    } else {
        (from..to).into_par_iter().map(scan_row).collect()
    };

    // First maximal pair in row order.
    let mut report = HolderReport {
        exponent: mu,
        seminorm: 0.0,
        argmax_pair: (from, from + 1),
    };
    for (k, (r, j)) in rows.into_iter().enumerate() {
        if r > report.seminorm {
            report.seminorm = r;
            report.argmax_pair = (from + k, j);
        }
    }
    Ok(report)
}

/// Dyadic compound sums of a 1-increment and its sewn indefinite integral.
#[derive(Clone, Debug)]
pub struct SewingResult {
    /// Indefinite integral on the finest dyadic sub-grid, starting at zero.
    pub path: GridPath,
    /// Compound sum over the whole interval at dyadic levels `0..=target_level`.
    pub levels: Vec<Vec<f64>>,
    /// Grid estimate of `sup |delta g(s,u,t)| / (|u-s|^{mu/2} |t-u|^{mu/2})` over dyadic triples.
    pub delta_norm: f64,
    /// `delta_norm * |I|^mu / (2^mu - 2)`.
    pub lambda_bound: f64,
    /// Every level gap satisfied `|S_{k+1} - S_k| <= delta_norm * 2^k * (|I| / 2^{k+1})^mu`.
    pub cauchy_ok: bool,
}

impl SewingResult {
    /// Sewn increment between two finest-level nodes.
    pub fn increment(&self, i: usize, j: usize) -> Vec<f64> {
        self.path
            .at(i)
            .iter()
            .zip(self.path.at(j))
            .map(|(a, b)| b - a)
            .collect()
    }
}

/// Sews `g` by summing it over dyadic partitions down to `target_level`.
pub fn sewing(g: &Increment2, mu: f64, target_level: u32) -> Result<SewingResult> {
    if mu <= 1.0 {
        return Err(invalid(format!(
            "sewing needs regularity mu > 1, got {mu}"
        )));
    }
    let grid = *g.grid();
    let n = grid.n_steps();
    let parts = 1usize
        .checked_shl(target_level)
        .filter(|p| *p <= n && n.is_multiple_of(*p))
        .ok_or_else(|| {
            Error::GridMismatch(format!(
                "{n} steps cannot host dyadic level {target_level}"
            ))
        })?;
    let d = g.dim();
    let length = grid.t_end() - grid.t_start();

    let mut levels = Vec::with_capacity(target_level as usize + 1);
    let mut buf = vec![0.0; d];
    for k in 0..=target_level {
        let stride = n >> k;
        let mut sum = vec![0.0; d];
        for i in (0..n).step_by(stride) {
            g.value_into(i, i + stride, &mut buf);
            sum.iter_mut().zip(&buf).for_each(|(s, v)| *s += v);
        }
        levels.push(sum);
    }

    let dg = delta2(g);
    let mut delta_norm = 0.0_f64;
    for k in 0..target_level {
        let stride = n >> k;
        let half = stride / 2;
        let denom = (half as f64 * grid.dt()).powf(mu);
        for i in (0..n).step_by(stride) {
            dg.value_into(i, i + half, i + stride, &mut buf);
            let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
            delta_norm = delta_norm.max(norm / denom);
        }
    }

    let mut cauchy_ok = true;
    for k in 0..target_level as usize {
        let gap = levels[k + 1]
            .iter()
            .zip(&levels[k])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let allowed = delta_norm * 2f64.powi(k as i32) * (length / 2f64.powi(k as i32 + 1)).powf(mu);
        if gap > allowed * (1.0 + 1e-9) + 1e-300 {
            cauchy_ok = false;
        }
    }

    let stride = n / parts;
    let fine = grid.coarsen(stride)?;
    let mut values = vec![0.0; fine.n_nodes() * d];
    for m in 0..parts {
        g.value_into(m * stride, (m + 1) * stride, &mut buf);
        for c in 0..d {
            values[(m + 1) * d + c] = values[m * d + c] + buf[c];
        }
    }

    Ok(SewingResult {
        path: GridPath::new(fine, d, values)?,
        levels,
        delta_norm,
        lambda_bound: delta_norm * length.powf(mu) / (2f64.powf(mu) - 2.0),
        cauchy_ok,
    })
}
