//! Gauss–Legendre rules and an adaptive integrator built on them.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

pub(crate) struct Rule {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl Rule {
    pub fn new(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        Self { x, w }
    }

    pub fn integrate(&self, f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self
            .x
            .iter()
            .zip(&self.w)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
    }
}

pub(crate) fn gl8() -> &'static Rule {
    static R: OnceLock<Rule> = OnceLock::new();
    R.get_or_init(|| Rule::new(8))
}

fn gl10() -> &'static Rule {
    static R: OnceLock<Rule> = OnceLock::new();
    R.get_or_init(|| Rule::new(10))
}

fn gl21() -> &'static Rule {
    static R: OnceLock<Rule> = OnceLock::new();
    R.get_or_init(|| Rule::new(21))
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

const MAX_PANELS: usize = 4000;

/// Globally adaptive Gauss–Legendre quadrature.
///
/// Each panel is estimated with 10 and 21 points; the panel with the largest
/// disagreement is bisected until the summed disagreement is at most
/// `max(abs_tol, rel_tol * |estimate|)`.
pub fn adaptive(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi) = (gl10(), gl21());
    let mut panel = |x0: f64, x1: f64| -> Result<Panel> {
        let coarse = lo.integrate(&mut f, x0, x1);
        let fine = hi.integrate(&mut f, x0, x1);
        if !fine.is_finite() {
            return Err(Error::Quadrature(format!(
                "non-finite integrand on [{x0}, {x1}]"
            )));
        }
        Ok(Panel {
            a: x0,
            b: x1,
            value: fine,
            error: (fine - coarse).abs(),
        })
    };
    let first = panel(a, b)?;
    let (mut total, mut error) = (first.value, first.error);
    let mut heap = std::collections::BinaryHeap::from([first]);
    loop {
        if error <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        let worst = heap.pop().expect("heap is never empty");
        let m = 0.5 * (worst.a + worst.b);
        if heap.len() >= MAX_PANELS || m == worst.a || m == worst.b {
            return Err(Error::Quadrature(format!(
                "no convergence on [{a}, {b}]: error estimate {error:e}, worst panel [{}, {}]",
                worst.a, worst.b
            )));
        }
        let (left, right) = (panel(worst.a, m)?, panel(m, worst.b)?);
        total += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_is_exact_for_polynomials() {
        let r = Rule::new(8);
        // degree 15 is integrated exactly
        let v = r.integrate(&mut |x| x.powi(14) + x.powi(15), 0.0, 1.0);
        assert!((v - (1.0 / 15.0 + 1.0 / 16.0)).abs() < 1e-14);
        let sum_w: f64 = r.w.iter().sum();
        assert!((sum_w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let v = adaptive(|x: f64| x.powf(-0.5), 0.0, 1.0, 1e-12, 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-8);
    }
}
