//! Uniform time grids and vector-valued paths sampled on them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Uniform partition of `[t_start, t_end]` into `n_steps` cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
}

impl UniformGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_end <= t_start {
            return Err(invalid(format!(
                "grid needs t_end > t_start, got [{t_start}, {t_end}]"
            )));
        }
        if n_steps == 0 {
            return Err(invalid("grid needs at least one step"));
        }
        Ok(Self {
            t_start,
            t_end,
            n_steps,
        })
    }

    /// Grid on `[t_start, t_start + n_steps * dt]`.
    pub fn with_step(t_start: f64, dt: f64, n_steps: usize) -> Result<Self> {
        Self::new(t_start, t_start + dt * n_steps as f64, n_steps)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_end
        } else {
            self.t_start + i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|i| self.node(i))
    }

    /// Index of the node at time `t`, if `t` sits on the grid within `1e-9` steps.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_start) / self.dt();
        let i = x.round();
        if (x - i).abs() <= 1e-9 * x.abs().max(1.0) && i >= 0.0 && i as usize <= self.n_steps {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Number of whole grid steps in a duration, if it is one.
    pub fn steps_in(&self, duration: f64) -> Option<usize> {
        let x = duration / self.dt();
        let i = x.round();
        ((x - i).abs() <= 1e-9 * x.abs().max(1.0) && i >= 0.0).then_some(i as usize)
    }

    /// The sub-grid keeping every `stride`-th node.
    pub fn coarsen(&self, stride: usize) -> Result<Self> {
        if stride == 0 || !self.n_steps.is_multiple_of(stride) {
            return Err(invalid(format!(
                "stride {stride} does not divide {} steps",
                self.n_steps
            )));
        }
        Self::new(self.t_start, self.t_end, self.n_steps / stride)
    }

    /// Same spacing and node positions, up to a relative tolerance.
    pub fn same_as(&self, other: &UniformGrid) -> bool {
        let scale = (self.t_end - self.t_start).abs().max(1.0);
        self.n_steps == other.n_steps
            && (self.t_start - other.t_start).abs() <= 1e-10 * scale
            && (self.t_end - other.t_end).abs() <= 1e-10 * scale
    }

    pub fn is_dyadic(&self) -> bool {
        self.n_steps.is_power_of_two()
    }
}

/// A function on a [`UniformGrid`] with values in `R^dim`, stored node-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    grid: UniformGrid,
    dim: usize,
    values: Vec<f64>,
}

impl GridPath {
    pub fn new(grid: UniformGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("path dimension must be at least 1"));
        }
        if values.len() != grid.n_nodes() * dim {
            return Err(Error::DimensionMismatch {
                expected: grid.n_nodes() * dim,
                actual: values.len(),
            });
        }
        Ok(Self { grid, dim, values })
    }

    pub fn zeros(grid: UniformGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; grid.n_nodes() * dim.max(1)],
        }
    }

    pub fn from_fn(grid: UniformGrid, dim: usize, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut values = vec![0.0; grid.n_nodes() * dim];
        for (i, row) in values.chunks_exact_mut(dim).enumerate() {
            f(grid.node(i), row);
        }
        Self { grid, dim, values }
    }

    pub fn from_scalar_fn(grid: UniformGrid, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, 1, |t, out| out[0] = f(t))
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn at_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// One coordinate as a scalar series.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.dim).copied().collect()
    }

    pub fn last(&self) -> &[f64] {
        self.at(self.grid.n_steps)
    }

    /// Restriction to nodes `from..=to`.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.grid.n_steps {
            return Err(invalid(format!(
                "invalid node range {from}..={to} on {} steps",
                self.grid.n_steps
            )));
        }
        let grid = UniformGrid::new(self.grid.node(from), self.grid.node(to), to - from)?;
        Ok(Self {
            grid,
            dim: self.dim,
            values: self.values[from * self.dim..(to + 1) * self.dim].to_vec(),
        })
    }

    /// Sub-sampling at every `stride`-th node.
    pub fn coarsen(&self, stride: usize) -> Result<Self> {
        let grid = self.grid.coarsen(stride)?;
        let values = (0..grid.n_nodes())
            .flat_map(|i| self.at(i * stride).iter().copied())
            .collect();
        Ok(Self {
            grid,
            dim: self.dim,
            values,
        })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `max_i |self(i) - other(i)|` over nodes and coordinates.
    pub fn sup_distance(&self, other: &GridPath) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn check_compatible(&self, other: &GridPath) -> Result<()> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        Ok(())
    }

    pub(crate) fn increment_norm(&self, i: usize, j: usize) -> f64 {
        self.at(i)
            .iter()
            .zip(self.at(j))
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_and_lookup() {
        let g = UniformGrid::new(-0.5, 1.5, 8).unwrap();
        assert_eq!(g.dt(), 0.25);
        assert_eq!(g.node(0), -0.5);
        assert_eq!(g.node(8), 1.5);
        assert_eq!(g.index_of(0.0), Some(2));
        assert_eq!(g.index_of(0.1), None);
        assert_eq!(g.steps_in(0.75), Some(3));
        assert_eq!(g.steps_in(0.3), None);
    }

    #[test]
    fn grid_rejects_degenerate() {
        assert!(UniformGrid::new(1.0, 1.0, 4).is_err());
        assert!(UniformGrid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn path_length_checked() {
        let g = UniformGrid::new(0.0, 1.0, 4).unwrap();
        assert!(GridPath::new(g, 2, vec![0.0; 10]).is_ok());
        assert!(GridPath::new(g, 2, vec![0.0; 9]).is_err());
    }

    #[test]
    fn coarsen_keeps_endpoints() {
        let g = UniformGrid::new(0.0, 1.0, 8).unwrap();
        let p = GridPath::from_scalar_fn(g, |t| t * t);
        let c = p.coarsen(4).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.at(1)[0], 0.25);
        assert_eq!(c.at(2)[0], 1.0);
        assert!(p.coarsen(3).is_err());
    }
}
