//! Fixtures shared by the benchmarks.

use fdelay_core::delay::{DelayKernel, InitialSegment, ScalarSin};
use fdelay_core::fbm::{FbmSampler, SamplingMethod};
use fdelay_core::{GridPath, UniformGrid};

pub fn unit_grid(n: usize) -> UniformGrid {
    UniformGrid::new(0.0, 1.0, n).expect("valid grid")
}

/// One scalar fBm path with `H = 0.75`.
pub fn driver(n: usize, seed: u64) -> GridPath {
    let method = SamplingMethod::default_for(n);
    FbmSampler::new(unit_grid(n), 0.75, method)
        .expect("valid sampler")
        .sample_path(1, seed, 0)
}

/// Lebesgue-weighted delay on `[-1/4, 0]` with `sigma = 1 + sin(z) / 2`.
pub struct Problem {
    pub x: GridPath,
    pub xi: InitialSegment,
    pub kernel: DelayKernel,
    pub sigma: ScalarSin,
}

pub fn weighted_problem(n: usize, seed: u64) -> Problem {
    let x = driver(n, seed);
    Problem {
        xi: InitialSegment::constant(0.25, x.grid().dt(), &[0.5]).expect("valid history"),
        kernel: DelayKernel::lebesgue(0.25, 17).expect("valid kernel"),
        sigma: ScalarSin { a: 1.0, b: 0.5 },
        x,
    }
}
