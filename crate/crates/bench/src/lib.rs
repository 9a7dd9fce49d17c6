//! Shared fixtures for the benchmarks.

use phi4_core::noise::{sample_eta, NoiseKernel, NoiseSpec};
use phi4_core::{Grid, SpaceTimeField};

/// A stationary field sample on `grid` at `ε` with `frames` frames.
pub fn y_sample(grid: Grid, eps: f64, frames: usize, seed: u64) -> SpaceTimeField {
    let kernel = NoiseKernel::new(&NoiseSpec::default(), &grid, eps * eps / 8.0, eps).expect("resolved grid");
    sample_eta(&kernel, frames, seed).expect("sample").y
}
