//! Shared fixtures for the benchmark suite.

use dmia_core::attack::{train_deep_kernel_from_pool, TrainConfig, TrainedKernel};
use dmia_core::numeric::{gaussian_noise, Matrix, RngStream};
use dmia_core::world::EncoderHandle;

/// Batch size used across the benchmarks; matches the detection default.
pub const BATCH: usize = 128;

pub fn batch(seed: u64, rows: usize, dim: usize) -> Matrix {
    gaussian_noise(rows, dim, 1.0, RngStream::new(seed)).unwrap()
}

/// A small trained kernel over 8-dimensional inputs.
pub fn trained_kernel(seed: u64) -> TrainedKernel {
    let cfg = TrainConfig {
        epochs: 20,
        gen_pool_size: Some(512),
        ..TrainConfig::default()
    };
    let non = batch(seed, 512, 8);
    let gen = batch(seed + 1, 512, 8);
    train_deep_kernel_from_pool(
        &non,
        &gen,
        &EncoderHandle::Identity,
        &cfg,
        RngStream::new(seed),
    )
    .unwrap()
}
