//! Deterministic inputs shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dualspace::nets::normalize_rows;
use dualspace::EmbeddingBank;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.sample(StandardNormal))
}

pub fn unit_rows(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut m = gaussian(rows, cols, seed);
    normalize_rows(&mut m);
    m
}

pub fn labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(0..classes)).collect()
}

/// A bank of `n` random unit embeddings with random OVA outputs.
pub fn bank(n: usize, dim: usize, classes: usize, seed: u64) -> EmbeddingBank {
    let mut r = rng(seed ^ 1);
    let pos = Array2::from_shape_fn((n, classes), |_| r.random::<f64>());
    EmbeddingBank::new(unit_rows(n, dim, seed), pos, labels(n, classes, seed ^ 2), 0).expect("consistent shapes")
}

pub fn scores(n: usize, shift: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| r.sample::<f64, _>(StandardNormal) + shift).collect()
}
