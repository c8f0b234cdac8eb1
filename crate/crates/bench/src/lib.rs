//! Seeded inputs shared by the benchmarks.

use lc_core::{Prng, Tensor};

/// `n` standard Gaussian values.
pub fn gaussian_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Prng::new(seed);
    (0..n).map(|_| rng.gaussian()).collect()
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::matrix(rows, cols, gaussian_vec(rows * cols, seed)).expect("positive dims")
}
