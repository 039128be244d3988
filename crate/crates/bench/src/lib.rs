//! Fixtures shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `rows x cols` matrix with entries uniform in `[-1, 1)`.
pub fn random_f32(seed: u64, rows: usize, cols: usize) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub fn random_f64(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    random_f32(seed, rows, cols).mapv(f64::from)
}

/// Points around `clusters` random centres, so K-means has structure to find.
pub fn clustered_f32(seed: u64, rows: usize, cols: usize, clusters: usize) -> Array2<f32> {
    let centres = random_f32(seed, clusters, cols).mapv(|v| v * 4.0);
    let noise = random_f32(seed.wrapping_add(1), rows, cols);
    Array2::from_shape_fn((rows, cols), |(i, j)| centres[[i % clusters, j]] + 0.3 * noise[[i, j]])
}
