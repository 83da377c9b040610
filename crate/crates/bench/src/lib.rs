//! Seeded inputs shared by the benchmarks.

use avfusion::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
}

/// Scores with roughly `positive_rate` positives, positives shifted up.
pub fn scored_labels(n: usize, positive_rate: f64, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let pos = rng.random_bool(positive_rate);
            let s: f64 = rng.random_range(0.0..1.0) + if pos { 0.5 } else { 0.0 };
            (s, pos)
        })
        .unzip()
}

pub fn random_sample(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
}
