//! Shared input builders for the pipeline benchmarks: deterministic
//! mid-sized fixtures so runs are comparable across machines and commits.

use ideolens_core::embedding::ImageEmbedding;
use ideolens_core::forest::TrainingMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` points around `k` well-separated centers in `dim` dimensions.
pub fn clustered_points(n: usize, dim: usize, k: usize, seed: u64) -> Vec<ImageEmbedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            (0..dim)
                .map(|d| if d % k == c { 4.0 } else { 0.0 } + rng.random_range(-0.5..0.5))
                .collect()
        })
        .collect();
    (0..n)
        .map(|i| {
            let center = &centers[i % k];
            let values: Vec<f32> = center
                .iter()
                .map(|c| (c + rng.random_range(-0.25..0.25)) as f32)
                .collect();
            ImageEmbedding::new(values).expect("benchmark points are nonempty and finite")
        })
        .collect()
}

/// Regression fixture with a smooth nonlinear target over `p` features.
pub fn regression_matrix(n: usize, p: usize, seed: u64) -> TrainingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    let ids = (0..n).map(|i| format!("row-{i:05}")).collect();
    for _ in 0..n {
        let row: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let signal: f64 = row
            .iter()
            .enumerate()
            .map(|(j, v)| v * (1.0 - j as f64 / p as f64) + (v * 3.0).sin() * 0.2)
            .sum::<f64>()
            / p as f64;
        y.push(signal + rng.random_range(-0.05..0.05));
        x.extend(row);
    }
    TrainingMatrix::new(ids, x, p, y).expect("benchmark matrix is well formed")
}

/// Deterministic pseudo-random scores resembling a bimodal population.
pub fn bimodal_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mode = if i % 2 == 0 { -0.5 } else { 0.5 };
            (mode + rng.random_range(-0.2..0.2f64)).clamp(-1.0, 1.0)
        })
        .collect()
}
