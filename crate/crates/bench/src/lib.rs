//! Inputs shared by the benchmarks in `benches/`.

use sparsae_core::linalg::Mat;
use sparsae_core::model::{init_dense, sparsify_rows, Architecture, MlpAutoencoder};

/// Deterministic matrix with entries in `[-1, 1)`.
pub fn test_matrix(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
    Mat::from_fn(rows, cols, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    })
}

/// Diffusion-sized autoencoder with 20% of its rows active.
pub fn sparse_diffusion_model(seed: u64) -> MlpAutoencoder {
    let mut m = init_dense(&Architecture::diffusion(), seed);
    sparsify_rows(&mut m, 0.2, seed).expect("valid density");
    m
}
