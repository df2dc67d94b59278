//! Fixtures shared by the benchmarks.

use vibed_core::{gen_synthetic, ModelConfig, Sample, SynthConfig, Tensor, Variant};

/// Deterministic, non-trivial matrix for kernel timings.
pub fn matrix(rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// `n` synthetic samples of `frames` × `dim`, all classes represented.
pub fn samples(n: usize, frames: usize, dim: usize) -> Vec<Sample> {
    let per_class = n.div_ceil(4).max(1);
    let ds = gen_synthetic(&SynthConfig { per_class, frames, dim, ..SynthConfig::default() })
        .expect("valid synthetic config");
    ds.records().iter().take(n).map(|h| Sample::clone(&h.load().expect("in-memory sample"))).collect()
}

/// Full-width model for the given variant at `frames` × `dim`.
pub fn full_config(variant: Variant, frames: usize, dim: usize) -> ModelConfig {
    ModelConfig { variant, seq_len: frames, feature_dim: dim, ..ModelConfig::default() }
}

/// Narrow model used where full width would make a run take minutes.
pub fn small_config(variant: Variant, frames: usize, dim: usize) -> ModelConfig {
    ModelConfig {
        hidden: 64,
        heads: 4,
        d_ff: 128,
        mlp_hidden: 64,
        ..full_config(variant, frames, dim)
    }
}
