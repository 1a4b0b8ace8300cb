//! Shared fixtures for the benchmarks.

use hvdpo::denoiser::{Denoiser, ModelConfig};
use hvdpo::{Scalar, Tensor};

/// Deterministic values in [-1, 1].
pub fn filled<F: Scalar>(shape: &[usize], salt: u64) -> Tensor<F> {
    Tensor::from_fn(shape, |i| F::of(((i as f64 + 1.0) * (0.7548 + salt as f64 * 0.13)).sin()))
}

pub fn model() -> Denoiser<f32> {
    Denoiser::init(1, ModelConfig::default()).expect("default config is valid")
}

pub fn video() -> Tensor<f32> {
    filled(&ModelConfig::default().video_shape(), 3)
}
