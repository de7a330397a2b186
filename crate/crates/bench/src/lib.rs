//! Deterministic inputs shared by the benchmarks.

use cxformer::attention::{ComplexAttention, ProjectionSharing};
use cxformer::model::{EncoderLayer, ModelConfig};
use cxformer::{ComplexTensor, ParamStore, RealTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn real(shape: &[usize], rng: &mut ChaCha8Rng) -> RealTensor {
    RealTensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

pub fn complex(shape: &[usize], rng: &mut ChaCha8Rng) -> ComplexTensor {
    let re = real(shape, rng);
    ComplexTensor::new(re, real(shape, rng)).expect("matching parts")
}

pub fn signal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Model settings at the scale of the smoke experiment.
pub fn bench_config(d_model: usize) -> ModelConfig {
    ModelConfig { d_model, n_heads: 4, d_ff: 4 * d_model, dropout_relu: 0.0, dropout_residual: 0.0, ..ModelConfig::default() }
}

pub fn attention_layer(d_model: usize, sharing: ProjectionSharing) -> (ParamStore, ComplexAttention) {
    let mut store = ParamStore::new();
    let layer = ComplexAttention::new(&mut store, "attn", d_model, 4, sharing, 0.0, &mut rng(1)).expect("valid layer");
    (store, layer)
}

pub fn encoder_layer(d_model: usize) -> (ParamStore, EncoderLayer) {
    let mut store = ParamStore::new();
    let layer = EncoderLayer::new(&mut store, "enc", &bench_config(d_model), &mut rng(2)).expect("valid layer");
    (store, layer)
}
