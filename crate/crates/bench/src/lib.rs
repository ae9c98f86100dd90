//! Shared fixtures for the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use yformer::model::ModelInput;
use yformer::numerics::{Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(dims: [usize; 3], seed: u64) -> Tensor {
    Tensor::randn(Shape(dims), &mut rng(seed))
}

/// Random batch for a model with the given geometry.
pub fn model_input(batch: usize, history: usize, horizon: usize, channels: usize, features: usize) -> ModelInput {
    ModelInput {
        past: randn([batch, history, channels], 1),
        past_marks: randn([batch, history, features], 2),
        future: None,
        future_marks: randn([batch, horizon, features], 3),
    }
}
