//! Parameterised wrappers binding [`ParamStore`] entries to graph operators.

use rand::Rng;

use super::graph::{ConvSpec, Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::{Shape, Tensor};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_features.max(1) as f64).sqrt();
        let weight = store.add_uniform(
            format!("{name}.weight"),
            Shape::new(1, in_features, out_features),
            bound,
            rng,
        );
        let bias = store.add_uniform(format!("{name}.bias"), Shape::new(1, 1, out_features), bound, rng);
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = g.param(self.bias)?;
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: ConvSpec, rng: &mut R) -> Self {
        let fan_in = spec.in_channels * spec.kernel_size;
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let weight = store.add_uniform(
            format!("{name}.weight"),
            Shape::new(spec.out_channels, spec.in_channels, spec.kernel_size),
            bound,
            rng,
        );
        let bias = store.add_uniform(
            format!("{name}.bias"),
            Shape::new(1, 1, spec.out_channels),
            bound,
            rng,
        );
        Self { weight, bias, spec }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = g.param(self.bias)?;
        g.conv1d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl ConvTranspose1d {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: ConvSpec, rng: &mut R) -> Self {
        let fan_in = spec.out_channels * spec.kernel_size;
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let weight = store.add_uniform(
            format!("{name}.weight"),
            Shape::new(spec.in_channels, spec.out_channels, spec.kernel_size),
            bound,
            rng,
        );
        let bias = store.add_uniform(
            format!("{name}.bias"),
            Shape::new(1, 1, spec.out_channels),
            bound,
            rng,
        );
        Self { weight, bias, spec }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = g.param(self.bias)?;
        g.conv_transpose1d(x, w, b, self.spec)
    }
}

/// Per-channel scale `gamma`, shift `beta` and stabiliser `epsilon`.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub epsilon: f64,
}

impl LayerNorm {
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(Shape::new(1, 1, channels), 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(Shape::new(1, 1, channels)));
        Self {
            gamma,
            beta,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma)?;
        let beta = g.param(self.beta)?;
        g.layer_norm(x, gamma, beta, self.epsilon)
    }
}
