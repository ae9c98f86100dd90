//! Dense rank-3 tensors, the differentiable operator set, and parameter storage.

mod graph;
mod layers;
mod params;
mod tensor;

pub mod finite_diff;

pub use graph::{ConvSpec, Graph, PoolSpec, Var};
pub use layers::{Conv1d, ConvTranspose1d, LayerNorm, Linear};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{Shape, Tensor};

/// Slope of the negative branch of ELU used throughout the model.
pub const ELU_ALPHA: f64 = 1.0;

#[cfg(test)]
mod tests;
