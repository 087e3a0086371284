//! Dense tensors, reverse-mode differentiation, Adam and checkpoints.

mod adam;
mod checkpoint;
mod graph;
mod param;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use graph::{Graph, Var, ACOS_GRAD_CLIP};
pub use param::{Gradients, Param, ParamId, ParamStore};
pub use tensor::Tensor;
