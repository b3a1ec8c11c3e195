//! Dense tensors, a matrix-level autodiff tape and the Adam optimizer.

mod adam;
mod params;
mod tape;
#[allow(clippy::module_inception)]
mod tensor;

pub use adam::{AdamConfig, AdamState, Moments};
pub use params::{ParamId, ParamStore, ParamTensor};
pub use tape::{
    cross_entropy, cross_entropy_per_example, distill_loss, dropout, linear, relu, Gradients, Mode, NodeId, Tape,
};
pub use tensor::Tensor;
