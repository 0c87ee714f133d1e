//! Dense tensors with a reverse-mode tape, sized for the operations the
//! models in this crate need.

pub mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub use kernels::{logistic_loss, sigmoid};
