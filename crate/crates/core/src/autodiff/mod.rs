//! Dense tensors, a replayable tape with reverse-mode gradients, and ADAM.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::{gemm, tanh};
