//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

pub mod adam;
pub mod gradcheck;
pub mod ops;
pub mod real;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_directions, grad_check_inputs, GradCheckReport};
pub use real::{dot, MatMut, MatRef, Real};
pub use tape::{BackwardCtx, BackwardOp, Gradients, Tape, Var};
pub use tensor::Tensor;
