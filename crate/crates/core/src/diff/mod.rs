//! Minimal reverse-mode differentiation: tensors, layer primitives,
//! optimizers, finite-difference checks and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, Evaluation, GradCheckReport};
pub use optim::{adam_step, sgd_step, AdamState, Optimizer, OptimizerKind};
pub use params::{Group, ParamSet};
pub use scalar::Scalar;
pub use tape::{Gradients, Padding, Tape, Var};
pub use tensor::Tensor;
