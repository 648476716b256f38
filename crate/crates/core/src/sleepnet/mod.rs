//! Dual-branch convolutional encoder with a stage head and a PhaseSwap head.

mod config;
mod loss;
mod model;

pub use config::{ConvBlock, EncoderConfig};
pub use loss::{loss_with, smoothed_target, task_loss, Example, LossOptions, LossValue, GRAD_CHUNK, PROB_FLOOR};
pub use model::{classify, encode, input, Head, ModelBundle};
