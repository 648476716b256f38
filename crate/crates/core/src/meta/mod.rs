//! S2MAML, the MAML baseline and plain supervised training.

mod config;
mod fomaml;
mod trainer;

pub use config::{Budget, MetaConfig, Mode};
pub use fomaml::{inner_loop, outer_step, LossGrads};
pub use trainer::{planned_updates, train, train_model, HistoryEntry, TrainHistory, TrainOptions, Trainer};

#[cfg(test)]
mod tests;
