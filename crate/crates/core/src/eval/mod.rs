//! Seen/unseen splits, macro-F1, experiment protocols and the synthetic
//! polysomnography generator.

pub mod corpus;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod split;
pub mod synth;

pub use corpus::{synth_corpus, recordings_corpus};
pub use experiment::{evaluate, fold_plans, run_experiment, EvalConfig, Protocol, DIRECTIONAL_MARGIN};
pub use metrics::{macro_f1, ConfusionMatrix, F1Scores};
pub use report::{ExperimentReport, ResultRow, SplitKind, Table};
pub use split::{subject_folds, subject_split, SplitPlan};
pub use synth::{synth_generate, synth_recording, ClassBand, SynthSpec};
