use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diff::OptimizerKind;
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// First-order MAML with the PhaseSwap pretext task in the inner loop.
    #[default]
    S2maml,
    /// First-order MAML with the supervised loss in the inner loop.
    Maml,
    /// Plain minibatch training on pooled samples.
    Sl,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::S2maml, Mode::Maml, Mode::Sl];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::S2maml => "S2MAML",
            Mode::Maml => "MAML",
            Mode::Sl => "SL",
        }
    }

    pub fn is_meta(self) -> bool {
        self != Mode::Sl
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s2maml" => Ok(Mode::S2maml),
            "maml" => Ok(Mode::Maml),
            "sl" => Ok(Mode::Sl),
            _ => Err(Error::Config(format!("unknown mode '{s}' (expected s2maml, maml or sl)"))),
        }
    }
}

/// When training stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    /// Passes over the pooled training samples.
    Epochs(usize),
    /// Gradient updates of the encoder.
    Updates(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub mode: Mode,
    pub lr_inner: f64,
    pub lr_outer: f64,
    pub n_inner: usize,
    /// Tasks drawn per dataset per outer iteration.
    pub n_tasks: usize,
    pub task_size: usize,
    pub budget: Budget,
    pub seed: u64,
    pub smoothing: f64,
    pub inner_optimizer: OptimizerKind,
    pub outer_optimizer: OptimizerKind,
    /// Minibatch size of the supervised baseline.
    pub sl_batch: usize,
    pub exec: Exec,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            mode: Mode::S2maml,
            lr_inner: 5e-5,
            lr_outer: 1e-4,
            n_inner: 1,
            n_tasks: 32,
            task_size: 8,
            budget: Budget::Epochs(20),
            seed: 0,
            smoothing: 0.1,
            inner_optimizer: OptimizerKind::Sgd,
            outer_optimizer: OptimizerKind::Adam,
            sl_batch: 64,
            exec: Exec::Parallel,
        }
    }
}

impl MetaConfig {
    /// Short schedule for single-core runs on the synthetic benchmark.
    pub fn desk(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            lr_inner: 1e-3,
            lr_outer: 3e-3,
            n_tasks: 4,
            sl_batch: 32,
            budget: Budget::Updates(250),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_inner > 0.0 && self.lr_inner.is_finite()) || !(self.lr_outer > 0.0 && self.lr_outer.is_finite()) {
            return bad(format!("learning rates must be positive (inner {}, outer {})", self.lr_inner, self.lr_outer));
        }
        if self.n_tasks == 0 || self.task_size == 0 || self.sl_batch == 0 {
            return bad("n_tasks, task_size and sl_batch must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return bad(format!("smoothing {} outside [0, 1]", self.smoothing));
        }
        if matches!(self.budget, Budget::Epochs(0) | Budget::Updates(0)) {
            return bad("empty training budget".into());
        }
        Ok(())
    }
}
