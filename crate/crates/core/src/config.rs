//! Run configuration: one TOML document with a section per pipeline stage.
//!
//! ```toml
//! [data]
//! manifest = "corpus/manifest.csv"
//!
//! [meta]
//! mode = "s2maml"
//! budget = { updates = 500 }
//!
//! [eval]
//! protocol = "three_vs_five"
//! seeds = [0, 1, 2, 3, 4]
//! ```
//!
//! Every key is optional and unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalConfig, SynthSpec};
use crate::meta::MetaConfig;
use crate::signal::PrepConfig;
use crate::sleepnet::EncoderConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// CSV with columns `dataset,subject,edf,hypnogram`.
    pub manifest: Option<PathBuf>,
    /// Sample cache written by `prep` and read by the training commands.
    pub cache: Option<PathBuf>,
    /// Signal labels to load; all non-annotation signals when empty.
    pub channels: Vec<String>,
    /// Seed of channel harmonization.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub prep: PrepConfig,
    pub model: EncoderConfig,
    pub meta: MetaConfig,
    pub eval: EvalConfig,
    pub synth: SynthSpec,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Narrow encoder and short budget for single-core synthetic runs.
    pub fn desk() -> Self {
        let meta = MetaConfig::desk(Default::default(), 0);
        Self {
            model: EncoderConfig::desk(),
            meta,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::default().overlay(text)
    }

    /// Keys present in `text` replace the corresponding values of `self`;
    /// tables merge recursively.
    pub fn overlay(&self, text: &str) -> Result<Self> {
        let top: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, top);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_over(&Self::default(), path)
    }

    pub fn load_over(base: &Self, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        base.overlay(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.prep.validate()?;
        self.model.validate()?;
        self.meta.validate()?;
        self.eval.validate()?;
        if self.model.in_channels != self.prep.n_channels || self.model.input_len != self.prep.window_len() {
            return Err(Error::Config(format!(
                "model expects {}x{} inputs but prep produces {}x{}",
                self.model.in_channels,
                self.model.input_len,
                self.prep.n_channels,
                self.prep.window_len()
            )));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) if !is_variant(b) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

// Externally tagged enums (`budget = { updates = 5 }`) are replaced whole.
fn is_variant(t: &toml::Table) -> bool {
    t.len() == 1 && t.keys().all(|k| k == "updates" || k == "epochs")
}
