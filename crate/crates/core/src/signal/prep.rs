//! Channel harmonization, normalization and windowing into model samples.

use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::resample::resample;
use crate::edf::{Recording, Stage};
use crate::error::{Error, Result};

/// A single-rate signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub samples: Vec<f32>,
    pub rate: f64,
}

impl Channel {
    pub fn is_dummy(&self) -> bool {
        self.samples.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepConfig {
    pub target_rate: f64,
    pub n_channels: usize,
    /// Epochs per model input window.
    pub context_epochs: usize,
    pub eps: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            target_rate: 102.4,
            n_channels: 9,
            context_epochs: 3,
            eps: 1e-8,
        }
    }
}

impl PrepConfig {
    /// Points per 30 s epoch (3072 at 102.4 Hz).
    pub fn epoch_len(&self) -> usize {
        (self.target_rate * crate::edf::EPOCH_SECONDS).round() as usize
    }

    pub fn window_len(&self) -> usize {
        self.epoch_len() * self.context_epochs
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_rate > 0.0) || self.n_channels == 0 || self.context_epochs == 0 || !(self.eps > 0.0) {
            return Err(Error::Config(format!("invalid preprocessing settings {self:?}")));
        }
        Ok(())
    }
}

/// A fixed-shape model input (`n_channels x window_len`, row-major) with
/// the stage of its central epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Arc<[f32]>,
    pub n_channels: usize,
    pub label: Stage,
    pub subject_id: Arc<str>,
    pub dataset_id: Arc<str>,
    /// Recording index within the subject.
    pub recording: u32,
}

impl Sample {
    pub fn window_len(&self) -> usize {
        self.x.len() / self.n_channels.max(1)
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.window_len();
        &self.x[c * n..(c + 1) * n]
    }

    /// Class index in `0..5`.
    pub fn class(&self) -> usize {
        self.label.class_index().expect("samples never carry excluded labels")
    }

    pub fn one_hot(&self) -> [f32; Stage::N_CLASSES] {
        let mut y = [0.0; Stage::N_CLASSES];
        y[self.class()] = 1.0;
        y
    }
}

/// Keeps a uniformly random subset of `n` channels when there are more,
/// appends all-zero channels when there are fewer, then shuffles.
pub fn harmonize_channels<R: Rng + ?Sized>(chs: Vec<Channel>, n: usize, rng: &mut R) -> Result<Vec<Channel>> {
    let Some(first) = chs.first() else {
        return Err(Error::Data("no channels to harmonize".into()));
    };
    let (rate, len) = (first.rate, first.samples.len());
    if let Some(bad) = chs.iter().find(|c| c.rate != rate || c.samples.len() != len) {
        return Err(Error::Data(format!(
            "channels must share rate and length: {} Hz x {} vs {} Hz x {}",
            rate,
            len,
            bad.rate,
            bad.samples.len()
        )));
    }
    let mut out: Vec<Channel> = if chs.len() > n {
        let mut keep = index::sample(rng, chs.len(), n).into_vec();
        keep.sort_unstable();
        let mut chs: Vec<Option<Channel>> = chs.into_iter().map(Some).collect();
        keep.into_iter().filter_map(|i| chs[i].take()).collect()
    } else {
        chs
    };
    while out.len() < n {
        out.push(Channel {
            samples: vec![0.0; len],
            rate,
        });
    }
    out.shuffle(rng);
    Ok(out)
}

/// `(x - mean) / (std + eps)` with the population standard deviation.
pub fn zscore(ch: &Channel, eps: f64) -> Channel {
    let n = ch.samples.len();
    if n == 0 {
        return ch.clone();
    }
    let mean = ch.samples.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = ch.samples.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
    let denom = var.sqrt() + eps;
    Channel {
        samples: ch.samples.iter().map(|&v| ((v as f64 - mean) / denom) as f32).collect(),
        rate: ch.rate,
    }
}

/// A recording after resampling, normalization and channel harmonization.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecording {
    pub subject_id: Arc<str>,
    pub dataset_id: Arc<str>,
    pub channels: Vec<Channel>,
    pub hypnogram: Vec<Stage>,
    pub epoch_len: usize,
    pub recording: u32,
}

/// Resamples every channel, trims them to a common length, normalizes each
/// one and harmonizes the channel count. Channel selection and order are
/// drawn once per recording.
pub fn prepare_recording<R: Rng + ?Sized>(rec: &Recording, cfg: &PrepConfig, rng: &mut R) -> Result<PreparedRecording> {
    cfg.validate()?;
    let mut chs: Vec<Channel> = rec
        .channels
        .iter()
        .map(|c| {
            resample(
                &Channel {
                    samples: c.samples.clone(),
                    rate: c.rate,
                },
                cfg.target_rate,
            )
        })
        .collect();
    let len = chs.iter().map(|c| c.samples.len()).min().unwrap_or(0);
    for c in &mut chs {
        c.samples.truncate(len);
    }
    let chs: Vec<Channel> = chs.iter().map(|c| zscore(c, cfg.eps)).collect();
    let channels = harmonize_channels(chs, cfg.n_channels, rng)?;
    let epoch_len = cfg.epoch_len();
    let n_epochs = (len / epoch_len).min(rec.hypnogram.len());
    Ok(PreparedRecording {
        subject_id: rec.subject_id.as_str().into(),
        dataset_id: rec.dataset_id.as_str().into(),
        channels,
        hypnogram: rec.hypnogram[..n_epochs].to_vec(),
        epoch_len,
        recording: 0,
    })
}

/// Start epochs of the non-overlapping windows of `width` epochs that
/// contain no excluded epoch. Scanning restarts right after an excluded
/// epoch, so a single bad epoch costs at most one window.
pub fn window_starts(stages: &[Stage], width: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut i = 0;
    while width > 0 && i + width <= stages.len() {
        match stages[i..i + width].iter().rposition(|&s| s == Stage::Excluded) {
            Some(bad) => i += bad + 1,
            None => {
                starts.push(i);
                i += width;
            }
        }
    }
    starts
}

/// Cuts a prepared recording into samples of `context_epochs` consecutive
/// epochs labelled with the central epoch's stage.
pub fn segment(rec: &PreparedRecording, context_epochs: usize) -> Vec<Sample> {
    let el = rec.epoch_len;
    let width = el * context_epochs;
    let n_ch = rec.channels.len();
    window_starts(&rec.hypnogram, context_epochs)
        .into_iter()
        .map(|start| {
            let mut x = Vec::with_capacity(n_ch * width);
            for ch in &rec.channels {
                x.extend_from_slice(&ch.samples[start * el..start * el + width]);
            }
            Sample {
                x: x.into(),
                n_channels: n_ch,
                label: rec.hypnogram[start + context_epochs / 2],
                subject_id: rec.subject_id.clone(),
                dataset_id: rec.dataset_id.clone(),
                recording: rec.recording,
            }
        })
        .collect()
}
