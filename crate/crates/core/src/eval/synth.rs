use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::edf::{Recording, RecordingChannel, Stage, EPOCH_SECONDS};
use crate::error::{Error, Result};
use crate::signal::fft::irfft_complex;

/// Spectral signature of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassBand {
    pub lo: f64,
    pub hi: f64,
    /// RMS of the in-band component.
    pub amplitude: f64,
    /// RMS of an extra 0.5 to 40 Hz component.
    pub broadband: f64,
}

impl ClassBand {
    pub const fn new(lo: f64, hi: f64, amplitude: f64, broadband: f64) -> Self {
        Self {
            lo,
            hi,
            amplitude,
            broadband,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_datasets: usize,
    pub subjects_per_dataset: usize,
    pub recordings_per_subject: usize,
    pub minutes: f64,
    /// Sampling rate per dataset, cycled.
    pub rates: Vec<f64>,
    /// Channel count per dataset, cycled.
    pub channels: Vec<usize>,
    /// W, N1, N2, N3, REM.
    pub bands: [ClassBand; 5],
    /// RMS of the coloured background noise.
    pub noise: f64,
    /// Probability that the next epoch keeps the current stage.
    pub stay_prob: f64,
    /// Per-subject gains, channel permutation and noise colour, and
    /// per-dataset gain and low-pass filter.
    pub nuisance: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_datasets: 5,
            subjects_per_dataset: 8,
            recordings_per_subject: 2,
            minutes: 20.0,
            rates: vec![100.0, 128.0, 200.0, 256.0, 250.0],
            channels: vec![6, 9, 12, 4, 8],
            bands: [
                ClassBand::new(9.0, 11.0, 1.0, 0.0),
                ClassBand::new(5.0, 7.0, 1.0, 0.0),
                ClassBand::new(12.0, 15.0, 1.0, 0.0),
                ClassBand::new(0.5, 3.0, 2.0, 0.0),
                ClassBand::new(5.0, 7.0, 1.0, 1.0),
            ],
            noise: 0.3,
            stay_prob: 0.75,
            nuisance: true,
            seed: 0,
        }
    }
}

/// Per-dataset hardware.
#[derive(Debug, Clone, PartialEq)]
struct Hardware {
    rate: f64,
    channels: usize,
    gain: f64,
    cutoff: Option<f64>,
}

/// Per-subject physiology.
#[derive(Debug, Clone, PartialEq)]
struct Subject {
    gain: f64,
    channel_gains: Vec<f64>,
    noise_alpha: f64,
    noise_level: f64,
}

pub fn dataset_name(i: usize) -> String {
    if i < 26 {
        ((b'A' + i as u8) as char).to_string()
    } else {
        format!("D{i}")
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.channels.is_empty() {
            return Err(Error::Config("synth: rates and channels must be nonempty".into()));
        }
        if self.channels.contains(&0) || !(self.minutes > 0.0) || !(0.0..=1.0).contains(&self.stay_prob) {
            return Err(Error::Config("synth: invalid channel count, duration or stay probability".into()));
        }
        for &rate in &self.rates {
            if !(rate > 0.0) || (rate * EPOCH_SECONDS).fract() != 0.0 {
                return Err(Error::Config(format!("synth: rate {rate} Hz gives a fractional epoch length")));
            }
            let nyquist = (rate / 2.0).min(51.2);
            for (stage, b) in Stage::CLASSES.iter().zip(&self.bands) {
                if !(b.lo > 0.0 && b.lo < b.hi && b.hi < nyquist) {
                    return Err(Error::Config(format!(
                        "synth: {stage} band {}..{} Hz must lie inside (0, {nyquist}) Hz",
                        b.lo, b.hi
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn epochs_per_recording(&self) -> usize {
        (self.minutes * 60.0 / EPOCH_SECONDS).floor() as usize
    }

    fn hardware(&self, ds: usize) -> Hardware {
        let mut rng = stream_rng(self.seed, (ds as u64) << 40);
        let rate = self.rates[ds % self.rates.len()];
        let channels = self.channels[ds % self.channels.len()];
        if !self.nuisance {
            return Hardware {
                rate,
                channels,
                gain: 1.0,
                cutoff: None,
            };
        }
        Hardware {
            rate,
            channels,
            gain: rng.random_range(0.5..2.0),
            cutoff: Some(rng.random_range(25.0..45.0f64).min(0.45 * rate)),
        }
    }

    fn subject(&self, ds: usize, subj: usize, channels: usize) -> Subject {
        let mut rng = stream_rng(self.seed, ((ds as u64) << 40) | ((subj as u64 + 1) << 20));
        if !self.nuisance {
            return Subject {
                gain: 1.0,
                channel_gains: vec![1.0; channels],
                noise_alpha: 1.0,
                noise_level: 1.0,
            };
        }
        let mut channel_gains: Vec<f64> = (0..channels).map(|_| rng.random_range(0.5..1.5)).collect();
        channel_gains.shuffle(&mut rng);
        Subject {
            gain: rng.random_range(0.6..1.6),
            channel_gains,
            noise_alpha: rng.random_range(0.5..1.5),
            noise_level: rng.random_range(0.7..1.3),
        }
    }
}

/// Noise whose spectrum is flat in magnitude over `[lo, hi]` Hz (scaled by
/// `f^-alpha/2` when `alpha` is nonzero) with random phases, at unit RMS.
fn shaped_noise<R: Rng>(n: usize, rate: f64, lo: f64, hi: f64, alpha: f64, rng: &mut R) -> Result<Vec<f64>> {
    let df = rate / n as f64;
    let bins: Vec<Complex64> = (0..n / 2 + 1)
        .map(|k| {
            let f = k as f64 * df;
            if k == 0 || f < lo || f > hi || 2 * k == n {
                return Complex64::new(0.0, 0.0);
            }
            let m = f.powf(-alpha / 2.0);
            Complex64::from_polar(m, rng.random_range(-PI..PI))
        })
        .collect();
    let mut x = irfft_complex(&bins, n)?;
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    Ok(x)
}

/// Sticky Markov chain over the five stages starting in wake.
fn hypnogram<R: Rng>(n: usize, stay: f64, rng: &mut R) -> Vec<Stage> {
    let mut cur = 0;
    (0..n)
        .map(|i| {
            if i > 0 && rng.random::<f64>() >= stay {
                cur = (cur + rng.random_range(1..Stage::N_CLASSES)) % Stage::N_CLASSES;
            }
            Stage::CLASSES[cur]
        })
        .collect()
}

/// One synthetic recording; deterministic in `(spec.seed, ds, subj, rec)`.
pub fn synth_recording(spec: &SynthSpec, ds: usize, subj: usize, rec: usize) -> Result<Recording> {
    spec.validate()?;
    let hw = spec.hardware(ds);
    let sub = spec.subject(ds, subj, hw.channels);
    let mut rng = stream_rng(
        spec.seed,
        ((ds as u64) << 40) | ((subj as u64 + 1) << 20) | (rec as u64 + 1),
    );
    let epoch_len = (hw.rate * EPOCH_SECONDS) as usize;
    let stages = hypnogram(spec.epochs_per_recording(), spec.stay_prob, &mut rng);
    let mut chans = vec![Vec::with_capacity(stages.len() * epoch_len); hw.channels];
    for &stage in &stages {
        let b = spec.bands[stage.class_index().expect("generated stages are scored")];
        for (c, out) in chans.iter_mut().enumerate() {
            let band = shaped_noise(epoch_len, hw.rate, b.lo, b.hi, 0.0, &mut rng)?;
            let bg = shaped_noise(epoch_len, hw.rate, 0.3, hw.rate / 2.0, sub.noise_alpha, &mut rng)?;
            let broad = if b.broadband > 0.0 {
                shaped_noise(epoch_len, hw.rate, 0.5, 40f64.min(hw.rate / 2.0), 0.0, &mut rng)?
            } else {
                vec![0.0; epoch_len]
            };
            let g = hw.gain * sub.gain * sub.channel_gains[c];
            let noise = spec.noise * sub.noise_level;
            out.extend((0..epoch_len).map(|t| g * (b.amplitude * band[t] + b.broadband * broad[t] + noise * bg[t])));
        }
    }
    let channels = chans
        .into_iter()
        .enumerate()
        .map(|(c, mut x)| {
            if let Some(fc) = hw.cutoff {
                let a = 1.0 - (-2.0 * PI * fc / hw.rate).exp();
                let mut y = x.first().copied().unwrap_or(0.0);
                for v in &mut x {
                    y += a * (*v - y);
                    *v = y;
                }
            }
            RecordingChannel {
                label: format!("EEG{c}"),
                rate: hw.rate,
                samples: x.into_iter().map(|v| v as f32).collect(),
            }
        })
        .collect();
    let name = dataset_name(ds);
    Recording::new(&format!("{name}-s{subj:02}"), &name, channels, stages)
}

/// Every recording of the corpus, grouped by dataset.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<Vec<Recording>>> {
    spec.validate()?;
    (0..spec.n_datasets)
        .map(|d| {
            let mut v = Vec::new();
            for s in 0..spec.subjects_per_dataset {
                for r in 0..spec.recordings_per_subject {
                    v.push(synth_recording(spec, d, s, r)?);
                }
            }
            Ok(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::fft::rfft;

    fn small() -> SynthSpec {
        SynthSpec {
            n_datasets: 5,
            subjects_per_dataset: 2,
            recordings_per_subject: 1,
            minutes: 10.0,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn epoch_peaks_fall_in_class_bands() {
        let spec = small();
        let (mut hits, mut total) = (0, 0);
        for recs in synth_generate(&spec).unwrap() {
            for r in recs {
                let ch = &r.channels[0];
                let n = (ch.rate * EPOCH_SECONDS) as usize;
                for (e, stage) in r.hypnogram.iter().enumerate() {
                    let x: Vec<f64> = ch.samples[e * n..(e + 1) * n].iter().map(|&v| v as f64).collect();
                    let m = rfft(&x).magnitude;
                    let k = (1..m.len()).fold(1, |b, k| if m[k] > m[b] { k } else { b });
                    let f = k as f64 * ch.rate / n as f64;
                    let band = spec.bands[stage.class_index().unwrap()];
                    hits += (f >= band.lo && f <= band.hi) as usize;
                    total += 1;
                }
            }
        }
        assert!(hits as f64 >= 0.99 * total as f64, "{hits}/{total}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_recording(&small(), 1, 0, 0).unwrap();
        let b = synth_recording(&small(), 1, 0, 0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_recording(&small(), 1, 1, 0).unwrap());
    }

    #[test]
    fn shapes_follow_the_spec() {
        let spec = small();
        let all = synth_generate(&spec).unwrap();
        assert_eq!(all.len(), 5);
        for (d, recs) in all.iter().enumerate() {
            assert_eq!(recs.len(), 2);
            let r = &recs[0];
            assert_eq!(r.channels.len(), spec.channels[d]);
            assert_eq!(r.hypnogram.len(), 20);
            assert_eq!(r.channels[0].samples.len(), 20 * 30 * spec.rates[d] as usize);
            assert_eq!(r.dataset_id, dataset_name(d));
        }
        let none = SynthSpec {
            subjects_per_dataset: 0,
            ..small()
        };
        assert!(synth_generate(&none).unwrap().iter().all(Vec::is_empty));
    }

    #[test]
    fn bands_beyond_nyquist_are_rejected() {
        let mut spec = small();
        spec.bands[2].hi = 60.0;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let mut spec = small();
        spec.rates = vec![20.0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn stages_are_all_visited() {
        let r = synth_recording(&SynthSpec::default(), 0, 0, 0).unwrap();
        for s in Stage::CLASSES {
            assert!(r.hypnogram.contains(&s), "{s}");
        }
    }
}
