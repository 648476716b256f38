//! Preprocessing from raw recordings to fixed-shape samples, plus the
//! real-FFT primitives used by PhaseSwap.

pub mod cache;
pub mod fft;
pub mod prep;
pub mod resample;

pub use fft::{irfft, rfft, SpectralPair};
pub use prep::{harmonize_channels, prepare_recording, segment, zscore, Channel, PrepConfig, PreparedRecording, Sample};
pub use resample::resample;
