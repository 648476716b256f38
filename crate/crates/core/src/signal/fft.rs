//! Real-input DFT in magnitude/phase form.
//!
//! The forward transform is unnormalized, `X_k = sum_t x_t e^{-2 pi i k t / n}`;
//! the inverse divides by `n`.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Magnitudes below this fraction of the largest bin are treated as zero
/// when canonicalizing phase.
const ZERO_BIN_REL: f64 = 1e-12;

/// Spectrum of a real signal over its `n/2 + 1` non-negative frequency bins.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPair {
    pub magnitude: Vec<f64>,
    /// Radians in `(-pi, pi]`; zero at bins with (numerically) zero magnitude.
    pub phase: Vec<f64>,
}

impl SpectralPair {
    pub fn bins(&self) -> usize {
        self.magnitude.len()
    }
}

pub fn n_bins(n: usize) -> usize {
    n / 2 + 1
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Complex spectrum bins `0..=n/2` of a real signal.
pub fn rfft_complex(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(n, false).process(&mut buf);
    buf.truncate(n_bins(n));
    buf
}

/// Inverse of [`rfft_complex`]. The full spectrum is rebuilt with Hermitian
/// symmetry, and the DC and Nyquist bins contribute only their real part.
pub fn irfft_complex(bins: &[Complex64], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Data("irfft: length must be at least 1".into()));
    }
    if bins.len() != n_bins(n) {
        return Err(Error::shape(
            "irfft",
            format!("{} bins given, length {n} needs {}", bins.len(), n_bins(n)),
        ));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[0] = Complex64::new(bins[0].re, 0.0);
    for k in 1..bins.len() {
        if 2 * k == n {
            buf[k] = Complex64::new(bins[k].re, 0.0);
        } else {
            buf[k] = bins[k];
            buf[n - k] = bins[k].conj();
        }
    }
    plan(n, true).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|c| c.re * scale).collect())
}

pub fn to_polar(bins: &[Complex64]) -> SpectralPair {
    let magnitude: Vec<f64> = bins.iter().map(|c| c.norm()).collect();
    let floor = magnitude.iter().copied().fold(0.0, f64::max) * ZERO_BIN_REL;
    let phase = bins
        .iter()
        .zip(&magnitude)
        .map(|(c, &m)| if m <= floor { 0.0 } else { c.arg() })
        .collect();
    SpectralPair { magnitude, phase }
}

pub fn from_polar(sp: &SpectralPair) -> Vec<Complex64> {
    sp.magnitude
        .iter()
        .zip(&sp.phase)
        .map(|(&m, &p)| Complex64::from_polar(m, p))
        .collect()
}

pub fn rfft(x: &[f64]) -> SpectralPair {
    to_polar(&rfft_complex(x))
}

pub fn irfft(sp: &SpectralPair, n: usize) -> Result<Vec<f64>> {
    if sp.magnitude.len() != sp.phase.len() {
        return Err(Error::shape(
            "irfft",
            format!("{} magnitudes vs {} phases", sp.magnitude.len(), sp.phase.len()),
        ));
    }
    irfft_complex(&from_polar(sp), n)
}

/// `sum_t x_t^2` computed from the spectrum (Parseval, unnormalized forward).
pub fn spectral_energy(sp: &SpectralPair, n: usize) -> f64 {
    let mut e = 0.0;
    for (k, &m) in sp.magnitude.iter().enumerate() {
        let w = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
        e += w * m * m;
    }
    e / n as f64
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn rms(a: &[f64], b: &[f64]) -> f64 {
        (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let sp = rfft(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(sp.bins(), 3);
        for (&m, &p) in sp.magnitude.iter().zip(&sp.phase) {
            assert!((m - 1.0).abs() < 1e-15);
            assert!(p.abs() < 1e-15);
        }
    }

    #[test]
    fn constant_concentrates_at_dc() {
        let c = 1.5;
        let sp = rfft(&[c; 8]);
        assert_eq!(sp.bins(), 5);
        assert!((sp.magnitude[0] - 8.0 * c).abs() < 1e-12);
        for k in 1..5 {
            assert!(sp.magnitude[k] < 1e-12);
            assert_eq!(sp.phase[k], 0.0);
        }
    }

    #[test]
    fn bin_count_mismatch_is_an_error() {
        let sp = rfft(&[1.0, 2.0, 3.0, 4.0]);
        assert!(irfft(&sp, 6).is_err());
        assert!(irfft(&sp, 0).is_err());
        assert!(irfft(&sp, 5).is_ok());
    }

    #[test]
    fn inversion_at_reference_lengths() {
        for n in [4usize, 15, 3072] {
            let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
            let y = irfft(&rfft(&x), n).unwrap();
            assert!(rms(&x, &y) < 1e-6, "n={n}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn inverse_is_identity(x in proptest::collection::vec(-10.0f64..10.0, 1..4096)) {
            let y = irfft(&rfft(&x), x.len()).unwrap();
            prop_assert!(rms(&x, &y) < 1e-6);
        }

        #[test]
        fn parseval_holds(x in proptest::collection::vec(-10.0f64..10.0, 1..2048)) {
            let e: f64 = x.iter().map(|v| v * v).sum();
            let s = spectral_energy(&rfft(&x), x.len());
            prop_assert!((e - s).abs() <= 1e-5 * e.max(1e-12));
        }
    }
}
