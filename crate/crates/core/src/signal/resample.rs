//! Band-limited rational resampling with a polyphase Kaiser-windowed sinc.

use super::prep::Channel;

/// Kaiser window shape parameter.
pub const KAISER_BETA: f64 = 8.6;
/// Filter taps evaluated per output sample (per polyphase branch).
pub const TAPS_PER_PHASE: usize = 32;
/// Above this many phases the filter is evaluated on the fly instead of
/// being tabulated.
const MAX_TABLE_PHASES: u64 = 4096;

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `(up, down)` with `up / down == to / from`, in lowest terms. Rates are
/// resolved to 1e-6 Hz.
pub fn rational_ratio(from: f64, to: f64) -> (u64, u64) {
    let a = (to * 1e6).round() as u64;
    let b = (from * 1e6).round() as u64;
    let g = gcd(a, b).max(1);
    (a / g, b / g)
}

struct Kernel {
    cutoff: f64,
    half: f64,
    i0_beta: f64,
}

impl Kernel {
    fn new(up: u64, down: u64) -> Self {
        Self {
            cutoff: (up as f64 / down as f64).min(1.0),
            half: (TAPS_PER_PHASE / 2) as f64,
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    /// Filter taps for fractional delay `frac` in `[0, 1)`, normalized to
    /// unit DC gain. Tap `i` multiplies input sample `base - 15 + i`.
    fn taps(&self, frac: f64) -> [f64; TAPS_PER_PHASE] {
        let mut h = [0.0; TAPS_PER_PHASE];
        let lo = 1 - (TAPS_PER_PHASE as isize / 2);
        for (i, tap) in h.iter_mut().enumerate() {
            let tau = frac - (lo + i as isize) as f64;
            let r = tau / self.half;
            let w = if r.abs() >= 1.0 {
                0.0
            } else {
                bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta
            };
            let arg = self.cutoff * tau;
            let sinc = if arg.abs() < 1e-12 {
                1.0
            } else {
                (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
            };
            *tap = self.cutoff * sinc * w;
        }
        let s: f64 = h.iter().sum();
        if s != 0.0 {
            h.iter_mut().for_each(|v| *v /= s);
        }
        h
    }
}

/// Output length for `len` input samples.
pub fn output_len(len: usize, from: f64, to: f64) -> usize {
    (len as f64 * to / from).round() as usize
}

/// Resamples a signal from `from` Hz to `to` Hz. Equal rates pass through
/// unchanged. Samples outside the input are taken from its mirror image.
pub fn resample_signal(x: &[f32], from: f64, to: f64) -> Vec<f32> {
    if x.is_empty() {
        return Vec::new();
    }
    if from == to {
        return x.to_vec();
    }
    let (up, down) = rational_ratio(from, to);
    let n_out = output_len(x.len(), from, to);
    let kernel = Kernel::new(up, down);
    let table: Option<Vec<[f64; TAPS_PER_PHASE]>> =
        (up <= MAX_TABLE_PHASES).then(|| (0..up).map(|p| kernel.taps(p as f64 / up as f64)).collect());
    let n = x.len() as isize;
    let at = |i: isize| -> f64 {
        // Whole-sample mirror about both ends.
        let period = 2 * (n - 1).max(1);
        let mut j = i.rem_euclid(period);
        if j >= n {
            j = period - j;
        }
        x[j.clamp(0, n - 1) as usize] as f64
    };
    let lo = 1 - (TAPS_PER_PHASE as isize / 2);
    (0..n_out)
        .map(|j| {
            let pos = j as u64 * down;
            let base = (pos / up) as isize;
            let phase = pos % up;
            let computed;
            let taps = match &table {
                Some(t) => &t[phase as usize],
                None => {
                    computed = kernel.taps(phase as f64 / up as f64);
                    &computed
                }
            };
            let start = base + lo;
            let acc: f64 = if start >= 0 && start + TAPS_PER_PHASE as isize <= n {
                let s = start as usize;
                taps.iter().zip(&x[s..s + TAPS_PER_PHASE]).map(|(&h, &v)| h * v as f64).sum()
            } else {
                taps.iter().enumerate().map(|(i, &h)| h * at(start + i as isize)).sum()
            };
            acc as f32
        })
        .collect()
}

/// Resamples a channel to `target` Hz.
pub fn resample(ch: &Channel, target: f64) -> Channel {
    Channel {
        samples: resample_signal(&ch.samples, ch.rate, target),
        rate: target,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::fft::rfft;

    #[test]
    fn ratios_in_lowest_terms() {
        assert_eq!(rational_ratio(100.0, 102.4), (128, 125));
        assert_eq!(rational_ratio(256.0, 102.4), (2, 5));
        assert_eq!(rational_ratio(200.0, 102.4), (64, 125));
    }

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(8.6) / 750.461_159_563_165_9 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn equal_rates_pass_through() {
        let ch = Channel { samples: vec![1.0, -2.0, 3.5], rate: 102.4 };
        assert_eq!(resample(&ch, 102.4).samples, ch.samples);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let ch = Channel { samples: vec![], rate: 100.0 };
        assert!(resample(&ch, 102.4).samples.is_empty());
    }

    #[test]
    fn epoch_at_100_hz_becomes_3072_points() {
        let ch = Channel { samples: vec![0.0; 3000], rate: 100.0 };
        let out = resample(&ch, 102.4);
        assert_eq!(out.samples.len(), 3072);
        assert_eq!(out.rate, 102.4);
    }

    #[test]
    fn constant_stays_constant() {
        let out = resample_signal(&[2.5; 1000], 256.0, 102.4);
        assert!(out.iter().all(|&v| (v - 2.5).abs() < 1e-5));
    }

    #[test]
    fn duration_is_preserved() {
        for (len, rate) in [(3000usize, 100.0), (7681, 256.0), (1001, 200.0), (12345, 512.0), (999, 50.0)] {
            let n = output_len(len, rate, 102.4);
            let lhs = (n as f64 / 102.4 - len as f64 / rate).abs();
            assert!(lhs <= 1.0 / 102.4, "len {len} rate {rate}");
        }
    }

    #[test]
    fn tone_keeps_its_frequency() {
        let x: Vec<f32> = (0..2560)
            .map(|i| (2.0 * std::f64::consts::PI * 5.0 * i as f64 / 256.0).sin() as f32)
            .collect();
        let y = resample_signal(&x, 256.0, 102.4);
        assert_eq!(y.len(), 1024);
        let sp = rfft(&y.iter().map(|&v| v as f64).collect::<Vec<_>>());
        let peak = sp
            .magnitude
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        // 10 s of signal: bin k is k / 10 Hz.
        assert_eq!(peak, 50);
    }
}
