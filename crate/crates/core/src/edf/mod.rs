//! European Data Format reading and writing.
//!
//! Layout: a 256-byte ASCII global header, 256 ASCII bytes per signal
//! (each field stored for all signals before the next field), then data
//! records of interleaved 16-bit little-endian samples.

mod hypnogram;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use hypnogram::{
    classify_stage, map_stages, parse_hypnogram_csv, parse_hypnogram_tal, write_hypnogram_csv, Hypnogram,
    HypnogramEntry, Stage, EPOCH_SECONDS,
};

use crate::error::{Error, Result};

const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    /// `dd.mm.yy`
    pub start_date: String,
    /// `hh.mm.ss`
    pub start_time: String,
    pub header_bytes: usize,
    pub reserved: String,
    /// `-1` only while a streaming writer has not finalized the file.
    pub n_records: i64,
    pub record_duration: f64,
    pub n_signals: usize,
}

impl Default for EdfHeader {
    fn default() -> Self {
        Self {
            version: "0".into(),
            patient_id: "X X X X".into(),
            recording_id: "Startdate X X X X".into(),
            start_date: "01.01.85".into(),
            start_time: "00.00.00".into(),
            header_bytes: 256,
            reserved: String::new(),
            n_records: 0,
            record_duration: 1.0,
            n_signals: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dim: String,
    pub phys_min: f64,
    pub phys_max: f64,
    pub dig_min: i32,
    pub dig_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl SignalHeader {
    pub fn new(label: &str, samples_per_record: usize, phys_min: f64, phys_max: f64) -> Self {
        Self {
            label: label.into(),
            transducer: String::new(),
            physical_dim: "uV".into(),
            phys_min,
            phys_max,
            dig_min: -32768,
            dig_max: 32767,
            prefiltering: String::new(),
            samples_per_record,
            reserved: String::new(),
        }
    }

    pub fn is_annotation(&self) -> bool {
        self.label.trim() == ANNOTATION_LABEL
    }

    fn check_calibration(&self) -> Result<()> {
        let err = |what: &str| Error::Calibration {
            label: self.label.clone(),
            what: what.into(),
        };
        if self.dig_max <= self.dig_min {
            return Err(err(&format!(
                "digital range [{}, {}] is empty",
                self.dig_min, self.dig_max
            )));
        }
        if self.phys_min == self.phys_max {
            return Err(err("physical minimum equals physical maximum"));
        }
        Ok(())
    }

    /// Converts digital samples to physical units; returns the values and the
    /// number of samples clamped into `[dig_min, dig_max]`.
    pub fn calibrate(&self, digital: &[i16]) -> Result<(Vec<f32>, usize)> {
        self.check_calibration()?;
        let mut clamped = 0;
        let out = digital
            .iter()
            .map(|&d| {
                let d = d as i32;
                if d < self.dig_min || d > self.dig_max {
                    clamped += 1;
                }
                linear(d.clamp(self.dig_min, self.dig_max), self) as f32
            })
            .collect();
        Ok((out, clamped))
    }

    /// Inverse calibration, rounding to the nearest digital level and clamping.
    pub fn quantize(&self, phys: f64) -> i16 {
        let span = (self.dig_max - self.dig_min) as f64;
        let d = (phys - self.phys_min) * span / (self.phys_max - self.phys_min) + self.dig_min as f64;
        (d.round() as i64).clamp(self.dig_min as i64, self.dig_max as i64) as i16
    }
}

fn linear(dig: i32, sig: &SignalHeader) -> f64 {
    if dig == sig.dig_max {
        return sig.phys_max;
    }
    if dig == sig.dig_min {
        return sig.phys_min;
    }
    (dig - sig.dig_min) as f64 * (sig.phys_max - sig.phys_min) / (sig.dig_max - sig.dig_min) as f64 + sig.phys_min
}

/// Physical value of a digital sample. Values outside `[dig_min, dig_max]`
/// are clamped first.
pub fn scale_digital(dig: i32, sig: &SignalHeader) -> Result<f64> {
    sig.check_calibration()?;
    Ok(linear(dig.clamp(sig.dig_min, sig.dig_max), sig))
}

/// A parsed EDF file: headers plus per-signal digital samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfFile {
    pub header: EdfHeader,
    pub signals: Vec<SignalHeader>,
    pub samples: Vec<Vec<i16>>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    off: usize,
}

impl<'a> Cursor<'a> {
    fn text(&mut self, width: usize, name: &str) -> Result<&'a str> {
        if self.off + width > self.bytes.len() {
            return Err(Error::edf(
                self.bytes.len(),
                format!("truncated stream while reading {name} ({width} bytes needed)"),
            ));
        }
        let raw = &self.bytes[self.off..self.off + width];
        let s = std::str::from_utf8(raw).map_err(|_| Error::edf(self.off, format!("non-ASCII {name} field")))?;
        self.off += width;
        Ok(s.trim_end_matches([' ', '\0']))
    }

    fn num<T: std::str::FromStr>(&mut self, width: usize, name: &str) -> Result<T> {
        let at = self.off;
        let s = self.text(width, name)?;
        s.trim()
            .parse()
            .map_err(|_| Error::edf(at, format!("non-numeric {name} field '{s}'")))
    }
}

/// Parses a complete EDF byte stream.
pub fn parse_edf(bytes: &[u8]) -> Result<EdfFile> {
    let mut c = Cursor { bytes, off: 0 };
    let version = c.text(8, "version")?.to_string();
    let patient_id = c.text(80, "patient id")?.to_string();
    let recording_id = c.text(80, "recording id")?.to_string();
    let start_date = c.text(8, "start date")?.to_string();
    let start_time = c.text(8, "start time")?.to_string();
    let header_bytes: usize = c.num(8, "header bytes")?;
    let reserved = c.text(44, "reserved")?.to_string();
    let n_records: i64 = c.num(8, "number of records")?;
    let record_duration: f64 = c.num(8, "record duration")?;
    let n_signals: usize = c.num(4, "number of signals")?;

    let expected = 256 * (1 + n_signals);
    if header_bytes != expected {
        return Err(Error::HeaderBytes {
            declared: header_bytes,
            expected,
            n_signals,
        });
    }
    if n_records < -1 {
        return Err(Error::edf(236, format!("negative record count {n_records}")));
    }
    if n_signals > 0 && !(record_duration > 0.0) {
        return Err(Error::edf(244, format!("record duration {record_duration} must be positive")));
    }

    let ns = n_signals;
    let texts = |c: &mut Cursor<'_>, w: usize, name: &str| -> Result<Vec<String>> {
        (0..ns).map(|_| c.text(w, name).map(str::to_string)).collect()
    };
    let labels = texts(&mut c, 16, "label")?;
    let transducers = texts(&mut c, 80, "transducer")?;
    let dims = texts(&mut c, 8, "physical dimension")?;
    let phys_min: Vec<f64> = (0..ns).map(|_| c.num(8, "physical minimum")).collect::<Result<_>>()?;
    let phys_max: Vec<f64> = (0..ns).map(|_| c.num(8, "physical maximum")).collect::<Result<_>>()?;
    let dig_min: Vec<i32> = (0..ns).map(|_| c.num(8, "digital minimum")).collect::<Result<_>>()?;
    let dig_max: Vec<i32> = (0..ns).map(|_| c.num(8, "digital maximum")).collect::<Result<_>>()?;
    let prefilters = texts(&mut c, 80, "prefiltering")?;
    let spr: Vec<usize> = (0..ns).map(|_| c.num(8, "samples per record")).collect::<Result<_>>()?;
    let reserved_sig = texts(&mut c, 32, "signal reserved")?;

    let signals: Vec<SignalHeader> = (0..ns)
        .map(|i| SignalHeader {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_dim: dims[i].clone(),
            phys_min: phys_min[i],
            phys_max: phys_max[i],
            dig_min: dig_min[i],
            dig_max: dig_max[i],
            prefiltering: prefilters[i].clone(),
            samples_per_record: spr[i],
            reserved: reserved_sig[i].clone(),
        })
        .collect();

    let record_len: usize = spr.iter().sum::<usize>() * 2;
    let data = &bytes[header_bytes..];
    let n_rec = if n_records == -1 {
        if record_len == 0 {
            0
        } else {
            data.len() / record_len
        }
    } else {
        n_records as usize
    };
    let needed = n_rec * record_len;
    if data.len() < needed {
        return Err(Error::edf(
            bytes.len(),
            format!(
                "truncated stream: {n_rec} records of {record_len} bytes need {needed} data bytes, found {}",
                data.len()
            ),
        ));
    }
    let mut samples: Vec<Vec<i16>> = spr.iter().map(|&n| Vec::with_capacity(n * n_rec)).collect();
    let mut pos = 0;
    for _ in 0..n_rec {
        for (s, &n) in spr.iter().enumerate() {
            let chunk = &data[pos..pos + 2 * n];
            samples[s].extend(chunk.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])));
            pos += 2 * n;
        }
    }

    Ok(EdfFile {
        header: EdfHeader {
            version,
            patient_id,
            recording_id,
            start_date,
            start_time,
            header_bytes,
            reserved,
            n_records: n_rec as i64,
            record_duration,
            n_signals,
        },
        signals,
        samples,
    })
}

pub fn read_edf(path: &Path) -> Result<EdfFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_edf(&bytes)
}

fn put_text(out: &mut Vec<u8>, s: &str, width: usize, field: &'static str) -> Result<()> {
    if !s.is_ascii() {
        return Err(Error::Data(format!("field '{field}' must be ASCII: {s:?}")));
    }
    if s.len() > width {
        return Err(Error::FieldWidth {
            field,
            len: s.len(),
            width,
        });
    }
    out.extend_from_slice(s.as_bytes());
    out.extend(std::iter::repeat_n(b' ', width - s.len()));
    Ok(())
}

/// Shortest decimal rendering of `v` that fits `width` characters.
pub fn format_number(v: f64, width: usize) -> Option<String> {
    let plain = format!("{v}");
    if plain.len() <= width {
        return Some(plain);
    }
    for decimals in (0..width).rev() {
        let s = format!("{v:.decimals$}");
        if s.len() <= width {
            // Keep the rendering parseable and free of a dangling point.
            let s = if s.contains('.') {
                s.trim_end_matches('0').trim_end_matches('.').to_string()
            } else {
                s
            };
            return Some(s);
        }
    }
    None
}

fn put_num(out: &mut Vec<u8>, v: f64, width: usize, field: &'static str) -> Result<()> {
    let s = format_number(v, width).ok_or(Error::FieldWidth {
        field,
        len: format!("{v}").len(),
        width,
    })?;
    put_text(out, &s, width, field)
}

impl EdfFile {
    /// Serializes to bit-exact EDF. `header_bytes` and `n_signals` are
    /// derived from the signal list.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let ns = self.signals.len();
        if self.samples.len() != ns {
            return Err(Error::Data(format!(
                "{} signal headers but {} sample vectors",
                ns,
                self.samples.len()
            )));
        }
        if h.n_records < 0 {
            return Err(Error::Data("cannot serialize a file with an unknown record count".into()));
        }
        let n_rec = h.n_records as usize;
        for (s, sig) in self.signals.iter().enumerate() {
            if sig.samples_per_record == 0 {
                return Err(Error::Data(format!("signal '{}' has zero samples per record", sig.label)));
            }
            if self.samples[s].len() != sig.samples_per_record * n_rec {
                return Err(Error::Data(format!(
                    "signal '{}' has {} samples, record layout needs {} x {}",
                    sig.label,
                    self.samples[s].len(),
                    n_rec,
                    sig.samples_per_record
                )));
            }
        }
        let mut out = Vec::with_capacity(256 * (ns + 1));
        put_text(&mut out, &h.version, 8, "version")?;
        put_text(&mut out, &h.patient_id, 80, "patient_id")?;
        put_text(&mut out, &h.recording_id, 80, "recording_id")?;
        put_text(&mut out, &h.start_date, 8, "start_date")?;
        put_text(&mut out, &h.start_time, 8, "start_time")?;
        put_num(&mut out, (256 * (ns + 1)) as f64, 8, "header_bytes")?;
        put_text(&mut out, &h.reserved, 44, "reserved")?;
        put_num(&mut out, h.n_records as f64, 8, "n_records")?;
        put_num(&mut out, h.record_duration, 8, "record_duration")?;
        put_num(&mut out, ns as f64, 4, "n_signals")?;
        for s in &self.signals {
            put_text(&mut out, &s.label, 16, "label")?;
        }
        for s in &self.signals {
            put_text(&mut out, &s.transducer, 80, "transducer")?;
        }
        for s in &self.signals {
            put_text(&mut out, &s.physical_dim, 8, "physical_dim")?;
        }
        for s in &self.signals {
            put_num(&mut out, s.phys_min, 8, "phys_min")?;
        }
        for s in &self.signals {
            put_num(&mut out, s.phys_max, 8, "phys_max")?;
        }
        for s in &self.signals {
            put_num(&mut out, s.dig_min as f64, 8, "dig_min")?;
        }
        for s in &self.signals {
            put_num(&mut out, s.dig_max as f64, 8, "dig_max")?;
        }
        for s in &self.signals {
            put_text(&mut out, &s.prefiltering, 80, "prefiltering")?;
        }
        for s in &self.signals {
            put_num(&mut out, s.samples_per_record as f64, 8, "samples_per_record")?;
        }
        for s in &self.signals {
            put_text(&mut out, &s.reserved, 32, "signal reserved")?;
        }
        for r in 0..n_rec {
            for (s, sig) in self.signals.iter().enumerate() {
                let n = sig.samples_per_record;
                for &v in &self.samples[s][r * n..(r + 1) * n] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    /// Raw bytes of the annotation signal, if present.
    pub fn annotation_bytes(&self) -> Option<Vec<u8>> {
        let i = self.signals.iter().position(SignalHeader::is_annotation)?;
        Some(self.samples[i].iter().flat_map(|v| v.to_le_bytes()).collect())
    }
}

/// One physical channel of a [`Recording`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingChannel {
    pub label: String,
    pub rate: f64,
    pub samples: Vec<f32>,
}

impl RecordingChannel {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }
}

/// A scored polysomnography recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub dataset_id: String,
    pub channels: Vec<RecordingChannel>,
    /// One stage per whole 30 s epoch.
    pub hypnogram: Vec<Stage>,
}

impl Recording {
    /// Validates that channels span the same duration (to within one sample
    /// of the slowest channel) and trims or pads the hypnogram to
    /// `floor(duration / 30)` epochs.
    pub fn new(
        subject_id: impl Into<String>,
        dataset_id: impl Into<String>,
        channels: Vec<RecordingChannel>,
        mut hypnogram: Vec<Stage>,
    ) -> Result<Self> {
        let mut duration = None;
        for ch in &channels {
            if !(ch.rate > 0.0) {
                return Err(Error::Data(format!("channel '{}' has rate {}", ch.label, ch.rate)));
            }
            let d = ch.duration();
            match duration {
                None => duration = Some((d, 1.0 / ch.rate)),
                Some((d0, tol)) => {
                    let tol = f64::max(tol, 1.0 / ch.rate);
                    if (d - d0).abs() > tol + 1e-9 {
                        return Err(Error::Data(format!(
                            "channel '{}' spans {d} s, expected {d0} s",
                            ch.label
                        )));
                    }
                    duration = Some((d0, tol));
                }
            }
        }
        let n_epochs = duration.map_or(0, |(d, _)| (d / EPOCH_SECONDS + 1e-9).floor() as usize);
        hypnogram.resize(n_epochs, Stage::Excluded);
        Ok(Self {
            subject_id: subject_id.into(),
            dataset_id: dataset_id.into(),
            channels,
            hypnogram,
        })
    }

    pub fn duration(&self) -> f64 {
        self.channels.first().map_or(0.0, RecordingChannel::duration)
    }

    pub fn n_epochs(&self) -> usize {
        self.hypnogram.len()
    }

    /// Builds a recording from parsed EDF signals. `selection` picks channels
    /// by label (in the given order); by default every non-annotation signal
    /// is used. Returns the recording and the number of clamped samples.
    pub fn from_edf(
        file: &EdfFile,
        hypnogram: &Hypnogram,
        subject_id: &str,
        dataset_id: &str,
        selection: Option<&[String]>,
    ) -> Result<(Recording, usize)> {
        let indices: Vec<usize> = match selection {
            Some(labels) => labels
                .iter()
                .map(|l| {
                    file.signals
                        .iter()
                        .position(|s| s.label.trim() == l.trim())
                        .ok_or_else(|| Error::Data(format!("channel '{l}' not found in EDF file")))
                })
                .collect::<Result<_>>()?,
            None => (0..file.signals.len()).filter(|&i| !file.signals[i].is_annotation()).collect(),
        };
        let mut clamped = 0;
        let mut channels = Vec::with_capacity(indices.len());
        for i in indices {
            let sig = &file.signals[i];
            let (samples, c) = sig.calibrate(&file.samples[i])?;
            clamped += c;
            channels.push(RecordingChannel {
                label: sig.label.clone(),
                rate: sig.samples_per_record as f64 / file.header.record_duration,
                samples,
            });
        }
        let duration = file.header.n_records.max(0) as f64 * file.header.record_duration;
        let n_epochs = (duration / EPOCH_SECONDS + 1e-9).floor() as usize;
        let rec = Recording::new(subject_id, dataset_id, channels, hypnogram.epochs(n_epochs))?;
        Ok((rec, clamped))
    }
}

/// Metadata for [`write_edf`] that a [`Recording`] does not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfMeta {
    pub header: EdfHeader,
    /// Per-channel signal header template; `samples_per_record` is derived.
    /// When absent, the physical range is taken from the data.
    pub signals: Option<Vec<SignalHeader>>,
}

impl Default for EdfMeta {
    fn default() -> Self {
        Self {
            header: EdfHeader {
                record_duration: 30.0,
                ..EdfHeader::default()
            },
            signals: None,
        }
    }
}

/// Quantizes a recording into an [`EdfFile`].
pub fn recording_to_edf(rec: &Recording, meta: &EdfMeta) -> Result<EdfFile> {
    let dur = meta.header.record_duration;
    if !(dur > 0.0) {
        return Err(Error::Data(format!("record duration {dur} must be positive")));
    }
    let mut signals = Vec::with_capacity(rec.channels.len());
    let mut samples = Vec::with_capacity(rec.channels.len());
    let mut n_records = None;
    for (i, ch) in rec.channels.iter().enumerate() {
        let spr_f = ch.rate * dur;
        let spr = spr_f.round() as usize;
        if spr == 0 || (spr_f - spr as f64).abs() > 1e-6 {
            return Err(Error::Data(format!(
                "channel '{}': rate {} Hz gives non-integer {spr_f} samples per {dur} s record",
                ch.label, ch.rate
            )));
        }
        if ch.samples.len() % spr != 0 {
            return Err(Error::Data(format!(
                "channel '{}': {} samples is not a whole number of {spr}-sample records",
                ch.label,
                ch.samples.len()
            )));
        }
        let n = ch.samples.len() / spr;
        if *n_records.get_or_insert(n) != n {
            return Err(Error::Data(format!(
                "channel '{}' spans {n} records, others span {}",
                ch.label,
                n_records.unwrap_or(0)
            )));
        }
        let mut sig = match &meta.signals {
            Some(t) => t
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Data(format!("no signal header template for channel {i}")))?,
            None => {
                let (lo, hi) = ch
                    .samples
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v as f64), b.max(v as f64)));
                let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (-1.0, 1.0) };
                let mut s = SignalHeader::new(&ch.label, spr, lo, hi);
                // The header stores 8-character renderings; calibrate with those.
                s.phys_min = reparse(lo, false);
                s.phys_max = reparse(hi, true);
                s
            }
        };
        sig.label = ch.label.clone();
        sig.samples_per_record = spr;
        sig.check_calibration()?;
        samples.push(ch.samples.iter().map(|&v| sig.quantize(v as f64)).collect());
        signals.push(sig);
    }
    let mut header = meta.header.clone();
    header.n_signals = signals.len();
    header.header_bytes = 256 * (1 + signals.len());
    header.n_records = n_records.unwrap_or(0) as i64;
    Ok(EdfFile {
        header,
        signals,
        samples,
    })
}

/// Rounds a physical bound outward to a value whose 8-character rendering
/// parses back to itself.
fn reparse(v: f64, upper: bool) -> f64 {
    let s = format_number(v, 8).unwrap_or_else(|| if upper { "99999999".into() } else { "-9999999".into() });
    let p: f64 = s.parse().unwrap_or(v);
    let p = if upper && p < v {
        let bumped = p + (p.abs() * 1e-6).max(1e-6);
        format_number(bumped, 8).and_then(|s| s.parse().ok()).unwrap_or(p)
    } else if !upper && p > v {
        let bumped = p - (p.abs() * 1e-6).max(1e-6);
        format_number(bumped, 8).and_then(|s| s.parse().ok()).unwrap_or(p)
    } else {
        p
    };
    p
}

/// Writes a recording as bit-exact EDF bytes.
pub fn write_edf(rec: &Recording, meta: &EdfMeta) -> Result<Vec<u8>> {
    recording_to_edf(rec, meta)?.to_bytes()
}
