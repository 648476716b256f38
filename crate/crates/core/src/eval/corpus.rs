//! Turning recordings into per-dataset sample collections.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synth::{synth_recording, SynthSpec};
use crate::edf::{parse_edf, parse_hypnogram_csv, parse_hypnogram_tal, read_edf, Hypnogram, Recording};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::signal::{prepare_recording, segment, PrepConfig, Sample};
use crate::tasks::Dataset;

/// Preprocesses and segments one recording. Channel selection and order
/// are drawn from a stream keyed by `(seed, key)`.
pub fn recording_samples(rec: &Recording, recording: u32, prep: &PrepConfig, seed: u64, key: u64) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    let mut p = prepare_recording(rec, prep, &mut rng)?;
    p.recording = recording;
    Ok(segment(&p, prep.context_epochs))
}

/// Groups samples into datasets, keeping first-seen dataset order.
pub fn group_datasets(samples: impl IntoIterator<Item = Sample>) -> Vec<Dataset> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        let id = s.dataset_id.to_string();
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push(s);
    }
    order
        .into_iter()
        .map(|id| {
            let v = groups.remove(&id).expect("grouped above");
            Dataset::new(id, v)
        })
        .collect()
}

/// Generates and preprocesses the synthetic corpus one dataset at a time,
/// so raw signals of at most one dataset are alive at once.
pub fn synth_corpus(spec: &SynthSpec, prep: &PrepConfig, exec: Exec) -> Result<Vec<Dataset>> {
    spec.validate()?;
    prep.validate()?;
    let mut out = Vec::with_capacity(spec.n_datasets);
    for d in 0..spec.n_datasets {
        let jobs: Vec<(usize, usize)> = (0..spec.subjects_per_dataset)
            .flat_map(|s| (0..spec.recordings_per_subject).map(move |r| (s, r)))
            .collect();
        let parts = exec.try_map(&jobs, |&(s, r)| {
            let rec = synth_recording(spec, d, s, r)?;
            let key = ((d as u64) << 40) | ((s as u64) << 20) | r as u64;
            recording_samples(&rec, r as u32, prep, spec.seed, key)
        })?;
        let samples: Vec<Sample> = parts.into_iter().flatten().collect();
        if !samples.is_empty() {
            out.extend(group_datasets(samples));
        }
    }
    Ok(out)
}

/// One row of a recording manifest.
#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
pub struct ManifestRow {
    pub dataset: String,
    pub subject: String,
    pub edf: PathBuf,
    /// CSV hypnogram, or an EDF+ annotation file.
    pub hypnogram: PathBuf,
}

/// Reads a CSV manifest with columns `dataset,subject,edf,hypnogram`;
/// relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for r in rdr.deserialize() {
        let mut row: ManifestRow = r?;
        row.edf = base.join(&row.edf);
        row.hypnogram = base.join(&row.hypnogram);
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_hypnogram(path: &Path) -> Result<Hypnogram> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let is_edf = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("edf"));
    if is_edf {
        let f = parse_edf(&bytes)?;
        let ann = f
            .annotation_bytes()
            .ok_or_else(|| Error::Data(format!("{} has no annotation signal", path.display())))?;
        Ok(parse_hypnogram_tal(&ann))
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Data(format!("{} is not UTF-8", path.display())))?;
        parse_hypnogram_csv(&text)
    }
}

/// Loads every manifest row as a recording; `channels` selects labels
/// (all non-annotation signals when empty). Recordings are numbered per
/// subject in manifest order.
pub fn load_recordings(rows: &[ManifestRow], channels: &[String]) -> Result<Vec<(Recording, u32)>> {
    let mut counter: BTreeMap<(String, String), u32> = BTreeMap::new();
    rows.iter()
        .map(|row| {
            let file = read_edf(&row.edf)?;
            let hyp = read_hypnogram(&row.hypnogram)?;
            let sel = (!channels.is_empty()).then_some(channels);
            let (rec, clamped) = Recording::from_edf(&file, &hyp, &row.subject, &row.dataset, sel)?;
            if clamped > 0 {
                log::warn!("{}: {clamped} samples outside the digital range were clamped", row.edf.display());
            }
            let n = counter.entry((row.dataset.clone(), row.subject.clone())).or_default();
            let idx = *n;
            *n += 1;
            Ok((rec, idx))
        })
        .collect()
}

/// Preprocesses loaded recordings into datasets.
pub fn recordings_corpus(recs: &[(Recording, u32)], prep: &PrepConfig, seed: u64, exec: Exec) -> Result<Vec<Dataset>> {
    prep.validate()?;
    let idx: Vec<usize> = (0..recs.len()).collect();
    let parts = exec.try_map(&idx, |&i| recording_samples(&recs[i].0, recs[i].1, prep, seed, i as u64))?;
    Ok(group_datasets(parts.into_iter().flatten()))
}
