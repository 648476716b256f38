//! Flat binary cache of preprocessed samples.
//!
//! Layout: magic `SLPCACHE`, then `n_samples`, `n_channels` and `window_len`
//! as little-endian u64, one label byte per sample (class index), then all
//! sample values as little-endian f32. A sidecar text manifest holds one
//! `dataset_id<TAB>subject_id<TAB>recording` line per sample.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::prep::Sample;
use crate::edf::Stage;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SLPCACHE";

pub fn manifest_path(cache: &Path) -> PathBuf {
    let mut s = cache.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn encode_samples(samples: &[Sample]) -> Result<(Vec<u8>, String)> {
    let (n_ch, len) = samples.first().map_or((0, 0), |s| (s.n_channels, s.window_len()));
    let mut blob = Vec::with_capacity(32 + samples.len() * (1 + 4 * n_ch * len));
    blob.extend_from_slice(MAGIC);
    for v in [samples.len(), n_ch, len] {
        blob.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let mut manifest = String::new();
    for s in samples {
        if s.n_channels != n_ch || s.window_len() != len {
            return Err(Error::Data("samples in one cache must share a shape".into()));
        }
        blob.push(s.class() as u8);
        if s.dataset_id.contains(['\t', '\n']) || s.subject_id.contains(['\t', '\n']) {
            return Err(Error::Data("identifiers may not contain tabs or newlines".into()));
        }
        manifest.push_str(&format!("{}\t{}\t{}\n", s.dataset_id, s.subject_id, s.recording));
    }
    for s in samples {
        for &v in s.x.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok((blob, manifest))
}

pub fn decode_samples(blob: &[u8], manifest: &str) -> Result<Vec<Sample>> {
    if blob.len() < 32 || &blob[..8] != MAGIC {
        return Err(Error::Data("sample cache: bad magic or short header".into()));
    }
    let word = |i: usize| u64::from_le_bytes(blob[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize;
    let (n, n_ch, len) = (word(0), word(1), word(2));
    let body = 32 + n + 4 * n * n_ch * len;
    if blob.len() != body {
        return Err(Error::Data(format!(
            "sample cache: {} bytes, header implies {body}",
            blob.len()
        )));
    }
    let ids: Vec<(&str, &str, u32)> = manifest
        .lines()
        .map(|l| {
            let bad = || Error::Data(format!("sample manifest line '{l}'"));
            let mut f = l.split('\t');
            match (f.next(), f.next(), f.next().map(str::parse), f.next()) {
                (Some(d), Some(s), Some(Ok(r)), None) => Ok((d, s, r)),
                _ => Err(bad()),
            }
        })
        .collect::<Result<_>>()?;
    if ids.len() != n {
        return Err(Error::Data(format!("manifest has {} lines for {n} samples", ids.len())));
    }
    let labels = &blob[32..32 + n];
    let values = &blob[32 + n..];
    let per = n_ch * len;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let label = Stage::from_class_index(labels[i] as usize)
            .ok_or_else(|| Error::Data(format!("sample {i}: label byte {}", labels[i])))?;
        let x: Arc<[f32]> = values[4 * i * per..4 * (i + 1) * per]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(Sample {
            x,
            n_channels: n_ch,
            label,
            dataset_id: Arc::from(ids[i].0),
            subject_id: Arc::from(ids[i].1),
            recording: ids[i].2,
        });
    }
    Ok(out)
}

pub fn write_cache(path: &Path, samples: &[Sample]) -> Result<()> {
    let (blob, manifest) = encode_samples(samples)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&blob).map_err(|e| Error::io(path, e))?;
    let mp = manifest_path(path);
    fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))
}

pub fn read_cache(path: &Path) -> Result<Vec<Sample>> {
    let blob = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mp = manifest_path(path);
    let manifest = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    decode_samples(&blob, &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_round_trip() {
        let samples: Vec<Sample> = (0..3)
            .map(|i| Sample {
                x: (0..2 * 5).map(|j| (i * 10 + j) as f32 * 0.5 - 1.0).collect(),
                n_channels: 2,
                label: Stage::CLASSES[i + 1],
                subject_id: format!("s{i}").into(),
                dataset_id: "ds".into(),
                recording: i as u32 % 2,
            })
            .collect();
        let (blob, manifest) = encode_samples(&samples).unwrap();
        assert_eq!(blob.len(), 32 + 3 + 3 * 10 * 4);
        assert_eq!(manifest.lines().next(), Some("ds\ts0\t0"));
        assert_eq!(decode_samples(&blob, &manifest).unwrap(), samples);
        assert!(decode_samples(&blob[..blob.len() - 1], &manifest).is_err());
    }
}
