use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sleepmeta::config::RunConfig;
use sleepmeta::eval::corpus::{group_datasets, load_recordings, read_manifest, recordings_corpus};
use sleepmeta::eval::synth_corpus;
use sleepmeta::signal::cache::read_cache;
use sleepmeta::tasks::Dataset;
use sleepmeta::{Error, Result};

use crate::{Common, DataArgs, Preset};

pub fn resolve(common: &Common) -> Result<RunConfig> {
    let base = match common.preset {
        Preset::Default => RunConfig::default(),
        Preset::Desk => RunConfig::desk(),
    };
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load_over(&base, p)?,
        None => base,
    };
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.meta.seed = s;
    }
    if let Some(e) = common.exec {
        cfg.meta.exec = e.into();
    }
    Ok(cfg)
}

pub fn apply_data(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(m) = &data.manifest {
        cfg.data.manifest = Some(m.clone());
    }
    if let Some(c) = &data.cache {
        cfg.data.cache = Some(c.clone());
    }
}

/// The synthetic generator with `--synth`, else the sample cache, else the
/// recording manifest.
pub fn load_corpus(cfg: &RunConfig, synth: bool) -> Result<Vec<Dataset>> {
    let corpus = if synth {
        log::info!("generating the synthetic corpus");
        synth_corpus(&cfg.synth, &cfg.prep, cfg.meta.exec)?
    } else if let Some(cache) = &cfg.data.cache {
        log::info!("reading samples from {}", cache.display());
        group_datasets(read_cache(cache)?)
    } else if let Some(manifest) = &cfg.data.manifest {
        log::info!("loading recordings listed in {}", manifest.display());
        let recs = load_recordings(&read_manifest(manifest)?, &cfg.data.channels)?;
        recordings_corpus(&recs, &cfg.prep, cfg.data.seed, cfg.meta.exec)?
    } else {
        return Err(Error::Config(
            "no data source: pass --synth, --cache or --manifest (or set data.cache / data.manifest)".into(),
        ));
    };
    if corpus.is_empty() {
        return Err(Error::Data("the corpus has no samples".into()));
    }
    for d in &corpus {
        log::info!("dataset {}: {} subjects, {} samples", d.id, d.n_subjects(), d.samples.len());
    }
    Ok(corpus)
}

pub fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let d = cfg.output.dir.clone();
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    Ok(d)
}

pub fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    seeds: &'a [u64],
    args: Vec<String>,
    config_file: &'a str,
    outputs: &'a [String],
}

/// Writes the effective configuration and a run manifest into `dir`.
/// Re-running the command with `--config <dir>/config.toml` and the same
/// data flags reproduces the run.
pub fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, outputs: &[String]) -> Result<()> {
    write_file(&dir.join("config.toml"), cfg.to_toml()?)?;
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.meta.seed,
        seeds: &cfg.eval.seeds,
        args: std::env::args().collect(),
        config_file: "config.toml",
        outputs,
    };
    write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)
}
