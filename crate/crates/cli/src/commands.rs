use std::collections::BTreeSet;
use std::fmt::Write as _;

use sleepmeta::config::RunConfig;
use sleepmeta::diff::Checkpoint;
use sleepmeta::edf::{write_edf, write_hypnogram_csv, EdfMeta, Hypnogram};
use sleepmeta::eval::corpus::{load_recordings, read_manifest, recordings_corpus};
use sleepmeta::eval::synth::dataset_name;
use sleepmeta::eval::{evaluate, fold_plans, macro_f1, run_experiment, synth_recording};
use sleepmeta::gradsuite::{check_loss, run_suite};
use sleepmeta::meta::{train_model, Budget, TrainOptions};
use sleepmeta::signal::cache::write_cache;
use sleepmeta::signal::Sample;
use sleepmeta::sleepnet::{Head, ModelBundle};
use sleepmeta::tasks::Dataset;
use sleepmeta::{Error, Result};

use crate::run::{apply_data, load_corpus, out_dir, resolve, write_file, write_manifest};
use crate::{Command, SplitArg};

const GRAD_TOLERANCE: f64 = 1e-5;

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prep { common, manifest } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = manifest {
                cfg.data.manifest = Some(m);
            }
            prep(&cfg)
        }
        Command::Synth { common } => synth(&resolve(&common)?),
        Command::Train {
            common,
            data,
            mode,
            updates,
            epochs,
            holdout,
        } => {
            let mut cfg = resolve(&common)?;
            apply_data(&mut cfg, &data);
            if let Some(m) = mode {
                cfg.meta.mode = m;
            }
            if let Some(n) = updates {
                cfg.meta.budget = Budget::Updates(n);
            }
            if let Some(n) = epochs {
                cfg.meta.budget = Budget::Epochs(n);
            }
            cfg.validate()?;
            train(&cfg, data.synth, holdout)
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            split,
        } => {
            let mut cfg = resolve(&common)?;
            apply_data(&mut cfg, &data);
            eval(&cfg, data.synth, &checkpoint, split)
        }
        Command::Experiment {
            protocol,
            common,
            data,
            seeds,
            modes,
            folds,
        } => {
            let mut cfg = resolve(&common)?;
            apply_data(&mut cfg, &data);
            cfg.eval.protocol = protocol.into();
            if let Some(s) = seeds {
                cfg.eval.seeds = s;
            } else if let Some(s) = common.seed {
                cfg.eval.seeds = vec![s];
            }
            if let Some(m) = modes {
                cfg.eval.modes = m;
            }
            if let Some(f) = folds {
                cfg.eval.folds = f;
            }
            cfg.validate()?;
            experiment(&cfg, data.synth)
        }
        Command::Gradcheck { common, seeds, coords } => gradcheck(&resolve(&common)?, seeds, coords),
    }
}

fn prep(cfg: &RunConfig) -> Result<()> {
    let manifest = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("prep needs --manifest or data.manifest".into()))?;
    let recs = load_recordings(&read_manifest(manifest)?, &cfg.data.channels)?;
    let corpus = recordings_corpus(&recs, &cfg.prep, cfg.data.seed, cfg.meta.exec)?;
    let dir = out_dir(cfg)?;
    let path = cfg.data.cache.clone().unwrap_or_else(|| dir.join("samples.cache"));
    let samples: Vec<Sample> = corpus.into_iter().flat_map(|d| d.samples).collect();
    write_cache(&path, &samples)?;
    println!("{} recordings -> {} samples in {}", recs.len(), samples.len(), path.display());
    write_manifest(&dir, "prep", cfg, &[path.display().to_string()])
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let spec = &cfg.synth;
    spec.validate()?;
    let dir = out_dir(cfg)?;
    let mut rows = String::from("dataset,subject,edf,hypnogram\n");
    let mut n = 0;
    for d in 0..spec.n_datasets {
        let name = dataset_name(d);
        let sub = dir.join(&name);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for s in 0..spec.subjects_per_dataset {
            for r in 0..spec.recordings_per_subject {
                let rec = synth_recording(spec, d, s, r)?;
                let stem = format!("{}_r{r}", rec.subject_id);
                write_file(&sub.join(format!("{stem}.edf")), write_edf(&rec, &EdfMeta::default())?)?;
                let hyp = write_hypnogram_csv(&Hypnogram::from_epochs(&rec.hypnogram));
                write_file(&sub.join(format!("{stem}.csv")), hyp)?;
                let _ = writeln!(rows, "{name},{},{name}/{stem}.edf,{name}/{stem}.csv", rec.subject_id);
                n += 1;
            }
        }
    }
    let manifest = dir.join("manifest.csv");
    write_file(&manifest, rows)?;
    println!("{n} recordings in {} datasets; manifest {}", spec.n_datasets, manifest.display());
    write_manifest(&dir, "synth", cfg, &[manifest.display().to_string()])
}

/// Training subsets and the forbidden subjects of the first evaluation fold.
fn holdout_sets(corpus: &[Dataset], cfg: &RunConfig) -> Result<(Vec<Dataset>, BTreeSet<(String, String)>)> {
    let seed = cfg.eval.seeds.first().copied().unwrap_or(0);
    let plans = fold_plans(corpus, &cfg.eval, seed, 0)?;
    let train = corpus.iter().zip(&plans).map(|(d, p)| d.subset(&p.train)).collect();
    let forbidden = plans.iter().flat_map(|p| p.forbidden()).collect();
    Ok((train, forbidden))
}

fn train(cfg: &RunConfig, synth: bool, holdout: bool) -> Result<()> {
    let corpus = load_corpus(cfg, synth)?;
    let (sets, forbidden) = if holdout {
        holdout_sets(&corpus, cfg)?
    } else {
        (corpus, BTreeSet::new())
    };
    let model = ModelBundle::<f32>::new(cfg.model.clone(), cfg.meta.seed)?;
    log::info!("{} parameters, mode {}, seed {}", model.numel(), cfg.meta.mode, cfg.meta.seed);
    let every = 10;
    let (model, mut history) = train_model(
        &sets,
        model,
        &cfg.meta,
        TrainOptions {
            forbidden,
            on_step: Some(Box::new(move |it, _, e| {
                if it % every == 0 {
                    log::info!("iteration {it}: l_out {:.4} l_in {:?}", e.l_out, e.l_in);
                }
                Ok(())
            })),
        },
    )?;
    let dir = out_dir(cfg)?;
    let ck = dir.join("model.ckpt");
    model.to_checkpoint()?.write(&ck)?;
    history.final_checkpoint = Some("model.ckpt".into());
    let hist = dir.join("history.jsonl");
    history.write_jsonl(&hist)?;
    let last = history.entries.last().map_or(f64::NAN, |e| e.l_out);
    println!(
        "{} updates, final loss {last:.4}; checkpoint {}",
        history.entries.len(),
        ck.display()
    );
    write_manifest(&dir, "train", cfg, &[ck.display().to_string(), hist.display().to_string()])
}

fn eval(cfg: &RunConfig, synth: bool, checkpoint: &std::path::Path, split: SplitArg) -> Result<()> {
    let model = ModelBundle::<f32>::from_checkpoint(&Checkpoint::read(checkpoint)?)?;
    let corpus = load_corpus(cfg, synth)?;
    let plans = match split {
        SplitArg::All => None,
        _ => Some(fold_plans(&corpus, &cfg.eval, cfg.eval.seeds.first().copied().unwrap_or(0), 0)?),
    };
    let mut csv = String::from("dataset,split,n,mf1,f1_w,f1_n1,f1_n2,f1_n3,f1_rem\n");
    let tag = format!("{split:?}").to_lowercase();
    println!("{:<8} {:>6} {:>7}  W      N1     N2     N3     REM", "dataset", "n", "MF1");
    for (d, ds) in corpus.iter().enumerate() {
        let idx: Vec<usize> = match (&plans, split) {
            (Some(p), SplitArg::Seen) => p[d].eval_seen.clone(),
            (Some(p), SplitArg::Unseen) => p[d].eval_unseen.clone(),
            _ => (0..ds.samples.len()).collect(),
        };
        let samples: Vec<&Sample> = idx.iter().map(|&i| &ds.samples[i]).collect();
        let cm = evaluate(&model, &samples, cfg.meta.exec)?;
        let f = macro_f1(&cm);
        let pc = f.per_class;
        println!(
            "{:<8} {:>6} {:>7.4}  {:.3}  {:.3}  {:.3}  {:.3}  {:.3}",
            ds.id,
            cm.total(),
            f.mf1,
            pc[0],
            pc[1],
            pc[2],
            pc[3],
            pc[4]
        );
        let _ = writeln!(
            csv,
            "{},{tag},{},{},{},{},{},{},{}",
            ds.id,
            cm.total(),
            f.mf1,
            pc[0],
            pc[1],
            pc[2],
            pc[3],
            pc[4]
        );
    }
    let dir = out_dir(cfg)?;
    let path = dir.join("eval.csv");
    write_file(&path, csv)?;
    write_manifest(&dir, "eval", cfg, &[path.display().to_string()])
}

fn experiment(cfg: &RunConfig, synth: bool) -> Result<()> {
    let corpus = load_corpus(cfg, synth)?;
    let report = run_experiment(&corpus, &cfg.model, &cfg.meta, &cfg.eval)?;
    let dir = out_dir(cfg)?;
    report.write(&dir)?;
    for t in &report.tables {
        println!("{}", t.to_markdown());
    }
    if let Some(d) = &report.directional {
        for (seed, s2, sl) in &d.per_seed {
            println!("seed {seed}: S2MAML {s2:.4}  SL {sl:.4}");
        }
        println!(
            "{}: S2MAML {:.4} vs SL {:.4} (margin {}) -> {}",
            d.column,
            d.mean_s2maml,
            d.mean_sl,
            d.margin,
            if d.pass { "pass" } else { "fail" }
        );
    }
    let p = cfg.eval.protocol;
    let outputs = [format!("{p}_rows.csv"), format!("{p}_summary.json"), format!("{p}_tables.md")];
    write_manifest(&dir, "experiment", cfg, &outputs)
}

fn gradcheck(cfg: &RunConfig, seeds: u64, coords: usize) -> Result<()> {
    let suite = run_suite(0..seeds)?;
    let model_sl = check_loss(&cfg.model, Head::Sl, cfg.meta.seed, Some(coords))?;
    let model_ssl = check_loss(&cfg.model, Head::Ssl, cfg.meta.seed, Some(coords))?;
    let checked: usize = suite.entries.iter().map(|e| e.checked).sum::<usize>() + model_sl.checked + model_ssl.checked;
    let max = suite.max_rel_error().max(model_sl.max_rel_error).max(model_ssl.max_rel_error);
    if let Some(w) = suite.worst() {
        println!("primitive suite: {} seeds, worst {} (seed {}) {:.3e}", seeds, w.item, w.seed, w.max_rel_error);
    }
    println!(
        "configured model: sl {:.3e} ({} coords), ssl {:.3e} ({} coords)",
        model_sl.max_rel_error, model_sl.checked, model_ssl.max_rel_error, model_ssl.checked
    );
    println!("max relative error {max:.3e} over {checked} coordinates");
    if !(max < GRAD_TOLERANCE) {
        return Err(Error::Invariant(format!(
            "gradient check failed: max relative error {max:.3e} >= {GRAD_TOLERANCE:e}"
        )));
    }
    Ok(())
}
