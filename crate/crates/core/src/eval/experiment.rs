use std::collections::BTreeSet;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{macro_f1, ConfusionMatrix};
use super::report::{
    mean, mean_scores, seen_unseen_columns, seen_unseen_values, Directional, ExperimentReport, ResultRow, SplitKind,
    Table,
};
use super::split::{split_with_unseen, subject_folds, subject_split, SplitPlan};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::meta::{train_model, Budget, MetaConfig, Mode, TrainOptions};
use crate::signal::Sample;
use crate::sleepnet::{EncoderConfig, ModelBundle};
use crate::tasks::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Train on three datasets, evaluate on all.
    #[default]
    ThreeVsFive,
    /// Train on every dataset.
    AllVsAll,
    /// Train on each dataset alone under a fixed update budget.
    OneVsAll,
    /// `ThreeVsFive` at several inner learning rates.
    LambdaSweep,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::ThreeVsFive => "three_vs_five",
            Protocol::AllVsAll => "all_vs_all",
            Protocol::OneVsAll => "one_vs_all",
            Protocol::LambdaSweep => "lambda_sweep",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three_vs_five" => Ok(Protocol::ThreeVsFive),
            "all_vs_all" => Ok(Protocol::AllVsAll),
            "one_vs_all" => Ok(Protocol::OneVsAll),
            "lambda_sweep" => Ok(Protocol::LambdaSweep),
            _ => Err(Error::Config(format!(
                "unknown protocol '{s}' (expected three_vs_five, all_vs_all, one_vs_all or lambda_sweep)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub protocol: Protocol,
    /// 1 holds out one random quarter of the subjects; k >= 2 rotates the
    /// held-out subjects through k folds.
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    /// Training datasets of the three-dataset protocols; the first three
    /// when empty.
    pub train_datasets: Vec<String>,
    /// Seen-subject train fraction (and one minus the held-out fraction).
    pub ratio: f64,
    pub lambda_inner: Vec<f64>,
    /// Update budget of the single-dataset protocol.
    pub fixed_updates: usize,
    /// Strategy for independent experiment cells.
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::ThreeVsFive,
            folds: 4,
            seeds: vec![0],
            modes: Mode::ALL.to_vec(),
            train_datasets: Vec::new(),
            ratio: 0.75,
            lambda_inner: vec![1e-3, 5e-5],
            fixed_updates: 5000,
            exec: Exec::Sequential,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 || self.seeds.is_empty() || self.modes.is_empty() {
            return Err(Error::Config("eval: folds, seeds and modes must be nonempty".into()));
        }
        if !(0.0 < self.ratio && self.ratio < 1.0) {
            return Err(Error::Config(format!("eval: ratio {} outside (0, 1)", self.ratio)));
        }
        if self.protocol == Protocol::LambdaSweep && self.lambda_inner.is_empty() {
            return Err(Error::Config("eval: lambda sweep without values".into()));
        }
        Ok(())
    }
}

/// Confusion matrix of a model's stage predictions.
pub fn evaluate(model: &ModelBundle<f32>, samples: &[&Sample], exec: Exec) -> Result<ConfusionMatrix> {
    let preds = exec.try_map(samples, |s| model.predict_class(&s.x))?;
    Ok(ConfusionMatrix::from_pairs(samples.iter().map(|s| s.class()).zip(preds)))
}

/// Split plans for every dataset in one `(seed, fold)` run.
pub fn fold_plans(corpus: &[Dataset], cfg: &EvalConfig, seed: u64, fold: usize) -> Result<Vec<SplitPlan>> {
    corpus
        .iter()
        .enumerate()
        .map(|(d, ds)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(d as u64);
            if cfg.folds >= 2 {
                let folds = subject_folds(ds, cfg.folds, &mut rng)?;
                rng.set_stream(((fold as u64 + 1) << 32) | d as u64);
                split_with_unseen(ds, &folds[fold], cfg.ratio, &mut rng)
            } else {
                subject_split(ds, cfg.ratio, &mut rng)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Variant {
    name: String,
    train: Vec<usize>,
    lr_inner: Option<f64>,
    budget: Option<Budget>,
}

fn variants(corpus: &[Dataset], cfg: &EvalConfig) -> Result<Vec<Variant>> {
    let ids: Vec<String> = corpus.iter().map(|d| d.id.to_string()).collect();
    let need_five = cfg.protocol != Protocol::AllVsAll;
    if corpus.is_empty() || (need_five && corpus.len() < 5) {
        return Err(Error::Config(format!(
            "protocol {} needs {} datasets, the corpus has {}",
            cfg.protocol,
            if need_five { "at least 5" } else { "at least 1" },
            corpus.len()
        )));
    }
    let three = || -> Result<Vec<usize>> {
        if cfg.train_datasets.is_empty() {
            return Ok(vec![0, 1, 2]);
        }
        let t: Vec<usize> = cfg
            .train_datasets
            .iter()
            .map(|n| {
                ids.iter()
                    .position(|i| i == n)
                    .ok_or_else(|| Error::Config(format!("training dataset '{n}' is not in the corpus")))
            })
            .collect::<Result<_>>()?;
        if t.len() >= corpus.len() {
            return Err(Error::Config("the three-dataset protocol needs held-out datasets".into()));
        }
        Ok(t)
    };
    let plain = |train: Vec<usize>| Variant {
        name: train.iter().map(|&i| ids[i].as_str()).collect::<Vec<_>>().join("+"),
        train,
        lr_inner: None,
        budget: None,
    };
    Ok(match cfg.protocol {
        Protocol::ThreeVsFive => vec![plain(three()?)],
        Protocol::AllVsAll => vec![plain((0..corpus.len()).collect())],
        Protocol::OneVsAll => (0..corpus.len())
            .map(|i| Variant {
                budget: Some(Budget::Updates(cfg.fixed_updates)),
                ..plain(vec![i])
            })
            .collect(),
        Protocol::LambdaSweep => {
            let t = three()?;
            cfg.lambda_inner
                .iter()
                .map(|&l| Variant {
                    name: format!("lr_inner={l:e}"),
                    lr_inner: Some(l),
                    ..plain(t.clone())
                })
                .collect()
        }
    })
}

struct Cell<'c> {
    seed: u64,
    fold: usize,
    plans: &'c [SplitPlan],
    variant: &'c Variant,
    mode: Mode,
}

fn run_cell(
    corpus: &[Dataset],
    encoder: &EncoderConfig,
    meta: &MetaConfig,
    cfg: &EvalConfig,
    cell: &Cell<'_>,
) -> Result<Vec<ResultRow>> {
    let v = cell.variant;
    let train_sets: Vec<Dataset> = v
        .train
        .iter()
        .map(|&d| corpus[d].subset(&cell.plans[d].train))
        .collect();
    let forbidden: BTreeSet<(String, String)> = v.train.iter().flat_map(|&d| cell.plans[d].forbidden()).collect();
    let mcfg = MetaConfig {
        mode: cell.mode,
        seed: cell.seed,
        lr_inner: v.lr_inner.unwrap_or(meta.lr_inner),
        budget: v.budget.unwrap_or(meta.budget),
        ..meta.clone()
    };
    let model = ModelBundle::new(encoder.clone(), cell.seed)?;
    let (model, _) = train_model(
        &train_sets,
        model,
        &mcfg,
        TrainOptions {
            forbidden,
            on_step: None,
        },
    )?;
    let trained_on = v
        .train
        .iter()
        .map(|&d| corpus[d].id.to_string())
        .collect::<Vec<_>>()
        .join("+");
    let mut rows = Vec::new();
    for (d, ds) in corpus.iter().enumerate() {
        let sets: Vec<(SplitKind, Vec<usize>)> = if v.train.contains(&d) {
            vec![
                (SplitKind::Seen, cell.plans[d].eval_seen.clone()),
                (SplitKind::Unseen, cell.plans[d].eval_unseen.clone()),
            ]
        } else {
            vec![(SplitKind::Unseen, (0..ds.samples.len()).collect())]
        };
        for (split, idx) in sets {
            let samples: Vec<&Sample> = idx.iter().map(|&i| &ds.samples[i]).collect();
            let cm = evaluate(&model, &samples, meta.exec)?;
            let f = macro_f1(&cm);
            rows.push(ResultRow {
                protocol: cfg.protocol.to_string(),
                variant: v.name.clone(),
                mode: cell.mode,
                seed: cell.seed,
                fold: cell.fold,
                trained_on: trained_on.clone(),
                dataset: ds.id.to_string(),
                split,
                n: cm.total(),
                mf1: f.mf1,
                f1_w: f.per_class[0],
                f1_n1: f.per_class[1],
                f1_n2: f.per_class[2],
                f1_n3: f.per_class[3],
                f1_rem: f.per_class[4],
            });
        }
    }
    log::info!(
        "{} {} seed {} fold {} {}: {}",
        cfg.protocol,
        v.name,
        cell.seed,
        cell.fold,
        cell.mode,
        rows.iter()
            .map(|r| format!("{}({}) {:.3}", r.dataset, r.split.tag(), r.mf1))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(rows)
}

fn build_tables(protocol: Protocol, corpus: &[Dataset], vars: &[Variant], modes: &[Mode], rows: &[ResultRow]) -> Vec<Table> {
    let ids: Vec<String> = corpus.iter().map(|d| d.id.to_string()).collect();
    let pick = |v: &Variant, m: Mode| {
        let name = v.name.clone();
        rows.iter().filter(move |r| r.variant == name && r.mode == m)
    };
    match protocol {
        Protocol::ThreeVsFive | Protocol::LambdaSweep => vars
            .iter()
            .map(|v| {
                let trained: Vec<String> = v.train.iter().map(|&d| ids[d].clone()).collect();
                let others: Vec<String> = ids.iter().filter(|i| !trained.contains(i)).cloned().collect();
                Table {
                    title: format!("{protocol} {}", v.name),
                    columns: seen_unseen_columns(&trained, &others),
                    rows: modes
                        .iter()
                        .map(|&m| (m.to_string(), seen_unseen_values(&mean_scores(pick(v, m)), &trained, &others)))
                        .collect(),
                }
            })
            .collect(),
        Protocol::AllVsAll => {
            let v = &vars[0];
            let mut columns = ids.clone();
            columns.push("Avg".into());
            let mut out = Vec::new();
            for split in [SplitKind::Seen, SplitKind::Unseen] {
                for &m in modes {
                    let s = mean_scores(pick(v, m));
                    let mut vals: Vec<f64> = ids
                        .iter()
                        .map(|d| s.get(&(d.clone(), split)).copied().unwrap_or(f64::NAN))
                        .collect();
                    vals.push(mean(&vals));
                    out.push((format!("{m} ({})", split.tag()), vals));
                }
            }
            vec![Table {
                title: format!("{protocol}"),
                columns,
                rows: out,
            }]
        }
        Protocol::OneVsAll => modes
            .iter()
            .map(|&m| Table {
                title: format!("{protocol} {m}"),
                columns: ids.clone(),
                rows: vars
                    .iter()
                    .map(|v| {
                        let s = mean_scores(pick(v, m));
                        let vals = ids
                            .iter()
                            .map(|d| s.get(&(d.clone(), SplitKind::Unseen)).copied().unwrap_or(f64::NAN))
                            .collect();
                        (v.name.clone(), vals)
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Allowed shortfall of S2MAML against SL in the directional check.
pub const DIRECTIONAL_MARGIN: f64 = 0.02;

fn directional(tables_per_run: &[((u64, usize), Vec<Table>)], seeds: &[u64]) -> Option<Directional> {
    let column = "Avg(U2)";
    let mut per_seed = Vec::new();
    for &seed in seeds {
        let runs: Vec<&Table> = tables_per_run
            .iter()
            .filter(|((s, _), _)| *s == seed)
            .filter_map(|(_, t)| t.first())
            .collect();
        let s2: Vec<f64> = runs.iter().filter_map(|t| t.get("S2MAML", column)).collect();
        let sl: Vec<f64> = runs.iter().filter_map(|t| t.get("SL", column)).collect();
        if s2.is_empty() || sl.is_empty() {
            return None;
        }
        per_seed.push((seed, mean(&s2), mean(&sl)));
    }
    let ms = mean(&per_seed.iter().map(|p| p.1).collect::<Vec<_>>());
    let ml = mean(&per_seed.iter().map(|p| p.2).collect::<Vec<_>>());
    Some(Directional {
        column: column.into(),
        per_seed,
        mean_s2maml: ms,
        mean_sl: ml,
        margin: DIRECTIONAL_MARGIN,
        pass: ms >= ml - DIRECTIONAL_MARGIN,
    })
}

/// Runs every `(seed, fold, variant, mode)` cell of a protocol.
pub fn run_experiment(
    corpus: &[Dataset],
    encoder: &EncoderConfig,
    meta: &MetaConfig,
    cfg: &EvalConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    meta.validate()?;
    let vars = variants(corpus, cfg)?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        for fold in 0..cfg.folds {
            runs.push((seed, fold, fold_plans(corpus, cfg, seed, fold)?));
        }
    }
    let mut cells = Vec::new();
    for (seed, fold, plans) in &runs {
        for v in &vars {
            for &mode in &cfg.modes {
                cells.push(Cell {
                    seed: *seed,
                    fold: *fold,
                    plans,
                    variant: v,
                    mode,
                });
            }
        }
    }
    let rows: Vec<ResultRow> = cfg
        .exec
        .try_map(&cells, |c| run_cell(corpus, encoder, meta, cfg, c))?
        .into_iter()
        .flatten()
        .collect();
    let tables = build_tables(cfg.protocol, corpus, &vars, &cfg.modes, &rows);
    let per_run: Vec<((u64, usize), Vec<Table>)> = runs
        .iter()
        .map(|(s, f, _)| {
            let sub: Vec<ResultRow> = rows.iter().filter(|r| r.seed == *s && r.fold == *f).cloned().collect();
            ((*s, *f), build_tables(cfg.protocol, corpus, &vars, &cfg.modes, &sub))
        })
        .collect();
    let directional = matches!(cfg.protocol, Protocol::ThreeVsFive)
        .then(|| directional(&per_run, &cfg.seeds))
        .flatten();
    Ok(ExperimentReport {
        protocol: cfg.protocol.to_string(),
        rows,
        tables,
        per_run,
        directional,
    })
}
