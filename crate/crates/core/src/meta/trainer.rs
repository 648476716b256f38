use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Budget, MetaConfig, Mode};
use super::fomaml::{inner_loop, outer_step};
use crate::diff::{Checkpoint, Optimizer, ParamSet, Scalar};
use crate::error::{Error, Result};
use crate::signal::Sample;
use crate::sleepnet::{loss_with, EncoderConfig, Example, Head, LossOptions, ModelBundle};
use crate::tasks::{generate_ssl_task, sample_batch, split_meta, Dataset, MetaSplit, SslTask, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    /// Mean inner loss; absent when no inner step ran.
    pub l_in: Option<f64>,
    pub l_out: f64,
    pub mode: Mode,
    pub seed: u64,
    /// Tasks (meta modes) or samples (supervised mode) consumed.
    pub consumed: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub entries: Vec<HistoryEntry>,
    pub final_checkpoint: Option<String>,
}

impl TrainHistory {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Equal up to wall-clock times.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.iteration == b.iteration
                    && a.l_in.map(f64::to_bits) == b.l_in.map(f64::to_bits)
                    && a.l_out.to_bits() == b.l_out.to_bits()
                    && a.mode == b.mode
                    && a.seed == b.seed
                    && a.consumed == b.consumed
            })
    }
}

/// Model plus the outer optimizers (encoder first, stage head second).
pub struct Trainer<T> {
    pub model: ModelBundle<T>,
    pub cfg: MetaConfig,
    outer: Vec<Optimizer<T>>,
}

fn take_set<T: Scalar>(p: &mut ParamSet<T>) -> ParamSet<T> {
    let group = p.group();
    std::mem::replace(p, ParamSet::new(group))
}

fn task_examples<'d>(tasks: &[Task<'d>]) -> Vec<Vec<Example<'d>>> {
    tasks.iter().map(Task::examples).collect()
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: ModelBundle<T>, cfg: MetaConfig) -> Result<Self> {
        cfg.validate()?;
        let outer = vec![
            Optimizer::new(cfg.outer_optimizer, &model.encoder),
            Optimizer::new(cfg.outer_optimizer, &model.sl_head),
        ];
        Ok(Self { model, cfg, outer })
    }

    fn loss_opts(&self, dropout_seed: u64) -> LossOptions {
        LossOptions {
            smoothing: self.cfg.smoothing,
            dropout_seed: Some(dropout_seed),
            track_kinks: false,
            exec: self.cfg.exec,
        }
    }

    /// One outer iteration on a meta split. Returns the mean inner loss (if
    /// any inner step ran) and the outer loss.
    pub fn meta_step<R: Rng + ?Sized>(&mut self, split: &MetaSplit<'_>, rng: &mut R) -> Result<(Option<f64>, f64)> {
        let head = match self.cfg.mode {
            Mode::S2maml => Head::Ssl,
            Mode::Maml => Head::Sl,
            Mode::Sl => return Err(Error::Config("meta_step called in supervised mode".into())),
        };
        let config = self.model.config.clone();
        let inner_head = match head {
            Head::Ssl => take_set(&mut self.model.ssl_head),
            Head::Sl => self.model.sl_head.copy_params(),
        };
        let mut adapted = vec![self.model.encoder.copy_params(), inner_head];
        let mut inner_opts: Vec<Optimizer<T>> =
            adapted.iter().map(|p| Optimizer::new(self.cfg.inner_optimizer, p)).collect();
        let train_sup = task_examples(&split.train);
        let res = inner_loop(&mut adapted, &mut inner_opts, self.cfg.lr_inner, self.cfg.n_inner, |_, p| {
            let seed = rng.random::<u64>();
            let v = if head == Head::Ssl {
                let ssl: Vec<SslTask<'_>> = split
                    .train
                    .iter()
                    .map(|t| generate_ssl_task(t, &mut *rng))
                    .collect::<Result<_>>()?;
                let ex: Vec<Vec<Example<'_>>> = ssl.iter().map(SslTask::examples).collect();
                loss_with(&config, &p[0], &p[1], head, &ex, &self.loss_opts(seed), true)?
            } else {
                loss_with(&config, &p[0], &p[1], head, &train_sup, &self.loss_opts(seed), true)?
            };
            Ok((v.loss, vec![v.encoder, v.head]))
        });
        let inner_head = adapted.pop().expect("two adapted sets");
        let sl_at = if head == Head::Ssl {
            self.model.ssl_head = inner_head;
            self.model.sl_head.clone()
        } else {
            inner_head
        };
        let inner_losses = res?;
        let enc_in = adapted.pop().expect("two adapted sets");
        let at = [enc_in, sl_at];
        let val = task_examples(&split.val);
        let opts = self.loss_opts(rng.random());
        let mut targets = vec![take_set(&mut self.model.encoder), take_set(&mut self.model.sl_head)];
        let res = outer_step(&mut targets, &mut self.outer, self.cfg.lr_outer, &at, |p| {
            let v = loss_with(&config, &p[0], &p[1], Head::Sl, &val, &opts, true)?;
            Ok((v.loss, vec![v.encoder, v.head]))
        });
        self.model.sl_head = targets.pop().expect("two targets");
        self.model.encoder = targets.pop().expect("two targets");
        let l_out = res?;
        let l_in = (!inner_losses.is_empty()).then(|| inner_losses.iter().sum::<f64>() / inner_losses.len() as f64);
        Ok((l_in, l_out))
    }

    /// One supervised step of the encoder and stage head on `tasks`
    /// (a single pooled group in plain supervised training).
    pub fn sl_step(&mut self, tasks: &[Vec<Example<'_>>], dropout_seed: u64) -> Result<f64> {
        let v = loss_with(
            &self.model.config,
            &self.model.encoder,
            &self.model.sl_head,
            Head::Sl,
            tasks,
            &self.loss_opts(dropout_seed),
            true,
        )?;
        let lr = self.cfg.lr_outer;
        self.outer[0].apply(&mut self.model.encoder, v.encoder, lr)?;
        self.outer[1].apply(&mut self.model.sl_head, v.head, lr)?;
        Ok(v.loss)
    }

    /// Model and outer optimizer state.
    pub fn checkpoint(&self) -> Result<Checkpoint<T>> {
        let mut ck = self.model.to_checkpoint()?;
        ck.set_meta("mode", self.cfg.mode);
        ck.set_meta("seed", self.cfg.seed);
        for (name, opt, params) in [
            ("opt/encoder", &self.outer[0], &self.model.encoder),
            ("opt/sl_head", &self.outer[1], &self.model.sl_head),
        ] {
            if let Some(st) = opt.adam_state() {
                ck.add_adam(name, params, st);
            }
        }
        Ok(ck)
    }
}

/// Extra controls for [`train_model`].
#[derive(Default)]
pub struct TrainOptions<'h, T> {
    /// `(dataset_id, subject_id)` pairs that must never reach a gradient.
    pub forbidden: BTreeSet<(String, String)>,
    /// Called after every update with the iteration index.
    pub on_step: Option<Box<dyn FnMut(usize, &Trainer<T>, &HistoryEntry) -> Result<()> + 'h>>,
}

fn audit<'s>(forbidden: &BTreeSet<(String, String)>, samples: impl IntoIterator<Item = &'s Sample>) -> Result<()> {
    if forbidden.is_empty() {
        return Ok(());
    }
    for s in samples {
        if forbidden.contains(&(s.dataset_id.to_string(), s.subject_id.to_string())) {
            return Err(Error::Invariant(format!(
                "held-out subject {}/{} reached training",
                s.dataset_id, s.subject_id
            )));
        }
    }
    Ok(())
}

/// Number of updates implied by the budget.
pub fn planned_updates(cfg: &MetaConfig, n_datasets: usize, n_samples: usize) -> usize {
    match cfg.budget {
        Budget::Updates(n) => n,
        Budget::Epochs(e) => {
            let per_update = if cfg.mode.is_meta() {
                n_datasets * cfg.n_tasks * cfg.task_size
            } else {
                cfg.sl_batch
            };
            e * n_samples.div_ceil(per_update.max(1))
        }
    }
}

/// Trains a fresh model of the given architecture in `f32`.
pub fn train(
    datasets: &[Dataset],
    encoder: &EncoderConfig,
    cfg: &MetaConfig,
) -> Result<(ModelBundle<f32>, TrainHistory)> {
    let model = ModelBundle::new(encoder.clone(), cfg.seed)?;
    train_model(datasets, model, cfg, TrainOptions::default())
}

pub fn train_model<T: Scalar>(
    datasets: &[Dataset],
    model: ModelBundle<T>,
    cfg: &MetaConfig,
    mut opts: TrainOptions<'_, T>,
) -> Result<(ModelBundle<T>, TrainHistory)> {
    if datasets.is_empty() {
        return Err(Error::Data("no training datasets".into()));
    }
    if let Some(d) = datasets.iter().find(|d| d.is_empty()) {
        return Err(Error::Data(format!("training dataset '{}' is empty", d.id)));
    }
    if cfg.mode.is_meta() && (datasets.len() * cfg.n_tasks) % 2 != 0 {
        return Err(Error::Config(format!(
            "{} datasets x {} tasks cannot be split into two halves",
            datasets.len(),
            cfg.n_tasks
        )));
    }
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a5c);
    let n_samples: usize = datasets.iter().map(|d| d.samples.len()).sum();
    let total = planned_updates(cfg, datasets.len(), n_samples);
    let mut history = TrainHistory::default();
    let pool: Vec<&Sample> = datasets.iter().flat_map(|d| d.samples.iter()).collect();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    for it in 0..total {
        let start = Instant::now();
        let (l_in, l_out, consumed) = if cfg.mode.is_meta() {
            let batch = sample_batch(datasets, cfg.n_tasks, cfg.task_size, &mut rng)?;
            audit(&opts.forbidden, batch.tasks.iter().flat_map(|t| t.samples.iter().copied()))?;
            let n = batch.tasks.len();
            let split = split_meta(batch, &mut rng)?;
            let (l_in, l_out) = trainer.meta_step(&split, &mut rng)?;
            (l_in, l_out, n)
        } else {
            if cursor >= order.len() {
                order = (0..pool.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let end = (cursor + cfg.sl_batch).min(order.len());
            let batch: Vec<&Sample> = order[cursor..end].iter().map(|&i| pool[i]).collect();
            cursor = end;
            audit(&opts.forbidden, batch.iter().copied())?;
            let ex = vec![batch.iter().map(|s| Example { x: &s.x, class: s.class() }).collect()];
            let l = trainer.sl_step(&ex, rng.random())?;
            (None, l, batch.len())
        };
        let entry = HistoryEntry {
            iteration: it,
            l_in,
            l_out,
            mode: cfg.mode,
            seed: cfg.seed,
            consumed,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if !l_out.is_finite() {
            return Err(Error::NonFinite { op: "training loss" });
        }
        log::debug!("{} iteration {it}: l_in {:?} l_out {:.5}", cfg.mode, l_in, l_out);
        if let Some(cb) = opts.on_step.as_mut() {
            cb(it, &trainer, &entry)?;
        }
        history.entries.push(entry);
    }
    Ok((trainer.model, history))
}
