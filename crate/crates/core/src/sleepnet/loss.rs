use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::EncoderConfig;
use super::model::{classify, encode, input, Head, ModelBundle};
use crate::diff::{ParamSet, Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Samples per gradient accumulation chunk. Fixed so that the summation
/// order does not depend on the execution strategy.
pub const GRAD_CHUNK: usize = 8;

/// Lower clamp on probabilities before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// A labelled input borrowed for one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Example<'s> {
    pub x: &'s [f32],
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub smoothing: f64,
    /// Enables dropout; each example gets its own stream of this seed.
    pub dropout_seed: Option<u64>,
    pub track_kinks: bool,
    pub exec: Exec,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            smoothing: 0.1,
            dropout_seed: None,
            track_kinks: false,
            exec: Exec::default(),
        }
    }
}

/// Loss value with gradients for the encoder and the chosen head.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub loss: f64,
    pub encoder: Vec<Tensor<T>>,
    pub head: Vec<Tensor<T>>,
    pub kink: u64,
}

/// `(1 - a) * onehot + a / n`.
pub fn smoothed_target<T: Scalar>(class: usize, n: usize, smoothing: f64) -> Vec<T> {
    (0..n)
        .map(|c| T::from_f64((1.0 - smoothing) * (c == class) as u8 as f64 + smoothing / n as f64))
        .collect()
}

struct Partial<T> {
    loss: f64,
    encoder: Vec<Tensor<T>>,
    head: Vec<Tensor<T>>,
    kinks: Vec<u64>,
}

fn add_all<T: Scalar>(acc: &mut Vec<Tensor<T>>, g: Vec<Tensor<T>>) {
    if acc.is_empty() {
        *acc = g;
    } else {
        for (a, b) in acc.iter_mut().zip(&g) {
            a.add_assign(b);
        }
    }
}

/// Task-averaged smoothed cross-entropy: the mean over tasks of the mean
/// over each task's examples. Gradients are returned when `grads` is set.
pub fn task_loss<T: Scalar>(
    model: &ModelBundle<T>,
    head: Head,
    tasks: &[Vec<Example<'_>>],
    opts: &LossOptions,
    grads: bool,
) -> Result<LossValue<T>> {
    loss_with(&model.config, &model.encoder, model.head(head), head, tasks, opts, grads)
}

/// [`task_loss`] over explicit parameter sets, e.g. adapted copies.
pub fn loss_with<T: Scalar>(
    config: &EncoderConfig,
    encoder: &ParamSet<T>,
    hp: &ParamSet<T>,
    head: Head,
    tasks: &[Vec<Example<'_>>],
    opts: &LossOptions,
    grads: bool,
) -> Result<LossValue<T>> {
    if tasks.is_empty() {
        return Err(Error::Data("loss over an empty task set".into()));
    }
    if let Some(i) = tasks.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("task {i} is empty")));
    }
    if !(0.0..=1.0).contains(&opts.smoothing) {
        return Err(Error::Config(format!("label smoothing {} outside [0, 1]", opts.smoothing)));
    }
    let n_classes = head.classes();
    let mut flat: Vec<(Example<'_>, f64)> = Vec::new();
    for t in tasks {
        let w = 1.0 / (tasks.len() as f64 * t.len() as f64);
        for &e in t {
            if e.class >= n_classes {
                return Err(Error::Data(format!("label {} for a {n_classes}-way head", e.class)));
            }
            flat.push((e, w));
        }
    }
    let chunks: Vec<usize> = (0..flat.len()).step_by(GRAD_CHUNK).collect();
    let partials = opts.exec.try_map(&chunks, |&start| -> Result<Partial<T>> {
        let mut acc = Partial {
            loss: 0.0,
            encoder: Vec::new(),
            head: Vec::new(),
            kinks: Vec::new(),
        };
        for (i, (e, w)) in flat.iter().enumerate().skip(start).take(GRAD_CHUNK) {
            let mut tape = Tape::new();
            if opts.track_kinks {
                tape = tape.tracking_kinks();
            }
            let enc = tape.bind(encoder);
            let hv = tape.bind(hp);
            let x = input(&mut tape, config, e.x)?;
            let mut h = encode(&mut tape, config, &enc, x)?;
            if let Some(seed) = opts.dropout_seed {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                h = tape.dropout(h, config.dropout, &mut rng, true)?;
            }
            let p = classify(&mut tape, h, &hv)?;
            let target = smoothed_target::<T>(e.class, n_classes, opts.smoothing);
            let ce = tape.cross_entropy(p, &target, T::from_f64(PROB_FLOOR))?;
            let l = tape.scale(ce, T::from_f64(*w))?;
            acc.loss += tape.value(l).item().expect("scalar loss").to_f64();
            acc.kinks.push(tape.kink_signature());
            if grads {
                let mut g = tape.backward(l)?;
                add_all(&mut acc.encoder, g.collect(&enc, encoder));
                add_all(&mut acc.head, g.collect(&hv, hp));
            }
        }
        Ok(acc)
    })?;
    let mut out = LossValue {
        loss: 0.0,
        encoder: Vec::new(),
        head: Vec::new(),
        kink: 0xcbf2_9ce4_8422_2325,
    };
    for p in partials {
        out.loss += p.loss;
        add_all(&mut out.encoder, p.encoder);
        add_all(&mut out.head, p.head);
        for k in p.kinks {
            out.kink = (out.kink ^ k).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    if !grads {
        out.encoder.clear();
        out.head.clear();
    }
    Ok(out)
}
