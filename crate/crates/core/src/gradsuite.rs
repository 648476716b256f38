//! Finite-difference suite over every differentiable primitive and the full
//! classification loss, with shapes drawn per seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diff::gradcheck::relative_error;
use crate::diff::{grad_check, Evaluation, GradCheckReport, Padding, ParamSet, Tape, Tensor, Var};
use crate::error::Result;
use crate::sleepnet::{task_loss, ConvBlock, EncoderConfig, Example, Head, LossOptions, ModelBundle};

pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Primitive {
    Conv { c_in: usize, c_out: usize, len: usize, k: usize, stride: usize, same: bool },
    Pool { c: usize, len: usize, window: usize, stride: usize },
    Dense { n_in: usize, n_out: usize },
    Relu { n: usize },
    Dropout { n: usize },
    Softmax { n: usize },
    CrossEntropy { n: usize },
    Concat { a: usize, b: usize },
    Scale { n: usize },
}

impl Primitive {
    pub const NAMES: [&'static str; 9] =
        ["conv1d", "maxpool1d", "dense", "relu", "dropout", "softmax", "cross_entropy", "concat", "scale"];

    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Conv { .. } => "conv1d",
            Primitive::Pool { .. } => "maxpool1d",
            Primitive::Dense { .. } => "dense",
            Primitive::Relu { .. } => "relu",
            Primitive::Dropout { .. } => "dropout",
            Primitive::Softmax { .. } => "softmax",
            Primitive::CrossEntropy { .. } => "cross_entropy",
            Primitive::Concat { .. } => "concat",
            Primitive::Scale { .. } => "scale",
        }
    }

    /// Random shape for the primitive named `name`.
    pub fn random(name: &str, rng: &mut impl Rng) -> Option<Self> {
        Some(match name {
            "conv1d" => {
                let len = rng.random_range(4..24);
                Primitive::Conv {
                    c_in: rng.random_range(1..4),
                    c_out: rng.random_range(1..4),
                    len,
                    k: rng.random_range(1..=len.min(6)),
                    stride: rng.random_range(1..4),
                    same: rng.random(),
                }
            }
            "maxpool1d" => {
                let len = rng.random_range(4..20);
                Primitive::Pool {
                    c: rng.random_range(1..4),
                    len,
                    window: rng.random_range(1..=len.min(4)),
                    stride: rng.random_range(1..4),
                }
            }
            "dense" => Primitive::Dense {
                n_in: rng.random_range(1..12),
                n_out: rng.random_range(1..8),
            },
            "relu" => Primitive::Relu { n: rng.random_range(1..30) },
            "dropout" => Primitive::Dropout { n: rng.random_range(1..30) },
            "softmax" => Primitive::Softmax { n: rng.random_range(1..10) },
            "cross_entropy" => Primitive::CrossEntropy { n: rng.random_range(2..8) },
            "concat" => Primitive::Concat {
                a: rng.random_range(1..8),
                b: rng.random_range(1..8),
            },
            "scale" => Primitive::Scale { n: rng.random_range(1..16) },
            _ => return None,
        })
    }

    fn leaves(&self, rng: &mut impl Rng) -> Vec<Tensor<f64>> {
        let mut r = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .expect("shape and data agree")
        };
        match *self {
            Primitive::Conv { c_in, c_out, len, k, .. } => vec![r(&[c_in, len]), r(&[c_out, c_in, k]), r(&[c_out])],
            Primitive::Pool { c, len, .. } => vec![r(&[c, len])],
            Primitive::Dense { n_in, n_out } => vec![r(&[n_in]), r(&[n_out, n_in]), r(&[n_out])],
            Primitive::Relu { n }
            | Primitive::Dropout { n }
            | Primitive::Softmax { n }
            | Primitive::CrossEntropy { n }
            | Primitive::Scale { n } => vec![r(&[n])],
            Primitive::Concat { a, b } => vec![r(&[a]), r(&[b])],
        }
    }

    /// Weighted sum of the primitive's output, so every output coordinate
    /// contributes to the scalar.
    fn eval(&self, ls: &[Tensor<f64>], weights: &[f64], target: &[f64], want: bool) -> Result<(f64, u64, Vec<Tensor<f64>>)> {
        let mut tape = Tape::new().tracking_kinks();
        let vars: Vec<Var> = ls.iter().map(|t| tape.param(t)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let out = match *self {
            Primitive::Conv { stride, same, .. } => {
                let pad = if same { Padding::Same } else { Padding::Valid };
                tape.conv1d(vars[0], vars[1], vars[2], stride, pad)?
            }
            Primitive::Pool { window, stride, .. } => tape.maxpool1d(vars[0], window, stride)?,
            Primitive::Dense { .. } => tape.dense(vars[0], vars[1], vars[2])?,
            Primitive::Relu { .. } => tape.relu(vars[0])?,
            Primitive::Dropout { .. } => tape.dropout(vars[0], 0.4, &mut rng, true)?,
            Primitive::Softmax { .. } => tape.softmax(vars[0])?,
            Primitive::CrossEntropy { n } => {
                let p = tape.softmax(vars[0])?;
                tape.cross_entropy(p, &target[..n], 1e-12)?
            }
            Primitive::Concat { .. } => tape.concat(&vars)?,
            Primitive::Scale { .. } => tape.scale(vars[0], -1.7)?,
        };
        let flat = tape.flatten(out)?;
        let n = tape.value(flat).len();
        let w = tape.constant(Tensor::vector(weights[..n].to_vec()));
        let prod = tape.mul(flat, w)?;
        let s = tape.sum(prod)?;
        let loss = tape.value(s).item().expect("scalar");
        let kink = tape.kink_signature();
        let grads = if want {
            let mut g = tape.backward(s)?;
            vars.iter().zip(ls).map(|(&v, t)| g.take_or_zeros(v, t)).collect()
        } else {
            vec![]
        };
        Ok((loss, kink, grads))
    }

    /// Checks every input coordinate of one randomly drawn instance.
    pub fn check(&self, seed: u64) -> Result<GradCheckReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ls = self.leaves(&mut rng);
        let weights: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut target: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = target.iter().sum();
        target.iter_mut().for_each(|t| *t /= total);
        let (_, base_kink, grads) = self.eval(&ls, &weights, &target, true)?;
        let mut report = GradCheckReport::default();
        for li in 0..ls.len() {
            for i in 0..ls[li].len() {
                let orig = ls[li].data()[i];
                ls[li].data_mut()[i] = orig + STEP;
                let (fp, kp, _) = self.eval(&ls, &weights, &target, false)?;
                ls[li].data_mut()[i] = orig - STEP;
                let (fm, km, _) = self.eval(&ls, &weights, &target, false)?;
                ls[li].data_mut()[i] = orig;
                if kp != base_kink || km != base_kink {
                    report.skipped += 1;
                    continue;
                }
                let err = relative_error(grads[li].data()[i], (fp - fm) / (2.0 * STEP));
                report.checked += 1;
                if report.worst.is_none() || err > report.max_rel_error {
                    report.max_rel_error = err;
                    report.worst = Some(format!("{}[{li}][{i}]", self.name()));
                }
            }
        }
        Ok(report)
    }
}

/// Small random dual-branch encoder for loss checks.
pub fn random_encoder(rng: &mut impl Rng) -> EncoderConfig {
    loop {
        let c = draw_encoder(rng);
        if c.validate().is_ok() {
            return c;
        }
    }
}

fn draw_encoder(rng: &mut impl Rng) -> EncoderConfig {
    let in_channels = rng.random_range(1..4);
    let input_len = rng.random_range(30..60);
    let block = |rng: &mut dyn rand::RngCore, kmax: usize| {
        ConvBlock::new(rng.random_range(1..4), rng.random_range(1..kmax), rng.random_range(1..4), rng.random_range(1..3))
    };
    EncoderConfig {
        in_channels,
        input_len,
        small: (0..rng.random_range(1..3)).map(|_| block(rng, 5)).collect(),
        large: (0..rng.random_range(1..3)).map(|_| block(rng, 9)).collect(),
        dropout: rng.random_range(0.0..0.5),
    }
}

/// Checks the smoothed cross-entropy of either head with respect to the
/// encoder and both heads. `max_per_tensor` limits the checked coordinates.
pub fn check_loss(config: &EncoderConfig, head: Head, seed: u64, max_per_tensor: Option<usize>) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = ModelBundle::<f64>::new(config.clone(), seed)?;
    let n = config.in_channels * config.input_len;
    let xs: Vec<Vec<f32>> = (0..4).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let k = head.classes();
    let tasks: Vec<Vec<Example>> = vec![
        vec![
            Example { x: &xs[0], class: rng.random_range(0..k) },
            Example { x: &xs[1], class: rng.random_range(0..k) },
        ],
        vec![
            Example { x: &xs[2], class: rng.random_range(0..k) },
            Example { x: &xs[3], class: rng.random_range(0..k) },
        ],
    ];
    let opts = LossOptions {
        dropout_seed: rng.random::<bool>().then_some(seed),
        track_kinks: true,
        ..Default::default()
    };
    let mut sets: Vec<ParamSet<f64>> = vec![m.encoder.clone(), m.sl_head.clone(), m.ssl_head.clone()];
    let cfg = m.config.clone();
    grad_check(&mut sets, STEP, max_per_tensor, |p, want| {
        let mb = ModelBundle {
            config: cfg.clone(),
            encoder: p[0].clone(),
            sl_head: p[1].clone(),
            ssl_head: p[2].clone(),
        };
        let v = task_loss(&mb, head, &tasks, &opts, want)?;
        let grads = want.then(|| {
            let zeros = |s: &ParamSet<f64>| s.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect::<Vec<_>>();
            match head {
                Head::Sl => vec![v.encoder.clone(), v.head.clone(), zeros(&p[2])],
                Head::Ssl => vec![v.encoder.clone(), zeros(&p[1]), v.head.clone()],
            }
        });
        Ok(Evaluation {
            loss: v.loss,
            kink: v.kink,
            grads,
        })
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub item: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&SuiteEntry> {
        self.entries.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    /// Items in which no coordinate could be compared.
    pub fn vacuous(&self) -> Vec<&SuiteEntry> {
        self.entries.iter().filter(|e| e.checked == 0).collect()
    }
}

fn entry(item: String, seed: u64, r: &GradCheckReport) -> SuiteEntry {
    SuiteEntry {
        item,
        seed,
        max_rel_error: r.max_rel_error,
        checked: r.checked,
        skipped: r.skipped,
    }
}

/// Every primitive and both loss heads at every seed, on random shapes.
pub fn run_suite(seeds: impl IntoIterator<Item = u64>) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for name in Primitive::NAMES {
            let p = Primitive::random(name, &mut rng).expect("known name");
            report.entries.push(entry(name.into(), seed, &p.check(seed)?));
        }
        let enc = random_encoder(&mut rng);
        for head in [Head::Sl, Head::Ssl] {
            let r = check_loss(&enc, head, seed, None)?;
            report.entries.push(entry(format!("loss/{}", head.as_str()), seed, &r));
        }
    }
    Ok(report)
}
