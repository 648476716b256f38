//! Per-subject task sampling, meta-train/validation splits and the
//! PhaseSwap pretext task.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::signal::fft::{irfft, rfft, SpectralPair};
use crate::signal::Sample;
use crate::sleepnet::Example;

/// Samples of one dataset, indexed by subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: Arc<str>,
    pub samples: Vec<Sample>,
    by_subject: BTreeMap<Arc<str>, Vec<usize>>,
}

impl Dataset {
    pub fn new(id: impl Into<Arc<str>>, samples: Vec<Sample>) -> Self {
        let mut by_subject: BTreeMap<Arc<str>, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            by_subject.entry(s.subject_id.clone()).or_default().push(i);
        }
        Self {
            id: id.into(),
            samples,
            by_subject,
        }
    }

    /// Subject ids in sorted order.
    pub fn subjects(&self) -> impl Iterator<Item = &Arc<str>> {
        self.by_subject.keys()
    }

    pub fn n_subjects(&self) -> usize {
        self.by_subject.len()
    }

    pub fn subject_samples(&self, subject: &str) -> &[usize] {
        self.by_subject.get(subject).map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// A dataset holding only the given sample indices.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self::new(self.id.clone(), idx.iter().map(|&i| self.samples[i].clone()).collect())
    }
}

/// Labelled samples of a single subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Task<'d> {
    pub subject_id: Arc<str>,
    pub dataset_id: Arc<str>,
    pub samples: Vec<&'d Sample>,
}

impl<'d> Task<'d> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn examples(&self) -> Vec<Example<'d>> {
        self.samples
            .iter()
            .map(|s| Example {
                x: &s.x,
                class: s.class(),
            })
            .collect()
    }
}

/// Tasks drawn for one outer iteration: `n_tasks` per dataset, dataset by
/// dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch<'d> {
    pub tasks: Vec<Task<'d>>,
    pub n_datasets: usize,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaSplit<'d> {
    pub train: Vec<Task<'d>>,
    pub val: Vec<Task<'d>>,
}

/// Binary-labelled signals; label 1 marks a phase-swapped signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SslTask<'d> {
    pub pairs: Vec<(Cow<'d, [f32]>, usize)>,
}

impl SslTask<'_> {
    pub fn examples(&self) -> Vec<Example<'_>> {
        self.pairs.iter().map(|(x, y)| Example { x, class: *y }).collect()
    }
}

/// Picks a subject uniformly, then `size` of its samples: without
/// replacement when it has enough, with replacement otherwise.
pub fn sample_task<'d, R: Rng + ?Sized>(ds: &'d Dataset, size: usize, rng: &mut R) -> Result<Task<'d>> {
    if ds.n_subjects() == 0 {
        return Err(Error::Data(format!("dataset '{}' has no samples", ds.id)));
    }
    let k = rng.random_range(0..ds.n_subjects());
    let (subject, idx) = ds.by_subject.iter().nth(k).expect("index below subject count");
    let picks: Vec<usize> = if idx.len() >= size {
        index::sample(rng, idx.len(), size).into_iter().map(|i| idx[i]).collect()
    } else {
        (0..size).map(|_| idx[rng.random_range(0..idx.len())]).collect()
    };
    Ok(Task {
        subject_id: subject.clone(),
        dataset_id: ds.id.clone(),
        samples: picks.into_iter().map(|i| &ds.samples[i]).collect(),
    })
}

pub fn sample_batch<'d, R: Rng + ?Sized>(
    datasets: &'d [Dataset],
    n_tasks: usize,
    size: usize,
    rng: &mut R,
) -> Result<TaskBatch<'d>> {
    let mut tasks = Vec::with_capacity(datasets.len() * n_tasks);
    for ds in datasets {
        for _ in 0..n_tasks {
            tasks.push(sample_task(ds, size, rng)?);
        }
    }
    Ok(TaskBatch {
        tasks,
        n_datasets: datasets.len(),
        n_tasks,
    })
}

/// Uniform random partition into two equal halves.
pub fn split_meta<'d, R: Rng + ?Sized>(batch: TaskBatch<'d>, rng: &mut R) -> Result<MetaSplit<'d>> {
    let n = batch.tasks.len();
    if n % 2 != 0 {
        return Err(Error::Config(format!("cannot halve an odd task batch of {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut slots: Vec<Option<Task<'d>>> = batch.tasks.into_iter().map(Some).collect();
    let mut take = |ix: &[usize]| ix.iter().map(|&i| slots[i].take().expect("each index once")).collect();
    let train = take(&order[..n / 2]);
    let val = take(&order[n / 2..]);
    Ok(MetaSplit { train, val })
}

/// Per channel, the spectral magnitude of `x` combined with the spectral
/// phase of `partner`.
pub fn phase_swap(x: &[f32], partner: &[f32], n_channels: usize) -> Result<Vec<f32>> {
    if x.len() != partner.len() || n_channels == 0 || x.len() % n_channels != 0 {
        return Err(Error::shape(
            "phase_swap",
            format!("{} vs {} values over {n_channels} channels", x.len(), partner.len()),
        ));
    }
    let n = x.len() / n_channels;
    let mut out = Vec::with_capacity(x.len());
    for (a, b) in x.chunks_exact(n).zip(partner.chunks_exact(n)) {
        if a.iter().all(|&v| v == 0.0) {
            out.extend(std::iter::repeat_n(0.0, n));
            continue;
        }
        let fa = rfft(&a.iter().map(|&v| v as f64).collect::<Vec<_>>());
        let fb = rfft(&b.iter().map(|&v| v as f64).collect::<Vec<_>>());
        let mixed = SpectralPair {
            magnitude: fa.magnitude,
            phase: fb.phase,
        };
        out.extend(irfft(&mixed, n)?.into_iter().map(|v| v as f32));
    }
    Ok(out)
}

/// Each sample appears once as is (label 0) and once phase-swapped with a
/// partner drawn uniformly from the other samples of the task (label 1).
pub fn generate_ssl_task<'d, R: Rng + ?Sized>(task: &Task<'d>, rng: &mut R) -> Result<SslTask<'d>> {
    let n = task.len();
    let mut pairs = Vec::with_capacity(2 * n);
    for (i, s) in task.samples.iter().enumerate() {
        let j = if n > 1 {
            let r = rng.random_range(0..n - 1);
            if r >= i {
                r + 1
            } else {
                r
            }
        } else {
            i
        };
        let swapped = phase_swap(&s.x, &task.samples[j].x, s.n_channels)?;
        pairs.push((Cow::Borrowed(&*s.x), 0));
        pairs.push((Cow::Owned(swapped), 1));
    }
    Ok(SslTask { pairs })
}

#[cfg(test)]
mod tests;
