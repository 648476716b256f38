use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::Dataset;

/// Held-out subjects plus a per-recording sample split of the others.
/// Indices refer to `Dataset::samples`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub dataset_id: Arc<str>,
    pub unseen_subjects: Vec<Arc<str>>,
    pub train: Vec<usize>,
    pub eval_seen: Vec<usize>,
    pub eval_unseen: Vec<usize>,
}

impl SplitPlan {
    pub fn forbidden(&self) -> BTreeSet<(String, String)> {
        self.unseen_subjects
            .iter()
            .map(|s| (self.dataset_id.to_string(), s.to_string()))
            .collect()
    }
}

/// Number of held-out subjects: a quarter, rounded, at least one.
pub fn n_unseen(n_subjects: usize, ratio: f64) -> usize {
    (((1.0 - ratio) * n_subjects as f64).round() as usize).clamp(1, n_subjects.saturating_sub(1).max(1))
}

/// Holds out a random quarter of the subjects and splits every recording
/// of the remaining subjects `ratio : 1 - ratio` into train and eval-seen.
pub fn subject_split<R: Rng + ?Sized>(ds: &Dataset, ratio: f64, rng: &mut R) -> Result<SplitPlan> {
    if ds.n_subjects() < 2 {
        return Err(Error::Data(format!(
            "dataset '{}' has {} subject(s); an unseen split needs at least 2",
            ds.id,
            ds.n_subjects()
        )));
    }
    let mut subjects: Vec<Arc<str>> = ds.subjects().cloned().collect();
    subjects.shuffle(rng);
    subjects.truncate(n_unseen(ds.n_subjects(), ratio));
    split_with_unseen(ds, &subjects, ratio, rng)
}

/// As [`subject_split`] with a fixed held-out set.
pub fn split_with_unseen<R: Rng + ?Sized>(
    ds: &Dataset,
    unseen: &[Arc<str>],
    ratio: f64,
    rng: &mut R,
) -> Result<SplitPlan> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("split ratio {ratio} outside [0, 1]")));
    }
    let held: BTreeSet<&str> = unseen.iter().map(|s| &**s).collect();
    let mut plan = SplitPlan {
        dataset_id: ds.id.clone(),
        unseen_subjects: unseen.to_vec(),
        train: Vec::new(),
        eval_seen: Vec::new(),
        eval_unseen: Vec::new(),
    };
    let mut unseen_subjects: Vec<Arc<str>> = unseen.to_vec();
    unseen_subjects.sort();
    plan.unseen_subjects = unseen_subjects;
    for subject in ds.subjects() {
        let idx = ds.subject_samples(subject);
        if held.contains(&**subject) {
            plan.eval_unseen.extend_from_slice(idx);
            continue;
        }
        let mut by_rec: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &i in idx {
            by_rec.entry(ds.samples[i].recording).or_default().push(i);
        }
        for (_, mut r) in by_rec {
            r.shuffle(rng);
            let n_train = (ratio * r.len() as f64).round() as usize;
            plan.eval_seen.extend_from_slice(&r[n_train..]);
            r.truncate(n_train);
            plan.train.extend(r);
        }
    }
    plan.train.sort_unstable();
    plan.eval_seen.sort_unstable();
    plan.eval_unseen.sort_unstable();
    Ok(plan)
}

/// Partitions the subjects into `k` folds of near-equal size.
pub fn subject_folds<R: Rng + ?Sized>(ds: &Dataset, k: usize, rng: &mut R) -> Result<Vec<Vec<Arc<str>>>> {
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {k}")));
    }
    if ds.n_subjects() < k {
        return Err(Error::Data(format!(
            "dataset '{}' has {} subjects for {k} folds",
            ds.id,
            ds.n_subjects()
        )));
    }
    let mut subjects: Vec<Arc<str>> = ds.subjects().cloned().collect();
    subjects.shuffle(rng);
    let mut folds = vec![Vec::new(); k];
    for (i, s) in subjects.into_iter().enumerate() {
        folds[i % k].push(s);
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}
