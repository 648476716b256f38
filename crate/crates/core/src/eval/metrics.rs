use serde::{Deserialize, Serialize};

use crate::edf::Stage;

const N: usize = Stage::N_CLASSES;

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cm = Self::default();
        for (t, p) in pairs {
            cm.add(t, p);
        }
        cm
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            return 0.0;
        }
        (0..N).map(|c| self.counts[c][c]).sum::<u64>() as f64 / t as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub per_class: [f64; N],
    pub mf1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class F1 and their unweighted mean. Every 0/0 counts as 0.
pub fn macro_f1(cm: &ConfusionMatrix) -> F1Scores {
    let mut per_class = [0.0; N];
    for (c, f) in per_class.iter_mut().enumerate() {
        let tp = cm.counts[c][c];
        let predicted: u64 = (0..N).map(|t| cm.counts[t][c]).sum();
        let actual: u64 = cm.counts[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        *f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    F1Scores {
        per_class,
        mf1: per_class.iter().sum::<f64>() / N as f64,
    }
}
