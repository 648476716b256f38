use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::edf::Stage;

fn sample(subject: &str, value: f32, n_channels: usize, len: usize) -> Sample {
    Sample {
        x: (0..n_channels * len).map(|i| value + (i as f32 * 0.37).sin()).collect(),
        n_channels,
        label: Stage::N2,
        subject_id: subject.into(),
        dataset_id: "d".into(),
        recording: 0,
    }
}

fn dataset(subjects: &[(&str, usize)]) -> Dataset {
    let mut v = Vec::new();
    for (s, n) in subjects {
        for i in 0..*n {
            v.push(sample(s, i as f32, 1, 8));
        }
    }
    Dataset::new("d", v)
}

/// Naive DFT magnitudes.
fn dft_magnitude(x: &[f32]) -> Vec<f64> {
    let n = x.len();
    (0..n / 2 + 1)
        .map(|k| {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                re += v as f64 * a.cos();
                im += v as f64 * a.sin();
            }
            re.hypot(im)
        })
        .collect()
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[test]
fn exact_size_subject_yields_all_samples() {
    let ds = dataset(&[("a", 8)]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = sample_task(&ds, 8, &mut rng).unwrap();
    let mut got: Vec<f32> = t.samples.iter().map(|s| s.x[0]).collect();
    got.sort_by(f32::total_cmp);
    let mut want: Vec<f32> = ds.samples.iter().map(|s| s.x[0]).collect();
    want.sort_by(f32::total_cmp);
    assert_eq!(got, want);
}

#[test]
fn tasks_are_subject_pure() {
    let ds = dataset(&[("a", 20), ("b", 20)]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut seen = HashSet::new();
    for _ in 0..50 {
        let t = sample_task(&ds, 8, &mut rng).unwrap();
        assert!(t.samples.iter().all(|s| s.subject_id == t.subject_id));
        seen.insert(t.subject_id.clone());
    }
    assert_eq!(seen.len(), 2);
}

#[test]
fn small_subject_is_sampled_with_replacement() {
    let ds = dataset(&[("a", 3)]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = sample_task(&ds, 8, &mut rng).unwrap();
    assert_eq!(t.len(), 8);
    assert!(t.samples.iter().all(|s| ds.samples.contains(s)));
}

#[test]
fn empty_dataset_is_an_error() {
    let ds = Dataset::new("e", vec![]);
    assert!(sample_task(&ds, 8, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn batch_has_n_tasks_per_dataset() {
    let a = dataset(&[("a", 10), ("b", 4)]);
    let b = Dataset::new("e", vec![sample("z", 0.0, 1, 8)]);
    let all = [a, b];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = sample_batch(&all, 32, 8, &mut rng).unwrap();
    assert_eq!(batch.tasks.len(), 64);
    assert_eq!(batch.tasks.iter().filter(|t| &*t.dataset_id == "e").count(), 32);
    let split = split_meta(batch, &mut rng).unwrap();
    assert_eq!((split.train.len(), split.val.len()), (32, 32));
}

#[test]
fn odd_batches_cannot_be_split() {
    let ds = [dataset(&[("a", 8)])];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = sample_batch(&ds, 3, 8, &mut rng).unwrap();
    assert!(matches!(split_meta(b, &mut rng), Err(Error::Config(_))));
    let b = sample_batch(&ds, 2, 8, &mut rng).unwrap();
    let s = split_meta(b, &mut rng).unwrap();
    assert_eq!((s.train.len(), s.val.len()), (1, 1));
}

#[test]
fn impulse_takes_partner_phase() {
    let out = phase_swap(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], 1).unwrap();
    for (a, b) in out.iter().zip([0.0, 1.0, 0.0, 0.0]) {
        assert!((a - b).abs() < 1e-12, "{out:?}");
    }
}

#[test]
fn dummy_channels_stay_zero() {
    let mut x = sample("a", 1.0, 3, 64).x.to_vec();
    x[64..128].fill(0.0);
    let p = sample("a", 2.0, 3, 64).x;
    let out = phase_swap(&x, &p, 3).unwrap();
    assert!(out[64..128].iter().all(|&v| v == 0.0));
    assert!(phase_swap(&x, &p[1..], 3).is_err());
    assert!(phase_swap(&x[..190], &p[..190], 3).is_err());
}

#[test]
fn ssl_task_shape_and_balance() {
    let ds = dataset(&[("a", 8)]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = sample_task(&ds, 8, &mut rng).unwrap();
    let s = generate_ssl_task(&t, &mut rng).unwrap();
    assert_eq!(s.pairs.len(), 16);
    assert_eq!(s.pairs.iter().filter(|p| p.1 == 0).count(), 8);
    for (x, y) in &s.pairs {
        if *y == 0 {
            assert!(t.samples.iter().any(|o| *o.x == **x));
        }
    }
    let empty = Task {
        samples: vec![],
        ..t.clone()
    };
    assert!(generate_ssl_task(&empty, &mut rng).unwrap().pairs.is_empty());
    let single = Task {
        samples: vec![t.samples[0]],
        ..t
    };
    let s = generate_ssl_task(&single, &mut rng).unwrap();
    let back: Vec<f64> = s.pairs[1].0.iter().map(|&v| v as f64).collect();
    let orig: Vec<f64> = s.pairs[0].0.iter().map(|&v| v as f64).collect();
    assert!(rms(&back, &orig) < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn swap_preserves_magnitude_and_self_identity(
        seed in any::<u64>(),
        n_channels in 1usize..4,
        len in 2usize..300,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f32> = (0..n_channels * len).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let p: Vec<f32> = (0..n_channels * len).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let same = phase_swap(&x, &x, n_channels).unwrap();
        let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let ss: Vec<f64> = same.iter().map(|&v| v as f64).collect();
        prop_assert!(rms(&xs, &ss) < 1e-6);
        let ps = phase_swap(&x, &p, n_channels).unwrap();
        for c in 0..n_channels {
            let a = dft_magnitude(&x[c * len..(c + 1) * len]);
            let b = dft_magnitude(&ps[c * len..(c + 1) * len]);
            prop_assert!(rms(&a, &b) < 1e-5, "channel {} rms {}", c, rms(&a, &b));
        }
    }

    #[test]
    fn meta_split_is_a_partition(seed in any::<u64>(), n_tasks in 1usize..10) {
        let ds = [dataset(&[("a", 9), ("b", 3), ("c", 12)])];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = sample_batch(&ds, 2 * n_tasks, 4, &mut rng).unwrap();
        let all = batch.tasks.clone();
        let s = split_meta(batch, &mut rng).unwrap();
        prop_assert_eq!(s.train.len(), n_tasks);
        prop_assert_eq!(s.val.len(), n_tasks);
        let mut rejoined: Vec<_> = s.train.iter().chain(&s.val).map(|t| format!("{t:?}")).collect();
        let mut orig: Vec<_> = all.iter().map(|t| format!("{t:?}")).collect();
        rejoined.sort();
        orig.sort();
        prop_assert_eq!(rejoined, orig);
    }
}
