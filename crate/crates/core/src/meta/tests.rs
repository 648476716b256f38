use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diff::{OptimizerKind, ParamSet};
use crate::edf::Stage;
use crate::error::Error;
use crate::exec::Exec;
use crate::signal::Sample;
use crate::sleepnet::{ConvBlock, EncoderConfig, Example, ModelBundle};
use crate::tasks::{sample_batch, split_meta, Dataset};

fn tiny(dropout: f64) -> EncoderConfig {
    EncoderConfig {
        in_channels: 2,
        input_len: 64,
        small: vec![ConvBlock::new(4, 5, 2, 2)],
        large: vec![ConvBlock::new(3, 16, 4, 2)],
        dropout,
    }
}

/// Class 0 (W) is a fast tone, class 3 (N3) a slow one.
fn two_class_dataset(id: &str, subjects: usize, per_subject: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vec::new();
    for s in 0..subjects {
        for i in 0..per_subject {
            let (label, f) = if i % 2 == 0 { (Stage::W, 0.9) } else { (Stage::N3, 0.15) };
            let ph: f32 = rng.random_range(0.0..6.0);
            let x: Vec<f32> = (0..128)
                .map(|t| ((t % 64) as f32 * f + ph).sin() + rng.random_range(-0.3..0.3))
                .collect();
            v.push(Sample {
                x: x.into(),
                n_channels: 2,
                label,
                subject_id: format!("s{s}").into(),
                dataset_id: id.into(),
                recording: 0,
            });
        }
    }
    Dataset::new(id, v)
}

fn flat(p: &ParamSet<f64>) -> Vec<f64> {
    p.flat_values()
}

#[test]
fn zero_inner_steps_match_supervised_training() {
    let data = [two_class_dataset("a", 3, 10, 1), two_class_dataset("b", 2, 12, 2)];
    let cfg = MetaConfig {
        n_inner: 0,
        n_tasks: 2,
        task_size: 4,
        outer_optimizer: OptimizerKind::Sgd,
        lr_outer: 0.05,
        ..MetaConfig::default()
    };
    let model = ModelBundle::<f64>::new(tiny(0.0), 3).unwrap();
    let mut meta = Trainer::new(model.clone(), cfg.clone()).unwrap();
    let mut sl = Trainer::new(model, MetaConfig { mode: Mode::Sl, ..cfg }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let batch = sample_batch(&data, 2, 4, &mut rng).unwrap();
        let split = split_meta(batch, &mut rng).unwrap();
        let pooled: Vec<Example> = split.val.iter().flat_map(|t| t.examples()).collect();
        meta.meta_step(&split, &mut rng).unwrap();
        sl.sl_step(&[pooled], 0).unwrap();
        for (a, b) in [(&meta.model.encoder, &sl.model.encoder), (&meta.model.sl_head, &sl.model.sl_head)] {
            let d = flat(a).iter().zip(flat(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(d <= 1e-12, "trajectories diverged by {d}");
        }
    }
}

#[test]
fn inner_loops_touch_only_their_own_head() {
    let data = [two_class_dataset("a", 3, 10, 4), two_class_dataset("b", 3, 10, 5)];
    for mode in [Mode::S2maml, Mode::Maml] {
        let cfg = MetaConfig {
            mode,
            n_tasks: 2,
            task_size: 4,
            lr_inner: 0.01,
            ..MetaConfig::default()
        };
        let model = ModelBundle::<f32>::new(tiny(0.2), 1).unwrap();
        let mut t = Trainer::new(model.clone(), cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let split = split_meta(sample_batch(&data, 2, 4, &mut rng).unwrap(), &mut rng).unwrap();
        t.meta_step(&split, &mut rng).unwrap();
        let ssl_changed = t.model.ssl_head != model.ssl_head;
        assert_eq!(ssl_changed, mode == Mode::S2maml, "{mode}");
        assert_ne!(t.model.sl_head, model.sl_head);
        assert_ne!(t.model.encoder, model.encoder);
    }
}

#[test]
fn every_iteration_consumes_a_full_batch() {
    let data = [two_class_dataset("a", 2, 6, 6), two_class_dataset("b", 2, 6, 7)];
    let cfg = MetaConfig {
        n_tasks: 3,
        task_size: 4,
        budget: Budget::Updates(4),
        ..MetaConfig::default()
    };
    let (_, h) = train(&data, &tiny(0.1), &cfg).unwrap();
    assert_eq!(h.entries.len(), 4);
    assert!(h.entries.iter().all(|e| e.consumed == 6 && e.l_in.is_some()));
}

#[test]
fn epoch_budgets_count_pooled_samples() {
    let cfg = MetaConfig::default();
    // 5 datasets x 32 tasks x 8 samples = 1280 samples per iteration
    assert_eq!(planned_updates(&cfg, 5, 2560), 40);
    assert_eq!(planned_updates(&cfg, 5, 2561), 60);
    let sl = MetaConfig { mode: Mode::Sl, ..cfg };
    assert_eq!(planned_updates(&sl, 5, 640), 200);
}

#[test]
fn supervised_loss_halves_on_separable_data() {
    let data = [two_class_dataset("a", 4, 16, 8)];
    let cfg = MetaConfig {
        mode: Mode::Sl,
        lr_outer: 3e-3,
        sl_batch: 16,
        smoothing: 0.0,
        budget: Budget::Updates(200),
        ..MetaConfig::default()
    };
    let (_, h) = train(&data, &tiny(0.0), &cfg).unwrap();
    let mean = |r: &[HistoryEntry]| r.iter().map(|e| e.l_out).sum::<f64>() / r.len() as f64;
    let (first, last) = (mean(&h.entries[..10]), mean(&h.entries[190..]));
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn training_is_reproducible_across_strategies() {
    let data = [two_class_dataset("a", 3, 8, 10), two_class_dataset("b", 3, 8, 11)];
    for mode in Mode::ALL {
        let run = |exec| {
            let cfg = MetaConfig {
                mode,
                n_tasks: 2,
                task_size: 4,
                sl_batch: 8,
                budget: Budget::Updates(3),
                exec,
                ..MetaConfig::default()
            };
            train(&data, &tiny(0.3), &cfg).unwrap()
        };
        let (m1, h1) = run(Exec::Sequential);
        let (m2, h2) = run(Exec::Parallel);
        let (m3, h3) = run(Exec::Sequential);
        assert!(h1.same_trajectory(&h2) && h1.same_trajectory(&h3), "{mode}");
        assert_eq!(m1, m2);
        assert_eq!(m1, m3);
    }
}

#[test]
fn held_out_subjects_trip_the_audit() {
    let data = [two_class_dataset("a", 2, 8, 12)];
    let cfg = MetaConfig {
        n_tasks: 2,
        task_size: 4,
        budget: Budget::Updates(20),
        ..MetaConfig::default()
    };
    let forbidden: BTreeSet<_> = [("a".to_string(), "s1".to_string())].into();
    let model = ModelBundle::<f32>::new(tiny(0.0), 0).unwrap();
    let opts = TrainOptions {
        forbidden,
        on_step: None,
    };
    assert!(matches!(train_model(&data, model, &cfg, opts), Err(Error::Invariant(_))));
}

#[test]
fn invalid_setups_are_rejected() {
    let cfg = MetaConfig::default();
    assert!(matches!(train(&[], &tiny(0.0), &cfg), Err(Error::Data(_))));
    let empty = [Dataset::new("e", vec![])];
    assert!(matches!(train(&empty, &tiny(0.0), &cfg), Err(Error::Data(_))));
    let odd = MetaConfig { n_tasks: 3, ..cfg.clone() };
    let data = [two_class_dataset("a", 2, 4, 0)];
    assert!(matches!(train(&data, &tiny(0.0), &odd), Err(Error::Config(_))));
    let bad = MetaConfig { lr_outer: 0.0, ..cfg };
    assert!(bad.validate().is_err());
    assert!("S2MAML".parse::<Mode>().is_ok() && "x".parse::<Mode>().is_err());
}

#[test]
fn history_is_line_delimited_json() {
    let data = [two_class_dataset("a", 2, 8, 13)];
    let cfg = MetaConfig {
        mode: Mode::Sl,
        sl_batch: 4,
        budget: Budget::Epochs(1),
        seed: 77,
        ..MetaConfig::default()
    };
    let (_, h) = train(&data, &tiny(0.0), &cfg).unwrap();
    assert_eq!(h.entries.len(), 4);
    let text = h.to_jsonl().unwrap();
    let back: Vec<HistoryEntry> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(back, h.entries);
    assert!(text.lines().next().unwrap().contains("\"mode\":\"sl\""));
}

#[test]
fn default_hyperparameters() {
    let c = MetaConfig::default();
    assert_eq!(
        (c.n_tasks, c.n_inner, c.lr_outer, c.lr_inner, c.task_size, c.budget),
        (32, 1, 1e-4, 5e-5, 8, Budget::Epochs(20))
    );
    assert_eq!((c.inner_optimizer, c.outer_optimizer), (OptimizerKind::Sgd, OptimizerKind::Adam));
    assert_eq!((c.smoothing, c.sl_batch), (0.1, 64));
}
