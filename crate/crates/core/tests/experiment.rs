use std::sync::OnceLock;

use sleepmeta::eval::{run_experiment, synth_corpus, EvalConfig, Protocol, SplitKind, SynthSpec};
use sleepmeta::meta::{Budget, MetaConfig, Mode};
use sleepmeta::signal::PrepConfig;
use sleepmeta::sleepnet::{ConvBlock, EncoderConfig};
use sleepmeta::tasks::Dataset;
use sleepmeta::Exec;

fn corpus() -> &'static [Dataset] {
    static C: OnceLock<Vec<Dataset>> = OnceLock::new();
    C.get_or_init(|| {
        let spec = SynthSpec {
            subjects_per_dataset: 4,
            recordings_per_subject: 1,
            minutes: 6.0,
            ..SynthSpec::default()
        };
        synth_corpus(&spec, &PrepConfig::default(), Exec::Parallel).unwrap()
    })
}

fn tiny() -> EncoderConfig {
    EncoderConfig {
        small: vec![ConvBlock::new(2, 8, 64, 4)],
        large: vec![ConvBlock::new(2, 32, 128, 2)],
        ..EncoderConfig::default()
    }
}

fn meta() -> MetaConfig {
    MetaConfig {
        n_tasks: 2,
        task_size: 2,
        sl_batch: 4,
        budget: Budget::Updates(2),
        ..MetaConfig::desk(Mode::Sl, 0)
    }
}

fn eval(protocol: Protocol) -> EvalConfig {
    EvalConfig {
        protocol,
        folds: 1,
        seeds: vec![3],
        ..EvalConfig::default()
    }
}

#[test]
fn three_vs_five_has_the_seen_unseen_layout() {
    let r = run_experiment(corpus(), &tiny(), &meta(), &eval(Protocol::ThreeVsFive)).unwrap();
    assert_eq!(r.tables.len(), 1);
    let t = &r.tables[0];
    let expected = [
        "A(S)", "B(S)", "C(S)", "Avg(S)", "A(U)", "B(U)", "C(U)", "Avg(U1)", "D(U)", "E(U)", "Avg(U2)", "Avg(U)",
    ];
    assert_eq!(t.columns, expected);
    let names: Vec<&str> = t.rows.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["S2MAML", "MAML", "SL"]);
    // 3 modes x (3 trained x 2 splits + 2 others)
    assert_eq!(r.rows.len(), 3 * 8);
    for (_, vals) in &t.rows {
        assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((vals[3] - (vals[0] + vals[1] + vals[2]) / 3.0).abs() < 1e-12);
        assert!((vals[10] - (vals[8] + vals[9]) / 2.0).abs() < 1e-12);
    }
    let d = r.directional.as_ref().unwrap();
    assert_eq!(d.per_seed.len(), 1);
    assert_eq!(d.pass, d.mean_s2maml >= d.mean_sl - d.margin);
    let unseen_d: Vec<_> = r.rows.iter().filter(|x| x.dataset == "D").collect();
    assert!(unseen_d.iter().all(|x| x.split == SplitKind::Unseen && x.n == corpus()[3].samples.len() as u64));
}

#[test]
fn one_vs_all_is_a_full_matrix_per_mode() {
    let cfg = EvalConfig {
        modes: vec![Mode::Sl],
        fixed_updates: 2,
        ..eval(Protocol::OneVsAll)
    };
    let r = run_experiment(corpus(), &tiny(), &meta(), &cfg).unwrap();
    assert_eq!(r.tables.len(), 1);
    let t = &r.tables[0];
    assert_eq!(t.columns.len(), 5);
    assert_eq!(t.rows.len(), 5);
    assert!(t.rows.iter().all(|(_, v)| v.iter().all(|x| x.is_finite())));
}

#[test]
fn all_vs_all_cross_validates() {
    let cfg = EvalConfig {
        folds: 2,
        modes: vec![Mode::Sl, Mode::S2maml],
        ..eval(Protocol::AllVsAll)
    };
    let r = run_experiment(corpus(), &tiny(), &meta(), &cfg).unwrap();
    assert_eq!(r.rows.len(), 2 * 2 * 5 * 2);
    assert_eq!(r.per_run.len(), 2);
    let t = &r.tables[0];
    assert_eq!(t.columns.last().unwrap(), "Avg");
    assert_eq!(t.rows.len(), 4);
    // fold means equal an external tabulation of the per-fold rows
    let sl_seen_a: Vec<f64> = r
        .rows
        .iter()
        .filter(|x| x.mode == Mode::Sl && x.dataset == "A" && x.split == SplitKind::Seen)
        .map(|x| x.mf1)
        .collect();
    assert_eq!(sl_seen_a.len(), 2);
    let v = t.get("SL (S)", "A").unwrap();
    assert!((v - (sl_seen_a[0] + sl_seen_a[1]) / 2.0).abs() < 1e-12);
}

#[test]
fn lambda_sweep_has_one_table_per_rate() {
    let cfg = EvalConfig {
        modes: vec![Mode::S2maml],
        ..eval(Protocol::LambdaSweep)
    };
    let r = run_experiment(corpus(), &tiny(), &meta(), &cfg).unwrap();
    assert_eq!(r.tables.len(), 2);
    assert!(r.tables[0].title.contains("1e-3"));
}

#[test]
fn short_rosters_are_rejected() {
    let err = run_experiment(&corpus()[..3], &tiny(), &meta(), &eval(Protocol::ThreeVsFive)).unwrap_err();
    assert!(err.to_string().contains("at least 5"));
    assert!(run_experiment(&corpus()[..3], &tiny(), &meta(), &eval(Protocol::AllVsAll)).is_ok());
}

#[test]
fn reports_are_written() {
    let cfg = EvalConfig {
        modes: vec![Mode::Sl],
        ..eval(Protocol::ThreeVsFive)
    };
    let r = run_experiment(corpus(), &tiny(), &meta(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    for f in ["three_vs_five_rows.csv", "three_vs_five_table1.csv", "three_vs_five_summary.json", "three_vs_five_tables.md"] {
        let body = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(!body.is_empty(), "{f}");
    }
}

#[test]
fn cells_agree_across_exec_modes() {
    let a = run_experiment(corpus(), &tiny(), &meta(), &EvalConfig { modes: vec![Mode::Maml], ..eval(Protocol::ThreeVsFive) }).unwrap();
    let b = run_experiment(
        corpus(),
        &tiny(),
        &MetaConfig { exec: Exec::Sequential, ..meta() },
        &EvalConfig { modes: vec![Mode::Maml], exec: Exec::Parallel, ..eval(Protocol::ThreeVsFive) },
    )
    .unwrap();
    assert_eq!(a.rows, b.rows);
}
