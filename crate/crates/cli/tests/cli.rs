use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[model]
small = [{ filters = 2, kernel = 8, stride = 64, pool = 4 }]
large = [{ filters = 2, kernel = 32, stride = 128, pool = 2 }]

[synth]
subjects_per_dataset = 4
recordings_per_subject = 1
minutes = 6.0

[meta]
n_tasks = 2
task_size = 2
sl_batch = 4
budget = { updates = 2 }

[eval]
folds = 1
seeds = [0]
modes = ["sl", "s2maml"]
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sleepmeta"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.display().to_string()
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--updates", "many"]).status.code(), Some(1));
    let o = run(&["train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no data source"));
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[meta]\nn_taks = 4\n").unwrap();
    let o = run(&["train", "--synth", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("n_taks"));
}

#[test]
fn missing_data_path_exits_two_naming_it() {
    let o = run(&["train", "--manifest", "/nonexistent/corpus/manifest.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/corpus/manifest.csv"));
    let o = run(&["train", "--cache", "/nonexistent/samples.cache"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/samples.cache"));
}

#[test]
fn gradcheck_passes_on_the_desk_model() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gradcheck", "--preset", "desk", "--seeds", "2", "--coords", "1", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("max relative error")).unwrap();
    let err: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(err < 1e-5);
}

#[test]
fn synth_prep_train_eval_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let corpus = d.join("corpus");
    let o = run(&["synth", "-c", &cfg, "-o", corpus.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = corpus.join("manifest.csv");
    assert_eq!(std::fs::read_to_string(&manifest).unwrap().lines().count(), 1 + 5 * 4);
    assert!(corpus.join("A").join("A-s00_r0.edf").exists());

    let prep = d.join("prep");
    let o = run(&["prep", "-c", &cfg, "-o", prep.to_str().unwrap(), "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cache = prep.join("samples.cache");
    assert!(cache.exists());
    assert!(prep.join("manifest.json").exists());

    let train = d.join("train");
    let o = run(&[
        "train", "-c", &cfg, "-o", train.to_str().unwrap(), "--cache", cache.to_str().unwrap(), "--mode", "s2maml",
        "--updates", "3", "--seed", "4", "--holdout",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let history = std::fs::read_to_string(train.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(train.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 4);
    assert_eq!(m["command"], "train");

    // the snapshot reproduces the run bit for bit
    let again = d.join("again");
    let o = run(&[
        "train", "-c", train.join("config.toml").to_str().unwrap(), "-o", again.to_str().unwrap(), "--cache",
        cache.to_str().unwrap(), "--holdout",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["model.ckpt", "model.ckpt.bin"] {
        assert_eq!(std::fs::read(train.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }

    let ev = d.join("eval");
    let ck = train.join("model.ckpt");
    let o = run(&[
        "eval", "-c", &cfg, "-o", ev.to_str().unwrap(), "--cache", cache.to_str().unwrap(), "--checkpoint",
        ck.to_str().unwrap(), "--split", "unseen",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(ev.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().nth(1).unwrap().starts_with("A,unseen,"));

    let ex = d.join("experiment");
    let o = run(&[
        "experiment", "three_vs_five", "-c", &cfg, "-o", ex.to_str().unwrap(), "--manifest", manifest.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(ex.join("three_vs_five_table1.csv")).unwrap();
    assert!(table.lines().next().unwrap().contains("Avg(U2)"));
    assert_eq!(table.lines().count(), 3);
    assert!(stdout(&o).contains("Avg(U2): S2MAML"));
}

#[test]
fn missing_checkpoint_exits_two() {
    let o = run(&["eval", "--synth", "--checkpoint", "/nonexistent/model.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/model.ckpt"));
}
