use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sleepmeta::sleepnet::{task_loss, EncoderConfig, Example, Head, LossOptions, ModelBundle};
use sleepmeta::Exec;

fn inputs(cfg: &EncoderConfig, n: usize) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|_| (0..cfg.in_channels * cfg.input_len).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn loss_and_gradient(c: &mut Criterion) {
    let cfg = EncoderConfig::desk();
    let model = ModelBundle::<f32>::new(cfg.clone(), 0).unwrap();
    let xs = inputs(&cfg, 16);
    let tasks: Vec<Vec<Example>> = xs
        .chunks(8)
        .map(|c| c.iter().enumerate().map(|(i, x)| Example { x, class: i % 5 }).collect())
        .collect();
    let mut g = c.benchmark_group("loss_and_gradient_16");
    g.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let opts = LossOptions {
            dropout_seed: Some(3),
            exec,
            ..Default::default()
        };
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &opts, |b, o| {
            b.iter(|| task_loss(&model, Head::Sl, &tasks, o, true).unwrap())
        });
    }
    g.finish();
}

fn prediction(c: &mut Criterion) {
    let cfg = EncoderConfig::desk();
    let model = ModelBundle::<f32>::new(cfg.clone(), 0).unwrap();
    let xs = inputs(&cfg, 32);
    let mut g = c.benchmark_group("predict_32");
    g.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        g.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| exec.try_map(&xs, |x| model.predict_class(x)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, loss_and_gradient, prediction);
criterion_main!(benches);
