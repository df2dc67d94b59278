use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vibed_bench::{full_config, matrix, samples, small_config};
use vibed_core::loss::batch_loss;
use vibed_core::rng;
use vibed_core::{AdamW, AdamWConfig, Graph, Variant, VibedModel};

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 256] {
        let a = matrix(n, n);
        let b = matrix(n, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| a.matmul(&b).unwrap())
        });
    }
    group.finish();
}

fn forward_full_size(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_60x1028");
    group.sample_size(10).measurement_time(Duration::from_secs(20));
    let sample = &samples(1, 60, 1028)[0];
    let (scene, face) = sample.tensors().unwrap();
    for variant in [Variant::Lstm, Variant::Transformer] {
        let model = VibedModel::new(full_config(variant, 60, 1028)).unwrap();
        group.bench_function(variant.to_string(), |b| b.iter(|| model.logits(&scene, &face).unwrap()));
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step_batch8");
    group.sample_size(20);
    let data = samples(8, 16, 64);
    let batch: Vec<_> = data.iter().collect();
    for variant in [Variant::Lstm, Variant::Transformer] {
        let mut model = VibedModel::new(small_config(variant, 16, 64)).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default(), &model.params).unwrap();
        let mut dropout = rng::seeded(1);
        group.bench_function(variant.to_string(), |b| {
            b.iter(|| {
                model.params.zero_grad();
                let grads = {
                    let g = Graph::with_params(&model.params);
                    let loss = batch_loss(&g, &model, &batch, true, &mut dropout).unwrap();
                    g.backward(loss).unwrap()
                };
                model.params.accumulate(&grads).unwrap();
                opt.step(&mut model.params).unwrap();
            })
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, forward_full_size, train_step);
criterion_main!(benches);
