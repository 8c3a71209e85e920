use std::hint::black_box;

use cofft_bench::{peaked_map, random_grid};
use cofft_core::attention::{iou_top_fraction, relative_attention};
use cofft_core::backend::{MockBackend, SyntheticScene};
use cofft_core::focus::{adjust_focus, enumerate_windows};
use cofft_core::harness::suite::SCENE_QUESTION;
use cofft_core::harness::{run_synthetic_suite, SuiteConfig};
use cofft_core::orchestrator::{run_cofft, EngineConfig, Example};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    for n in [8, 16, 32] {
        let text = random_grid(1, n, n);
        let desc = random_grid(2, n, n);
        group.bench_with_input(BenchmarkId::new("relative", n), &n, |b, _| {
            b.iter(|| relative_attention(black_box(&text), black_box(&desc), 1e-10).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("iou_top30", n), &n, |b, _| {
            b.iter(|| iou_top_fraction(black_box(&text), black_box(&desc), 0.3).unwrap())
        });
    }
    group.finish();
}

fn focus(c: &mut Criterion) {
    let mut group = c.benchmark_group("focus");
    for n in [8, 16, 24] {
        let (q, chain, sample) = (peaked_map(3, n, n), peaked_map(4, n, n), peaked_map(5, n, n));
        let windows = enumerate_windows((n, n)).unwrap();
        group.bench_with_input(BenchmarkId::new("enumerate", n), &n, |b, &n| {
            b.iter(|| enumerate_windows(black_box((n, n))).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("adjust", n), &n, |b, _| {
            b.iter(|| adjust_focus(&q, &chain, &sample, 0.3, black_box(&windows)).unwrap())
        });
    }
    group.finish();
}

fn loop_on_mock(c: &mut Criterion) {
    let mock = MockBackend::new();
    let image = mock.register(SyntheticScene::random(11));
    let example = Example { image, question: SCENE_QUESTION.into() };
    let mut group = c.benchmark_group("run");
    for k in [1, 4, 8] {
        let cfg = EngineConfig { k, ..EngineConfig::default() };
        group.bench_with_input(BenchmarkId::new("k", k), &k, |b, _| {
            b.iter(|| run_cofft(black_box(&example), &cfg, &mock).unwrap())
        });
    }
    group.finish();

    let configs: Vec<_> = ["full", "no-dfd", "no-vfa", "greedy"]
        .iter()
        .map(|n| SuiteConfig::named(n, &EngineConfig::default()).unwrap())
        .collect();
    c.bench_function("suite_50_scenes", |b| b.iter(|| run_synthetic_suite(50, 0, &configs, true).unwrap()));
}

criterion_group!(benches, attention, focus, loop_on_mock);
criterion_main!(benches);
