use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use emlc::autodiff::{finite_diff_grad, Tensor};
use emlc::bilevel::{
    clean_feedback_grad, fpmg, inner_step, unrolled_oracle, BilevelConfig, OuterObjective,
    SnapshotBuffer,
};
use emlc::harness::verify::Fixture;
use emlc::par;

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", false), ("sequential", true)]
}

fn window(fx: &Fixture, k: usize) -> (SnapshotBuffer, Tensor, Tensor, BilevelConfig) {
    let p = fx.problem();
    let (w, a) = fx.params(0);
    let mut buf = SnapshotBuffer::new(k, w);
    for b in fx.batches(k, 1).unwrap() {
        let next = inner_step(&p, buf.head(), &a, &b, 0.1).unwrap();
        buf.advance(b, next);
    }
    let g = clean_feedback_grad(&fx.outer(), buf.head()).unwrap();
    let config = BilevelConfig {
        k,
        lr_inner: 0.1,
        lr_meta: 0.1,
        steps: k,
        noisy_batch: 8,
        clean_batch: 20,
    };
    (buf, a, g, config)
}

fn bench_fpmg(c: &mut Criterion) {
    let fx = Fixture::small();
    let p = fx.problem();
    let (buf, a, g, config) = window(&fx, 8);
    let mut group = c.benchmark_group("fpmg_k8");
    for (name, seq) in modes() {
        par::set_sequential(seq);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| fpmg(&p, &buf, &a, black_box(&g), &config).unwrap())
        });
    }
    par::set_sequential(false);
    group.finish();
}

fn bench_finite_diff(c: &mut Criterion) {
    let fx = Fixture::small();
    let outer = fx.outer();
    let (w, _) = fx.params(2);
    let mut group = c.benchmark_group("finite_diff_clean_loss");
    for (name, seq) in modes() {
        par::set_sequential(seq);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| finite_diff_grad(|v: &Tensor| outer.loss(v), black_box(&w), 1e-5).unwrap())
        });
    }
    par::set_sequential(false);
    group.finish();
}

fn bench_oracle(c: &mut Criterion) {
    let fx = Fixture::tiny();
    let p = fx.problem();
    let outer = fx.outer();
    let (w, a) = fx.params(3);
    let batches = fx.batches(2, 4).unwrap();
    let mut group = c.benchmark_group("unrolled_oracle_k2");
    group.sample_size(10);
    for (name, seq) in modes() {
        par::set_sequential(seq);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| unrolled_oracle(&p, &outer, &w, black_box(&a), &batches, 0.1, 1e-3).unwrap())
        });
    }
    par::set_sequential(false);
    group.finish();
}

criterion_group!(benches, bench_fpmg, bench_finite_diff, bench_oracle);
criterion_main!(benches);
