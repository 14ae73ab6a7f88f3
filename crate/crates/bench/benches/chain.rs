//! Impairment chain and end-to-end trial timings.

use criterion::{criterion_group, criterion_main, Criterion};
use satlink_bench::reference_frame;
use satlink_core::channel::{propagate, ImpairmentConfig};
use satlink_core::harness::{run_trial, ExperimentConfig};
use std::hint::black_box;

fn bench_propagate(c: &mut Criterion) {
    let (frame, _) = reference_frame(3);
    let cfg = ImpairmentConfig {
        seed: 17,
        ..ImpairmentConfig::default()
    };
    c.bench_function("propagate_default_frame", |b| {
        b.iter(|| propagate(black_box(&frame), black_box(&cfg)).unwrap())
    });
}

fn bench_trial(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    c.bench_function("run_trial_six_receivers", |b| {
        b.iter(|| run_trial(black_box(&cfg), 4, 0).unwrap())
    });
}

criterion_group!(benches, bench_propagate, bench_trial);
criterion_main!(benches);
