//! Output-weight solver timings at the reference dimensions
//! (N = 1024, L = 6, I = 3), one per receiver variant.

use criterion::{criterion_group, criterion_main, Criterion};
use satlink_bench::training_fixture;
use satlink_core::numerics;
use satlink_core::receivers::{train, MlVariant, DEFAULT_INIT_VARIANCE};
use std::hint::black_box;

fn bench_train(c: &mut Criterion) {
    let (z, x) = training_fixture(1024, 3, 7);
    let mut group = c.benchmark_group("train_n1024_l6_i3");
    for variant in [
        MlVariant::Elm,
        MlVariant::Celm,
        MlVariant::Celmah,
        MlVariant::CelmWlls,
    ] {
        group.bench_function(variant.to_string(), |b| {
            b.iter(|| {
                train(
                    black_box(&z),
                    black_box(&x),
                    variant,
                    6,
                    42,
                    DEFAULT_INIT_VARIANCE,
                    0.0,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_solvers(c: &mut Criterion) {
    let (z, x) = training_fixture(1024, 3, 9);
    let w = satlink_core::numerics::CMatrix::from_fn(6, 3, |p, i| {
        num_complex::Complex64::new(0.05 * (p as f64 - i as f64), 0.03 * (p + i) as f64)
    });
    let b =
        satlink_core::numerics::CVector::from_element(6, num_complex::Complex64::new(0.05, -0.02));
    let h = satlink_core::receivers::hidden_layer(&z, &w, &b, Default::default()).unwrap();

    let mut group = c.benchmark_group("weight_solvers");
    group.bench_function("augmented_pinv", |bch| {
        bch.iter(|| numerics::augmented_pinv_solve(black_box(&h), black_box(&x)).unwrap())
    });
    group.bench_function("wlls_block_elimination", |bch| {
        bch.iter(|| {
            let stats = numerics::compute_stats(black_box(&h), black_box(&x)).unwrap();
            numerics::wlls_solve(&stats, 0.0).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_train, bench_solvers);
criterion_main!(benches);
