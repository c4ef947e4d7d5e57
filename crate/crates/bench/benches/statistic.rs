use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use mmdtest_bench::standard_dataset;
use mmdtest_core::{bandwidth_median, mmd_sq_statistic};

fn bench_statistic(c: &mut Criterion) {
    let mut group = c.benchmark_group("mmd_sq_statistic");
    for (n, d) in [(200, 10), (500, 10), (200, 300), (500, 300)] {
        let data = standard_dataset(n, d);
        let sigma = (d as f64).powf(-1.0);
        group.bench_function(format!("n{n}_d{d}"), |b| {
            b.iter(|| mmd_sq_statistic(black_box(&data), black_box(sigma)).unwrap())
        });
    }
    group.finish();
}

fn bench_median_heuristic(c: &mut Criterion) {
    let data = standard_dataset(500, 50);
    c.bench_function("bandwidth_median/n500_d50", |b| {
        b.iter(|| bandwidth_median(black_box(&data)).unwrap())
    });
}

criterion_group!(benches, bench_statistic, bench_median_heuristic);
criterion_main!(benches);
