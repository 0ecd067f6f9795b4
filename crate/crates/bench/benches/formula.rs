use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rankcast_core::demo::planted_records;
use rankcast_core::formula::{all_formulas, find, loo_correlation, select_best, TargetKind};
use rankcast_core::symreg::{gp_discover, GpConfig};

fn formulas(c: &mut Criterion) {
    let records = planted_records(200, 7);
    let catalog = all_formulas();
    let shifted = find("D5").unwrap();
    let mut group = c.benchmark_group("formula_200_records");
    group.sample_size(10);
    group.bench_function("select_best/all", |b| {
        b.iter(|| select_best(black_box(&catalog), &records, TargetKind::RelDegradation).unwrap())
    });
    group.bench_function("loo_correlation/shifted", |b| {
        b.iter(|| loo_correlation(shifted, black_box(&records), TargetKind::LogOdds))
    });
    group.finish();
}

fn discovery(c: &mut Criterion) {
    let records = planted_records(50, 8);
    let config = GpConfig {
        population: 200,
        generations: 5,
        ..GpConfig::default()
    };
    let mut group = c.benchmark_group("gp");
    group.sample_size(10);
    group.bench_function("discover/200x5", |b| {
        b.iter(|| gp_discover(black_box(&records), TargetKind::RelDegradation, &config).unwrap())
    });
    group.finish();
}

criterion_group!(benches, formulas, discovery);
criterion_main!(benches);
