use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rankcast_bench::{calibration, decayed_matrix};
use rankcast_core::compress::{asvd_compress, svd_truncate, svdllm_refine};

fn compressors(c: &mut Criterion) {
    let w = decayed_matrix(256, 256, 4);
    let x = calibration(512, 256, 5);
    let k = 64;
    let mut group = c.benchmark_group("compress_256");
    group.sample_size(20);
    group.bench_function("svd_truncate", |b| b.iter(|| svd_truncate(black_box(&w), k).unwrap()));
    group.bench_function("asvd", |b| b.iter(|| asvd_compress(black_box(&w), &x, k, 0.5).unwrap()));
    group.bench_function("svdllm", |b| {
        b.iter(|| svdllm_refine(black_box(&w), &x, k, false, 1e-8).unwrap())
    });
    group.bench_function("svdllm_whiten", |b| {
        b.iter(|| svdllm_refine(black_box(&w), &x, k, true, 1e-8).unwrap())
    });
    group.finish();
}

criterion_group!(benches, compressors);
criterion_main!(benches);
