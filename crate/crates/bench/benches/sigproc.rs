use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, Criterion};
use seegnet::sigproc::{bandpass_hg, bh_fdr, bootstrap_test, hilbert_envelope};
use seegnet_bench::noise_epochs;

fn filters(c: &mut Criterion) {
    let fs = 1024.0;
    let x: Vec<f64> = (0..60 * 1024)
        .map(|i| (2.0 * PI * 110.0 * i as f64 / fs).sin())
        .collect();
    c.bench_function("bandpass_hg_60s", |b| {
        b.iter(|| bandpass_hg(std::hint::black_box(&x), fs).unwrap())
    });
    c.bench_function("hilbert_envelope_60s", |b| {
        b.iter(|| hilbert_envelope(std::hint::black_box(&x)))
    });
}

fn selection(c: &mut Criterion) {
    let epochs = noise_epochs(100, 4, 128.0, 1);
    let mut group = c.benchmark_group("bootstrap");
    group.sample_size(10);
    group.bench_function("4_electrodes_1000_iter", |b| {
        b.iter(|| bootstrap_test(&epochs, 1000, 0).unwrap())
    });
    group.finish();
    let p: Vec<f64> = (0..5000).map(|i| ((i * 7919) % 5000) as f64 / 5000.0).collect();
    c.bench_function("bh_fdr_5000", |b| {
        b.iter(|| bh_fdr(std::hint::black_box(&p), 0.05).unwrap())
    });
}

criterion_group!(benches, filters, selection);
criterion_main!(benches);
