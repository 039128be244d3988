//! Hot kernels: batched nearest-centroid search, K-means fitting, one LSTM
//! probe gradient step, and residual vector quantisation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use tonequant_bench::{clustered_f32, random_f32, random_f64};
use tonequant_core::codec::{rvq_quantise, rvq_quantise_batch};
use tonequant_core::kmeans::{self, Codebook, KMeansConfig};
use tonequant_core::probe::{RecurrentProbeParams, SequenceBatch};

fn assign_batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("assign_batch");
    let data = random_f32(1, 4096, 64);
    group.throughput(Throughput::Elements(data.nrows() as u64));
    for k in [50, 500, 1000] {
        let cb = Codebook::from_centroids(random_f32(2, k, 64), 1).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(k), &cb, |b, cb| {
            b.iter(|| cb.assign_batch(black_box(data.view())).unwrap())
        });
    }
    group.finish();
}

fn kmeans_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans_fit");
    group.sample_size(10);
    let data = clustered_f32(3, 5000, 64, 50);
    for k in [50, 200] {
        let config = KMeansConfig::new(k).with_seed(7).with_max_iters(20);
        group.bench_with_input(BenchmarkId::from_parameter(k), &config, |b, config| {
            b.iter(|| kmeans::fit(black_box(data.view()), config).unwrap())
        });
    }
    group.finish();
}

fn lstm_step(c: &mut Criterion) {
    let (batch, len, dim, hidden) = (64, 8, 64, 128);
    let seqs: Vec<_> = (0..batch).map(|i| random_f64(10 + i as u64, len - i % 4, dim)).collect();
    let refs: Vec<_> = seqs.iter().collect();
    let sb = SequenceBatch::from_sequences(&refs).unwrap();
    let params = RecurrentProbeParams::init(dim, hidden, 50, 4, 1);
    let phone: Vec<usize> = (0..batch).map(|i| i % 50).collect();
    let tone: Vec<usize> = (0..batch).map(|i| i % 4).collect();
    let w = vec![1.0; batch];
    c.bench_function("lstm_loss_and_grad_b64_t8_h128", |b| {
        b.iter(|| params.loss_and_grad(black_box(&sb), &phone, &w, &tone, &w, None))
    });
}

fn rvq(c: &mut Criterion) {
    let codebooks: Vec<_> = (0..4).map(|l| random_f32(20 + l, 125, 64)).collect();
    let z = random_f32(30, 1024, 64);
    c.bench_function("rvq_quantise_single_125x4", |b| {
        b.iter(|| rvq_quantise(black_box(z.row(0)), &codebooks).unwrap())
    });
    let mut group = c.benchmark_group("rvq_quantise_batch");
    group.throughput(Throughput::Elements(z.nrows() as u64));
    group.bench_function("125x4", |b| b.iter(|| rvq_quantise_batch(black_box(z.view()), &codebooks).unwrap()));
    group.finish();
}

criterion_group!(benches, assign_batch, kmeans_fit, lstm_step, rvq);
criterion_main!(benches);
