//! Kernel and forward-pass timings on a single-thread pool and on the
//! default rayon pool. Built without the `parallel` feature, both arms run
//! the sequential path.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use effhrnet::graph::WeightStore;
use effhrnet::kernels::{conv2d, conv2d_transposed, maxpool_window};
use effhrnet::network::build_network;
use effhrnet::scaling::config_for_phi;
use effhrnet::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("1-thread", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("default", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::random_uniform([1, 64, 64, 64], &mut rng, -1.0, 1.0);
    let w3 = Tensor::random_uniform([64, 64, 3, 3], &mut rng, -0.1, 0.1);
    let dw = Tensor::random_uniform([64, 1, 5, 5], &mut rng, -0.1, 0.1);
    let wt = Tensor::random_uniform([64, 32, 4, 4], &mut rng, -0.1, 0.1);

    let mut g = c.benchmark_group("kernels");
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("conv3x3_64x64x64", name), |b| {
            pool.install(|| b.iter(|| conv2d(black_box(&x), &w3, None, 1, 1, 1).unwrap()))
        });
        g.bench_function(BenchmarkId::new("depthwise5x5_s2", name), |b| {
            pool.install(|| b.iter(|| conv2d(black_box(&x), &dw, None, 2, 2, 64).unwrap()))
        });
        g.bench_function(BenchmarkId::new("deconv4x4_s2", name), |b| {
            pool.install(|| b.iter(|| conv2d_transposed(black_box(&x), &wt, 2, 1).unwrap()))
        });
        g.bench_function(BenchmarkId::new("maxpool5", name), |b| {
            pool.install(|| b.iter(|| maxpool_window(black_box(&x), 5).unwrap()))
        });
    }
    g.finish();
}

fn forward(c: &mut Criterion) {
    let cfg = config_for_phi(-4).unwrap().with_resolution(128).unwrap();
    let spec = build_network(&cfg).unwrap();
    let weights = WeightStore::seeded(1);
    let img = Tensor::random_uniform([1, 3, 128, 128], &mut ChaCha8Rng::seed_from_u64(1), 0.0, 1.0);
    let mut g = c.benchmark_group("forward_h-4_128");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(name, |b| pool.install(|| b.iter(|| spec.forward(black_box(&img), &weights).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, kernels, forward);
criterion_main!(benches);
