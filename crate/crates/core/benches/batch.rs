//! Sequential vs rayon-parallel throughput of the batch-level hot paths.
//! Build with `--no-default-features` to compile rayon out entirely.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sdn_core::augment::{augment_samples, AugmentStageConfig, FaceLayout, Stage};
use sdn_core::dataset::ImageCache;
use sdn_core::eval::predict;
use sdn_core::model::{backward, build_network, forward, NetworkSpec};
use sdn_core::train::TrainSet;
use sdn_core::{par, synthetic};

const MODES: [(&str, bool); 2] = [("sequential", false), ("parallel", true)];

fn network(c: &mut Criterion) {
    let ws = build_network(&NetworkSpec::with_landmarks(synthetic::N_LANDMARKS)).unwrap();
    let data = TrainSet::new(synthetic::faces(16, 64, 1), 64);
    let (x, y) = data.assemble(&(0..16).collect::<Vec<_>>()).unwrap();
    let mut group = c.benchmark_group("batch16");
    group.sample_size(10);
    for (name, parallel) in MODES {
        par::set_parallel(parallel);
        group.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| forward(&ws, black_box(&x)).unwrap())
        });
        group.bench_function(BenchmarkId::new("backward", name), |b| {
            b.iter(|| backward(&ws, black_box(&x), &y).unwrap())
        });
    }
    group.finish();
}

fn augmentation(c: &mut Criterion) {
    let sources = synthetic::faces(64, 64, 2);
    let layout = FaceLayout {
        left_eye: synthetic::LEFT_EYE,
        right_eye: synthetic::RIGHT_EYE,
        mirror_perm: &synthetic::MIRROR_PERM,
    };
    let cfg = AugmentStageConfig::defaults(Stage::S2);
    let mut group = c.benchmark_group("augment64");
    for (name, parallel) in MODES {
        par::set_parallel(parallel);
        group.bench_function(name, |b| {
            b.iter(|| augment_samples(black_box(&sources), layout, &cfg).unwrap())
        });
    }
    group.finish();
}

fn prediction(c: &mut Criterion) {
    let ws = build_network(&NetworkSpec::with_landmarks(synthetic::N_LANDMARKS)).unwrap();
    let samples = synthetic::faces(32, 64, 3);
    let cache = ImageCache::new();
    let mut group = c.benchmark_group("predict32");
    group.sample_size(10);
    for (name, parallel) in MODES {
        par::set_parallel(parallel);
        group.bench_function(name, |b| {
            b.iter(|| predict(&ws, black_box(&samples), &cache).unwrap())
        });
    }
    group.finish();
    par::set_parallel(true);
}

criterion_group!(benches, network, augmentation, prediction);
criterion_main!(benches);
