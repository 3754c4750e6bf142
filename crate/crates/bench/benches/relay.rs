use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use relay_scope::dataset::PIXELS;
use relay_scope::discretize::kmeans2;
use relay_scope::search::{greedy_ssa_with, DEFAULT_TIE_TOLERANCE};
use relay_scope::synth::{generate, random_channel};
use relay_scope::{DenseNet, KnockoutMask, NodeSet, RelayKernel};

fn relay_evaluation(c: &mut Criterion) {
    let spec = random_channel(20, 1, false, false).unwrap();
    let trace = generate(&spec, 10_000, 1).unwrap();
    let kernel = RelayKernel::new(&trace, 0).unwrap();
    let set = NodeSet::from_nodes([0, 3, 5, 8, 13, 19]);
    c.bench_function("relay_fast_20x10k", |b| {
        b.iter(|| kernel.relay_information_fast(black_box(set)).unwrap())
    });
    c.bench_function("relay_coinfo_20x10k", |b| {
        b.iter(|| kernel.relay_information(black_box(set)).unwrap())
    });
    c.bench_function("kernel_build_20x10k", |b| {
        b.iter(|| RelayKernel::new(black_box(&trace), 0).unwrap())
    });
}

fn greedy(c: &mut Criterion) {
    let spec = random_channel(20, 2, true, false).unwrap();
    let trace = generate(&spec, 10_000, 2).unwrap();
    let kernel = RelayKernel::new(&trace, 0).unwrap();
    let mut group = c.benchmark_group("greedy");
    group.sample_size(10);
    group.bench_function("greedy_20x10k", |b| {
        b.iter(|| greedy_ssa_with(&kernel, DEFAULT_TIE_TOLERANCE).unwrap())
    });
    group.finish();
}

fn discretize(c: &mut Criterion) {
    let values: Vec<f64> = (0..10_000)
        .map(|i| ((i * 7919) % 10_007) as f64 / 5003.5 - 1.0)
        .collect();
    c.bench_function("kmeans2_10k", |b| b.iter(|| kmeans2(black_box(&values)).unwrap()));
}

fn forward(c: &mut Criterion) {
    let net = DenseNet::random(PIXELS, 20, 10, 0);
    let x: Vec<f64> = (0..PIXELS).map(|i| (i % 17) as f64 / 8.0 - 1.0).collect();
    c.bench_function("forward_784_20_10", |b| {
        b.iter(|| net.forward(black_box(&x), KnockoutMask::NONE).unwrap())
    });
}

criterion_group!(benches, relay_evaluation, greedy, discretize, forward);
criterion_main!(benches);
