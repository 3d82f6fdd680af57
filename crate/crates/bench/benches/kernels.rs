use std::collections::BTreeSet;
use std::hint::black_box;

use carve_bench::fixture;
use carve_core::attention::extract_visual_slice;
use carve_core::ipgs::information_contribution;
use carve_core::linalg::{
    matmul, scaled_left_singular_vectors, softmax_rows, svd, DEFAULT_RANK_REL_TOL,
};
use carve_core::Tensor;
use criterion::{criterion_group, criterion_main, Criterion};

/// Carve-layer visual slice of the default fixture.
fn carve_layer_z() -> Tensor {
    let (model, seq) = fixture(64);
    let (_, arts) = model.run_layers(&seq, 1..=2, &BTreeSet::from([2])).unwrap();
    extract_visual_slice(&arts[&2].output, &seq).unwrap()
}

fn kernels(c: &mut Criterion) {
    let z = carve_layer_z();
    let (_, seq) = fixture(64);
    let x = seq.embeddings();
    let w = Tensor::identity(x.cols());

    c.bench_function("matmul 76x64 * 64x64", |b| {
        b.iter(|| matmul(black_box(x), black_box(&w)).unwrap())
    });
    let scores = matmul(x, &x.transpose().unwrap()).unwrap();
    c.bench_function("softmax_rows 76x76", |b| {
        b.iter(|| softmax_rows(black_box(&scores)))
    });
    c.bench_function("svd jacobi 64x64", |b| {
        b.iter(|| svd(black_box(&z)).unwrap())
    });
    c.bench_function("scaled left vectors 64x64", |b| {
        b.iter(|| scaled_left_singular_vectors(black_box(&z)).unwrap())
    });
    c.bench_function("ics 64x64", |b| {
        b.iter(|| information_contribution(black_box(&z), DEFAULT_RANK_REL_TOL).unwrap())
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
