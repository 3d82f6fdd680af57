use std::collections::BTreeSet;
use std::hint::black_box;

use carve_bench::fixture;
use carve_core::{carve, CarveConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn pipeline(c: &mut Criterion) {
    let (model, seq) = fixture(64);
    let mut group = c.benchmark_group("prefill");
    group.bench_function("plain", |b| {
        b.iter(|| model.prefill(black_box(&seq), &BTreeSet::new()).unwrap())
    });
    for (target, rho) in [(64, 0.0), (32, 0.0), (16, 0.0), (16, 0.5), (8, 0.5)] {
        let cfg = CarveConfig {
            target_count: target,
            merge_proportion: rho,
            ..CarveConfig::default()
        };
        group.bench_with_input(
            BenchmarkId::new("carve", format!("{target}-rho{rho}")),
            &cfg,
            |b, cfg| b.iter(|| carve(black_box(&seq), &model, cfg).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
