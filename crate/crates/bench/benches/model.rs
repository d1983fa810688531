use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use kglm_bench::fixture;
use kglm_core::model::{build_mask, forward, grad, Dropout, MaskMode};

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    for d in [32, 64, 128] {
        let fx = fixture(d);
        let f = &fx.facts[0];
        let mask = build_mask(f, MaskMode::StrictPrefix);
        group.bench_with_input(BenchmarkId::new("forward", d), &d, |b, _| {
            b.iter(|| forward(black_box(&fx.params), &f.ids, &mask, Dropout::Off).unwrap())
        });
        let batch = &fx.facts[..8];
        group.bench_with_input(BenchmarkId::new("grad_batch8", d), &d, |b, _| {
            b.iter(|| grad(black_box(&fx.params), batch, MaskMode::StrictPrefix, Some(1)).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = forward_backward
}
criterion_main!(benches);
