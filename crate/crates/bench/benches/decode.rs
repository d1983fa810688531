use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use kglm_bench::fixture;
use kglm_core::decode::{beam_predict, build_trie, exhaustive_score, LmModel};
use kglm_core::linearize::Predicate;
use kglm_core::model::MaskMode;

fn decoding(c: &mut Criterion) {
    let fx = fixture(64);
    let lm = LmModel::new(&fx.params, &fx.tok, MaskMode::StrictPrefix);
    let trie = build_trie(&fx.entities, &fx.tok).unwrap();
    let t = &fx.triples[0];
    let pred = Predicate::Relation(t.relation.clone());

    let mut group = c.benchmark_group("decode");
    group.bench_function("build_trie", |b| b.iter(|| build_trie(black_box(&fx.entities), &fx.tok).unwrap()));
    for k in [1, 10, 50] {
        group.bench_with_input(BenchmarkId::new("beam", k), &k, |b, &k| {
            b.iter(|| beam_predict(&lm, black_box(&t.subject), &pred, &trie, k).unwrap())
        });
    }
    group.bench_function("exhaustive", |b| {
        b.iter(|| exhaustive_score(&lm, black_box(&t.subject), &pred, &fx.entities).unwrap())
    });
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = decoding
}
criterion_main!(benches);
