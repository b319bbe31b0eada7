use criterion::{criterion_group, criterion_main, Criterion};
use pairdisc_bench::shifted_sentences;
use pairdisc_core::metrics::{bleu, corpus_ter, meteor, Smoothing};
use std::hint::black_box;

fn metrics(c: &mut Criterion) {
    let pairs = shifted_sentences(200, 7);
    let hyps: Vec<Vec<String>> = pairs.iter().map(|(h, _)| h.clone()).collect();
    let refs: Vec<Vec<String>> = pairs.iter().map(|(_, r)| r.clone()).collect();
    let mut group = c.benchmark_group("corpus metrics, 200 sentences");
    group.bench_function("ter", |b| {
        b.iter(|| corpus_ter(black_box(&hyps), black_box(&refs)).unwrap())
    });
    group.bench_function("bleu4", |b| {
        b.iter(|| bleu(black_box(&hyps), black_box(&refs), 4, Smoothing::None).unwrap())
    });
    group.bench_function("meteor", |b| {
        b.iter(|| meteor(black_box(&hyps), black_box(&refs)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, metrics);
criterion_main!(benches);
