use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pairdisc_bench::{random_matrix, random_vector};
use pairdisc_core::tensor::linalg::{matvec, softmax};
use std::hint::black_box;

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [32, 64, 128] {
        let a = random_matrix(n, n, 1);
        let b = random_matrix(n, n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn gate_matvec(c: &mut Criterion) {
    // Stacked LSTM gates: 4d rows over a d-vector.
    let d = 128;
    let w = random_matrix(4 * d, d, 3);
    let x = random_vector(d, 4);
    let mut out = vec![0.0; 4 * d];
    c.bench_function("matvec 512x128", |b| {
        b.iter(|| matvec(black_box(w.data()), black_box(&x), &mut out))
    });
}

fn vocab_softmax(c: &mut Criterion) {
    let logits = random_vector(10_000, 5);
    c.bench_function("softmax 10k", |b| b.iter(|| softmax(black_box(&logits))));
}

criterion_group!(benches, matmul, gate_matvec, vocab_softmax);
criterion_main!(benches);
