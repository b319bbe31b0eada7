use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pairdisc_bench::synthetic_trainer;
use pairdisc_core::Variant;

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for variant in [Variant::EdLocal, Variant::EddLgShared, Variant::EddLg] {
        let (trainer, pairs) = synthetic_trainer(variant, 32, 64, 16);
        group.bench_function(variant.name(), |b| {
            b.iter_batched(
                || trainer.clone(),
                |mut t| {
                    let batch: Vec<_> = pairs.iter().collect();
                    t.train_step(&batch).unwrap()
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn greedy_generation(c: &mut Criterion) {
    let (trainer, pairs) = synthetic_trainer(Variant::EdLocal, 32, 64, 16);
    c.bench_function("generate 16 sentences", |b| {
        b.iter(|| {
            for p in &pairs {
                trainer.model.generate(&trainer.store, &p.source).unwrap();
            }
        })
    });
}

criterion_group!(benches, train_step, greedy_generation);
criterion_main!(benches);
