use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use drift_core::corpus::{generate_synthetic_corpus, group_by_task, SyntheticSpec};
use drift_core::model::{loss_and_grad, optimizer_step, EncoderConfig, ModelState};
use drift_core::replay::{
    balanced_update, reservoir_update, BalancePolicy, ForgettingTracker, ReplayMemory,
};
use drift_core::stream::{build_stream, propose_schedule, OrderPolicy};

fn model_step(c: &mut Criterion) {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default(), 0).unwrap();
    let cfg = EncoderConfig {
        vocab_size: corpus.vocab.len(),
        lr: 1e-3,
        ..EncoderConfig::default()
    };
    let state = ModelState::new(cfg).unwrap();
    let batch = &corpus.train[..32];
    c.bench_function("loss_and_grad/batch32", |b| {
        b.iter(|| loss_and_grad(&state, black_box(batch), false).unwrap())
    });
    let grads = loss_and_grad(&state, batch, false).unwrap().grads;
    c.bench_function("optimizer_step", |b| {
        b.iter_batched(
            || state.clone(),
            |mut s| optimizer_step(&mut s, &grads).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn stream_build(c: &mut Criterion) {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default(), 0).unwrap();
    let pools = group_by_task(&corpus.train);
    let schedule = propose_schedule(&pools, OrderPolicy::Random { seed: 0 }).unwrap();
    c.bench_function("build_stream/10k", |b| {
        b.iter(|| build_stream(&schedule, &pools, black_box(1), 32).unwrap())
    });
}

fn memory_writes(c: &mut Criterion) {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default(), 0).unwrap();
    let warm = &corpus.train[..1000];
    let incoming = &corpus.train[1000..1032];
    let mut full = ReplayMemory::new(1000);
    reservoir_update(&mut full, warm, &mut ChaCha8Rng::seed_from_u64(0));
    c.bench_function("reservoir_update/batch32", |b| {
        b.iter_batched(
            || (full.clone(), ChaCha8Rng::seed_from_u64(1)),
            |(mut m, mut rng)| reservoir_update(&mut m, incoming, &mut rng),
            BatchSize::LargeInput,
        )
    });
    let tracker = ForgettingTracker::default();
    c.bench_function("balanced_update/M1000", |b| {
        b.iter_batched(
            || full.clone(),
            |mut m| balanced_update(&mut m, &incoming[0], BalancePolicy::Sqrt, &tracker),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, model_step, stream_build, memory_writes);
criterion_main!(benches);
