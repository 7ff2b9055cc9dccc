use std::collections::BTreeMap;

use drift_core::corpus::{
    generate_synthetic_corpus, group_by_task, Instance, SyntheticSpec, TaskId,
};
use drift_core::metrics::{evaluate_checkpoint, CheckpointRecord, Scores};
use drift_core::model::{loss_and_grad, EncoderConfig, ModelState};
use drift_core::replay::{MirVariant, ReplayMemory};
use drift_core::stream::{build_stream, propose_schedule, OrderPolicy, Stream};
use drift_core::trainers::{
    run_agem, run_er, run_er_mir, run_method, run_offline, run_vanilla, Method, RunOutput,
    TrainerConfig, WritePolicy,
};

struct Fixture {
    stream: Stream,
    test: BTreeMap<TaskId, Vec<Instance>>,
    vocab_size: usize,
}

fn fixture(per_comp: usize, batch: usize) -> Fixture {
    let spec = SyntheticSpec {
        nouns: ["dog", "cat", "bus", "boat"].map(String::from).to_vec(),
        train_per_composition: per_comp,
        test_per_composition: 1,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec, 0).unwrap();
    let pools = group_by_task(&corpus.train);
    let schedule = propose_schedule(&pools, OrderPolicy::Random { seed: 0 }).unwrap();
    Fixture {
        stream: build_stream(&schedule, &pools, 0, batch).unwrap(),
        test: group_by_task(&corpus.test),
        vocab_size: corpus.vocab.len(),
    }
}

fn model(f: &Fixture) -> ModelState {
    ModelState::new(EncoderConfig {
        vocab_size: f.vocab_size,
        hidden: 16,
        layers: 1,
        heads: 2,
        ffn: 32,
        lr: 1e-3,
        ..EncoderConfig::default()
    })
    .unwrap()
}

fn dummy_eval(state: &ModelState, step: usize) -> drift_core::Result<CheckpointRecord> {
    let _ = state;
    let s = Scores {
        log_ppl: 0.0,
        bleu1: 0.0,
        bleu2: 0.0,
    };
    Ok(CheckpointRecord {
        step,
        per_task: BTreeMap::new(),
        overall: s,
    })
}

fn truncated(stream: &Stream, batches: usize) -> Stream {
    Stream {
        instances: stream.instances[..(batches * stream.batch_size).min(stream.len())].to_vec(),
        batch_size: stream.batch_size,
    }
}

#[test]
fn checkpoints_every_interval_plus_final() {
    let f = fixture(3, 8);
    let s = truncated(&f.stream, 10);
    assert_eq!(s.num_batches(), 10);
    let cfg = TrainerConfig {
        method: Method::Vanilla,
        eval_interval: 5,
        ..TrainerConfig::default()
    };
    let out = run_vanilla(&cfg, &s, model(&f), &mut dummy_eval).unwrap();
    let steps: Vec<usize> = out.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![5, 10]);
    assert_eq!(out.final_record.step, 10);
}

#[test]
fn empty_stream_returns_the_untrained_model() {
    let f = fixture(1, 8);
    let s = truncated(&f.stream, 0);
    let cfg = TrainerConfig {
        method: Method::Vanilla,
        ..TrainerConfig::default()
    };
    let init = model(&f);
    let out = run_vanilla(&cfg, &s, init.clone(), &mut dummy_eval).unwrap();
    assert_eq!(out.state.params, init.params);
    assert!(out.records.is_empty());
    assert_eq!(out.final_record.step, 0);
}

#[test]
fn first_batch_loss_is_near_ln_v() {
    let f = fixture(2, 8);
    let out = loss_and_grad(&model(&f), &f.stream.instances[..8], false).unwrap();
    assert!((out.loss - (f.vocab_size as f64).ln()).abs() < 0.1);
}

#[test]
fn er_first_step_matches_vanilla_bitwise() {
    let f = fixture(2, 8);
    let s = truncated(&f.stream, 1);
    let cfg = TrainerConfig {
        memory_capacity: 16,
        ..TrainerConfig::default()
    };
    let er = run_er(&cfg, &s, model(&f), ReplayMemory::new(16), &mut dummy_eval).unwrap();
    let agem_cfg = TrainerConfig {
        method: Method::Agem,
        agem_ref_size: 8,
        ..cfg.clone()
    };
    let agem = run_agem(
        &agem_cfg,
        &s,
        model(&f),
        ReplayMemory::new(16),
        &mut dummy_eval,
    )
    .unwrap();
    let van = run_vanilla(&cfg, &s, model(&f), &mut dummy_eval).unwrap();
    assert_eq!(er.state.params, van.state.params);
    assert_eq!(agem.state.params, van.state.params);
    assert_eq!(er.stats.replayed, 0);
}

#[test]
fn memory_holds_min_of_capacity_and_stream() {
    let f = fixture(2, 8);
    for cap in [8usize, 1000] {
        let cfg = TrainerConfig {
            memory_capacity: cap,
            ..TrainerConfig::default()
        };
        let out = run_er(
            &cfg,
            &f.stream,
            model(&f),
            ReplayMemory::new(cap),
            &mut dummy_eval,
        )
        .unwrap();
        let m = out.memory.unwrap();
        assert_eq!(m.len(), cap.min(f.stream.len()));
        assert_eq!(m.seen_count() as usize, f.stream.len());
        assert_eq!(out.stats.steps, f.stream.num_batches());
    }
}

#[test]
fn mir_with_candidates_equal_to_replay_size_is_er() {
    let f = fixture(2, 8);
    let s = truncated(&f.stream, 6);
    let cfg = TrainerConfig {
        memory_capacity: 16,
        mir_candidate_size: 8,
        ..TrainerConfig::default()
    };
    let er = run_er(&cfg, &s, model(&f), ReplayMemory::new(16), &mut dummy_eval).unwrap();
    let mir = run_er_mir(
        &cfg,
        &s,
        model(&f),
        ReplayMemory::new(16),
        MirVariant::Mean,
        &mut dummy_eval,
    )
    .unwrap();
    assert!(er.stats.replayed > 0);
    assert_eq!(er.state.params, mir.state.params);
}

#[test]
fn mir_selection_changes_training() {
    let f = fixture(2, 8);
    let s = truncated(&f.stream, 6);
    let cfg = TrainerConfig {
        memory_capacity: 40,
        mir_candidate_size: 24,
        ..TrainerConfig::default()
    };
    let er = run_er(&cfg, &s, model(&f), ReplayMemory::new(40), &mut dummy_eval).unwrap();
    let mean = run_er_mir(
        &cfg,
        &s,
        model(&f),
        ReplayMemory::new(40),
        MirVariant::Mean,
        &mut dummy_eval,
    )
    .unwrap();
    let max = run_er_mir(
        &cfg,
        &s,
        model(&f),
        ReplayMemory::new(40),
        MirVariant::Max,
        &mut dummy_eval,
    )
    .unwrap();
    assert_ne!(er.state.params, mean.state.params);
    assert_ne!(mean.state.params, max.state.params);
}

#[test]
fn agem_projects_once_memory_is_ready() {
    let f = fixture(3, 8);
    let cfg = TrainerConfig {
        method: Method::Agem,
        memory_capacity: 64,
        agem_ref_size: 16,
        ..TrainerConfig::default()
    };
    let out = run_agem(
        &cfg,
        &f.stream,
        model(&f),
        ReplayMemory::new(64),
        &mut dummy_eval,
    )
    .unwrap();
    assert_eq!(out.stats.replayed, 16 * (f.stream.num_batches() - 2));
    assert!(out.state.params.all_finite());
}

#[test]
fn offline_step_counts() {
    let f = fixture(8, 32);
    let data = &f.stream.instances[..320];
    let cfg = TrainerConfig {
        method: Method::Offline,
        epochs: 3,
        ..TrainerConfig::default()
    };
    let three = run_offline(&cfg, data, 32, model(&f), false, &mut dummy_eval).unwrap();
    assert_eq!(three.stats.steps, 30);
    let one = run_offline(&cfg, data, 32, model(&f), true, &mut dummy_eval).unwrap();
    assert_eq!(one.stats.steps, 10);
}

#[test]
fn balanced_writes_never_raise_kl() {
    let f = fixture(3, 8);
    for policy in [WritePolicy::BalancedSqrt, WritePolicy::BalancedForget] {
        let cfg = TrainerConfig {
            memory_capacity: 20,
            write_policy: policy,
            ..TrainerConfig::default()
        };
        let out = run_er(
            &cfg,
            &f.stream,
            model(&f),
            ReplayMemory::new(20),
            &mut dummy_eval,
        )
        .unwrap();
        assert_eq!(out.stats.balanced_calls, f.stream.len());
        assert_eq!(out.stats.kl_violations, 0);
        let m = out.memory.unwrap();
        assert_eq!(m.word_counts_memory(), &m.recount());
    }
}

fn evaluated(method: Method, zero_visual: bool) -> RunOutput {
    let f = fixture(2, 8);
    let cfg = TrainerConfig {
        method,
        memory_capacity: 32,
        agem_ref_size: 16,
        mir_candidate_size: 16,
        eval_interval: 4,
        zero_visual,
        seed: 5,
        ..TrainerConfig::default()
    };
    let test = f.test.clone();
    let mut eval = |s: &ModelState, step: usize| evaluate_checkpoint(s, &test, step, zero_visual);
    run_method(&cfg, &f.stream, model(&f), &mut eval).unwrap()
}

#[test]
fn identical_runs_give_identical_records() {
    for method in Method::ALL {
        let a = evaluated(method, false);
        let b = evaluated(method, false);
        assert_eq!(a.records, b.records, "{method}");
        assert_eq!(a.final_record, b.final_record, "{method}");
        assert_eq!(a.state.params, b.state.params, "{method}");
    }
}

#[test]
fn zero_visual_flag_reaches_the_model() {
    let a = evaluated(Method::Er, false);
    let b = evaluated(Method::Er, true);
    assert_ne!(a.state.params, b.state.params);
}
