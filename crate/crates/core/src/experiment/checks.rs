//! Self-contained invariant checks shared by the `check` command and the
//! acceptance tests.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{
    generate_synthetic_corpus, group_by_task, Instance, Span, SyntheticSpec, TaskId,
};
use crate::error::Result;
use crate::metrics::{bleu_n, forgetting_metric, log_perplexity, CheckpointRecord, Scores};
use crate::model::{batch_loss, loss_and_grad, EncoderConfig, Gradients, ModelState};
use crate::replay::{reservoir_update, ReplayMemory};
use crate::stream::{build_stream, propose_schedule, OrderPolicy};
use crate::trainers::agem_project;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Random gradient pairs: projected gradients never point against the
/// reference, and non-conflicting gradients pass through bitwise.
pub fn agem_identities(pairs: usize, dim: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut untouched_ok = true;
    let mut conflicts = 0;
    for _ in 0..pairs {
        let mut draw = || Gradients {
            tensors: vec![(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()],
        };
        let (g, r) = (draw(), draw());
        let p = agem_project(&g, &r);
        let dot = g.dot(&r);
        if dot >= 0.0 {
            untouched_ok &= p == g;
        } else {
            conflicts += 1;
        }
        worst = worst.min(p.dot(&r));
    }
    CheckOutcome::new(
        "agem projection identities",
        worst >= -1e-9 && untouched_ok,
        format!("{pairs} pairs, {conflicts} projected, min <g',g_ref> = {worst:e}, pass-through bitwise: {untouched_ok}"),
    )
}

/// Retention frequency of every stream position against the binomial
/// three-sigma band around M/N.
pub fn reservoir_uniformity(
    capacity: usize,
    stream_len: usize,
    trials: usize,
    seed: u64,
) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items: Vec<Instance> = (0..stream_len).map(|i| tagged_instance(i as f32)).collect();
    let mut kept = vec![0usize; stream_len];
    for _ in 0..trials {
        let mut m = ReplayMemory::new(capacity);
        reservoir_update(&mut m, &items, &mut rng);
        for inst in m.buffer() {
            kept[inst.image_feature[0] as usize] += 1;
        }
    }
    let p = capacity as f64 / stream_len as f64;
    let bound = 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
    let worst = kept
        .iter()
        .map(|&k| (k as f64 / trials as f64 - p).abs())
        .fold(0.0, f64::max);
    CheckOutcome::new(
        "reservoir uniformity",
        worst <= bound,
        format!("M={capacity}, N={stream_len}, {trials} trials: max |freq - {p}| = {worst:.5} (bound {bound:.5})"),
    )
}

fn tagged_instance(tag: f32) -> Instance {
    Instance::new(
        vec![tag],
        vec![],
        vec![3],
        vec!["NN".into()],
        Span::new(0, 1),
        TaskId::new("t"),
    )
    .expect("valid fixture")
}

/// The small gradient-check configuration.
pub fn small_encoder_config() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 11,
        hidden: 8,
        layers: 1,
        heads: 2,
        ffn: 12,
        visual_dim: 4,
        max_objects: 3,
        max_text_len: 6,
        init_std: 0.4,
        seed: 5,
        ..Default::default()
    }
}

/// A random instance with `n_tok` tokens and the given masked span.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    cfg: &EncoderConfig,
    n_tok: usize,
    span: (usize, usize),
) -> Instance {
    let feat = |rng: &mut ChaCha8Rng| {
        (0..cfg.visual_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect()
    };
    let tokens: Vec<u32> = (0..n_tok)
        .map(|_| rng.random_range(3..cfg.vocab_size as u32))
        .collect();
    let pos = (0..n_tok)
        .map(|j| {
            if j == span.1 - 1 {
                "NN".to_string()
            } else {
                "JJ".to_string()
            }
        })
        .collect();
    Instance::new(
        feat(rng),
        vec![feat(rng), feat(rng)],
        tokens,
        pos,
        Span::new(span.0, span.1),
        TaskId::new("t"),
    )
    .expect("valid fixture")
}

/// Perturbs every parameter so checks run away from the structured init.
pub fn randomize_params(state: &mut ModelState, rng: &mut ChaCha8Rng) {
    for t in &mut state.params.tensors {
        for v in &mut t.data {
            *v += rng.random_range(-0.3f32..0.3);
        }
    }
}

/// Largest relative error between analytic and central-difference
/// gradients, with the parameter where it occurs.
pub fn max_gradient_error(state: &ModelState, batch: &[Instance]) -> Result<(f64, String)> {
    let analytic = loss_and_grad(state, batch, false)?.grads;
    let mut worst = (0.0f64, String::new());
    let mut probe = state.clone();
    for (ti, tensor) in state.params.tensors.iter().enumerate() {
        for k in 0..tensor.data.len() {
            let orig = tensor.data[k];
            let (plus, minus) = (orig + 1e-4, orig - 1e-4);
            probe.params.tensors[ti].data[k] = plus;
            let lp = batch_loss(&probe, batch, false)?;
            probe.params.tensors[ti].data[k] = minus;
            let lm = batch_loss(&probe, batch, false)?;
            probe.params.tensors[ti].data[k] = orig;
            let numeric = (lp - lm) / (plus as f64 - minus as f64);
            let a = analytic.tensors[ti][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{}[{k}]", tensor.name));
            }
        }
    }
    Ok(worst)
}

pub fn gradient_check(seed: u64) -> Result<CheckOutcome> {
    let cfg = small_encoder_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = ModelState::new(cfg.clone())?;
    randomize_params(&mut state, &mut rng);
    let batch = vec![random_instance(&mut rng, &cfg, 5, (1, 3))];
    let (worst, at) = max_gradient_error(&state, &batch)?;
    Ok(CheckOutcome::new(
        "gradient correctness",
        worst < 1e-4,
        format!("max relative error {worst:.3e} at {at}"),
    ))
}

pub fn metric_fixtures() -> CheckOutcome {
    let v = 100usize;
    let uniform = vec![vec![1.0 / v as f64; v]; 4];
    let ppl = log_perplexity(&uniform, &[0, 7, 42, 99]);
    let two = log_perplexity(&[vec![0.5, 0.5], vec![0.25, 0.75]], &[0, 0]);
    let bleu_id = bleu_n(&[4, 5, 6], &[4, 5, 6], 2);
    let bleu_long = bleu_n(&[1, 2, 3], &[1, 3], 1);
    let rec = |step, v: f64| CheckpointRecord {
        step,
        per_task: BTreeMap::from([(
            TaskId::new("a"),
            Scores {
                log_ppl: v,
                bleu1: 0.0,
                bleu2: 0.0,
            },
        )]),
        overall: Scores {
            log_ppl: v,
            bleu1: 0.0,
            bleu2: 0.0,
        },
    };
    let windows = BTreeMap::from([(TaskId::new("a"), 2)]);
    let f = forgetting_metric(&[rec(1, 5.0), rec(2, 3.0)], &windows, &rec(3, 4.0))
        .map(|r| r.f_avg)
        .unwrap_or(f64::NAN);
    let passed = (ppl - (v as f64).ln()).abs() < 1e-9
        && bleu_id == 1.0
        && (two - 1.0397).abs() < 1e-4
        && (bleu_long - 2.0 / 3.0).abs() < 1e-4
        && (f - 1.0).abs() < 1e-4;
    CheckOutcome::new(
        "metric exactness",
        passed,
        format!(
            "uniform log-PPL {ppl:.12} vs ln {v}; two-token {two:.5}; BLEU identity {bleu_id}; BLEU-1 long {bleu_long:.5}; forgetting {f:.5}"
        ),
    )
}

/// Conservation, per-task mean slot against mu, and mixed 10-slot windows
/// between overlapping neighbours, on the default synthetic stream.
pub fn stream_fidelity(seeds: &[u64]) -> Result<CheckOutcome> {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::default(), 0)?;
    let pools = group_by_task(&corpus.train);
    let key = |i: &Instance| format!("{:?}", (i.task_id.as_str(), &i.tokens, &i.object_features));
    let mut expected: Vec<String> = pools.values().flatten().map(key).collect();
    expected.sort();
    let mut conserved = true;
    let mut worst_ratio = 0.0f64;
    let mut overlap_ok = true;
    for &seed in seeds {
        let schedule = propose_schedule(&pools, OrderPolicy::Random { seed })?;
        let stream = build_stream(&schedule, &pools, seed, 32)?;
        let mut got: Vec<String> = stream.instances.iter().map(key).collect();
        got.sort();
        conserved &= got == expected;
        let mut positions: BTreeMap<&TaskId, Vec<usize>> = BTreeMap::new();
        for (p, inst) in stream.instances.iter().enumerate() {
            positions.entry(&inst.task_id).or_default().push(p);
        }
        for (i, task) in schedule.order.iter().enumerate() {
            let pos = &positions[task];
            let mean = pos.iter().sum::<usize>() as f64 / pos.len() as f64;
            let tol = f64::max(2.0, 0.1 * schedule.sigma[i]);
            worst_ratio = worst_ratio.max((mean - schedule.mu[i]).abs() / tol);
        }
        let tasks: Vec<&TaskId> = stream.instances.iter().map(|i| &i.task_id).collect();
        for i in 0..schedule.len().saturating_sub(1) {
            let overlaps = schedule.mu[i] + 2.0 * schedule.sigma[i]
                > schedule.mu[i + 1] - 2.0 * schedule.sigma[i + 1];
            if overlaps {
                let (a, b) = (&schedule.order[i], &schedule.order[i + 1]);
                overlap_ok &= tasks.windows(10).any(|w| w.contains(&a) && w.contains(&b));
            }
        }
    }
    Ok(CheckOutcome::new(
        "stream fidelity",
        conserved && worst_ratio <= 1.0 && overlap_ok,
        format!(
            "conserved: {conserved}; worst |mean - mu| / tolerance = {worst_ratio:.3}; overlap windows: {overlap_ok}"
        ),
    ))
}

/// The fast invariant suite.
pub fn run_all() -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        agem_identities(10_000, 64, 0),
        reservoir_uniformity(10, 100, 50_000, 0),
        gradient_check(17)?,
        metric_fixtures(),
        stream_fidelity(&[0, 1, 2])?,
    ])
}
