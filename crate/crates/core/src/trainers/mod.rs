//! Training loops: online updates with optional replay, gradient
//! projection or interference-based retrieval, and offline comparators.

pub mod config;

pub use config::{Method, TrainerConfig, WritePolicy};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Instance;
use crate::error::{Error, Result};
use crate::metrics::CheckpointRecord;
use crate::model::{loss_and_grad, optimizer_step, Gradients, ModelState};
use crate::replay::{
    balanced_update, interference_deltas, mir_select_with, reservoir_update, sample_indices,
    BalancePolicy, BalancedOutcome, ForgettingTracker, MirVariant, ReplayMemory,
};
use crate::stream::Stream;

/// Scores a model snapshot after `step` optimizer updates.
pub type Evaluator<'a> = dyn FnMut(&ModelState, usize) -> Result<CheckpointRecord> + 'a;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    pub replayed: usize,
    pub projections: usize,
    pub balanced_calls: usize,
    pub kl_violations: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: ModelState,
    /// Periodic checkpoints, every `eval_interval` steps.
    pub records: Vec<CheckpointRecord>,
    pub final_record: CheckpointRecord,
    pub memory: Option<ReplayMemory>,
    pub stats: RunStats,
}

/// Returns `g` unless it conflicts with `g_ref`, in which case the
/// conflicting component is removed.
pub fn agem_project(g: &Gradients, g_ref: &Gradients) -> Gradients {
    let dot = g.dot(g_ref);
    if dot >= 0.0 {
        return g.clone();
    }
    let nr = g_ref.norm_sq();
    if nr == 0.0 {
        return g.clone();
    }
    let mut out = g.clone();
    out.axpy(-dot / nr, g_ref);
    out
}

enum Replay {
    None,
    Uniform,
    Mir(MirVariant),
    Agem,
}

struct Writer {
    policy: WritePolicy,
    tracker: ForgettingTracker,
}

impl Writer {
    fn write(
        &mut self,
        memory: &mut ReplayMemory,
        batch: &[Instance],
        rng: &mut ChaCha8Rng,
        stats: &mut RunStats,
    ) {
        let policy = match self.policy {
            WritePolicy::Reservoir => return reservoir_update(memory, batch, rng),
            WritePolicy::BalancedSqrt => BalancePolicy::Sqrt,
            WritePolicy::BalancedForget => BalancePolicy::Forget,
        };
        for inst in batch {
            let step = balanced_update(memory, inst, policy, &self.tracker);
            stats.balanced_calls += 1;
            if step.outcome != BalancedOutcome::Appended && step.kl_after > step.kl_before + 1e-12 {
                stats.kl_violations += 1;
            }
            debug_assert!(
                step.outcome == BalancedOutcome::Appended
                    || step.kl_after <= step.kl_before + 1e-12,
                "balanced write raised KL from {} to {}",
                step.kl_before,
                step.kl_after
            );
        }
    }
}

fn continual(
    cfg: &TrainerConfig,
    stream: &Stream,
    mut state: ModelState,
    mut memory: Option<ReplayMemory>,
    replay: Replay,
    eval: &mut Evaluator<'_>,
) -> Result<RunOutput> {
    cfg.validate(stream.batch_size)?;
    let zv = cfg.zero_visual;
    let k = cfg.replay_size(stream.batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut writer = Writer {
        policy: cfg.write_policy,
        tracker: ForgettingTracker::new(cfg.forget_decay)?,
    };
    let mut stats = RunStats::default();
    let mut records = Vec::new();

    for batch in stream.batches() {
        let mem = memory.as_ref().filter(|m| !m.is_empty());
        let picked: Vec<usize> = match (&replay, mem) {
            (Replay::Uniform, Some(m)) => sample_indices(m, k.min(m.len()), &mut rng)?,
            (Replay::Mir(variant), Some(m)) => {
                let st = &state;
                mir_select_with(m, cfg.mir_candidate_size, k, *variant, &mut rng, |c| {
                    interference_deltas(st, batch, c, zv)
                })?
            }
            _ => Vec::new(),
        };
        let out = if let (Replay::Agem, Some(m)) = (&replay, mem) {
            let mut out = loss_and_grad(&state, batch, zv)?;
            if m.len() >= cfg.agem_ref_size {
                let idx = sample_indices(m, cfg.agem_ref_size, &mut rng)?;
                let refs: Vec<&Instance> = idx.iter().map(|&i| &m.buffer()[i]).collect();
                let g_ref = loss_and_grad(&state, &refs, zv)?.grads;
                if out.grads.dot(&g_ref) < 0.0 {
                    stats.projections += 1;
                }
                out.grads = agem_project(&out.grads, &g_ref);
                stats.replayed += refs.len();
            }
            out
        } else {
            let mut sorted = picked;
            sorted.sort_unstable();
            let mut combined: Vec<&Instance> = batch.iter().collect();
            if let Some(m) = mem {
                combined.extend(sorted.iter().map(|&i| &m.buffer()[i]));
            }
            stats.replayed += combined.len() - batch.len();
            loss_and_grad(&state, &combined, zv)?
        };
        optimizer_step(&mut state, &out.grads)?;
        if let Some(m) = memory.as_mut() {
            if cfg.write_policy == WritePolicy::BalancedForget {
                writer
                    .tracker
                    .observe_losses(batch, &out.token_losses[..batch.len()]);
            }
            writer.write(m, batch, &mut rng, &mut stats);
        }
        stats.steps += 1;
        if stats.steps % cfg.eval_interval == 0 {
            records.push(eval(&state, stats.steps)?);
        }
    }
    let final_record = eval(&state, stats.steps)?;
    Ok(RunOutput {
        state,
        records,
        final_record,
        memory,
        stats,
    })
}

pub fn run_vanilla(
    cfg: &TrainerConfig,
    stream: &Stream,
    state: ModelState,
    eval: &mut Evaluator<'_>,
) -> Result<RunOutput> {
    continual(cfg, stream, state, None, Replay::None, eval)
}

pub fn run_er(
    cfg: &TrainerConfig,
    stream: &Stream,
    state: ModelState,
    memory: ReplayMemory,
    eval: &mut Evaluator<'_>,
) -> Result<RunOutput> {
    continual(cfg, stream, state, Some(memory), Replay::Uniform, eval)
}

pub fn run_agem(
    cfg: &TrainerConfig,
    stream: &Stream,
    state: ModelState,
    memory: ReplayMemory,
    eval: &mut Evaluator<'_>,
) -> Result<RunOutput> {
    continual(cfg, stream, state, Some(memory), Replay::Agem, eval)
}

pub fn run_er_mir(
    cfg: &TrainerConfig,
    stream: &Stream,
    state: ModelState,
    memory: ReplayMemory,
    variant: MirVariant,
    eval: &mut Evaluator<'_>,
) -> Result<RunOutput> {
    continual(cfg, stream, state, Some(memory), Replay::Mir(variant), eval)
}

/// Shuffled indices for one offline epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// I.i.d. training on the pooled data with a fresh seeded shuffle per epoch.
pub fn run_offline(
    cfg: &TrainerConfig,
    dataset: &[Instance],
    batch_size: usize,
    mut state: ModelState,
    one_pass: bool,
    eval: &mut Evaluator<'_>,
) -> Result<RunOutput> {
    cfg.validate(batch_size)?;
    let epochs = if one_pass { 1 } else { cfg.epochs };
    let mut stats = RunStats::default();
    let mut records = Vec::new();
    for epoch in 0..epochs {
        let order: Vec<&Instance> = epoch_order(cfg.seed, epoch, dataset.len())
            .into_iter()
            .map(|i| &dataset[i])
            .collect();
        for batch in order.chunks(batch_size) {
            let out = loss_and_grad(&state, batch, cfg.zero_visual)?;
            optimizer_step(&mut state, &out.grads)?;
            stats.steps += 1;
            if stats.steps % cfg.eval_interval == 0 {
                records.push(eval(&state, stats.steps)?);
            }
        }
    }
    let final_record = eval(&state, stats.steps)?;
    Ok(RunOutput {
        state,
        records,
        final_record,
        memory: None,
        stats,
    })
}

/// Dispatches on `cfg.method`. Offline methods train on the stream's
/// instances in shuffled order.
pub fn run_method(
    cfg: &TrainerConfig,
    stream: &Stream,
    state: ModelState,
    eval: &mut Evaluator<'_>,
) -> Result<RunOutput> {
    let memory = || ReplayMemory::new(cfg.memory_capacity);
    match cfg.method {
        Method::Vanilla => run_vanilla(cfg, stream, state, eval),
        Method::Er => run_er(cfg, stream, state, memory(), eval),
        Method::Agem => run_agem(cfg, stream, state, memory(), eval),
        Method::ErMir | Method::ErMirMax => {
            let variant = cfg
                .method
                .mir_variant()
                .ok_or_else(|| Error::Config("no MIR variant".into()))?;
            run_er_mir(cfg, stream, state, memory(), variant, eval)
        }
        Method::Offline => run_offline(
            cfg,
            &stream.instances,
            stream.batch_size,
            state,
            false,
            eval,
        ),
        Method::OfflineOnePass => {
            run_offline(cfg, &stream.instances, stream.batch_size, state, true, eval)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(v: &[f64]) -> Gradients {
        Gradients {
            tensors: vec![v.to_vec()],
        }
    }

    #[test]
    fn orthogonal_reference_leaves_g_alone() {
        assert_eq!(
            agem_project(&g(&[1.0, 0.0]), &g(&[0.0, 1.0])),
            g(&[1.0, 0.0])
        );
    }

    #[test]
    fn conflicting_component_is_removed() {
        let r = g(&[0.0, 1.0]);
        let p = agem_project(&g(&[1.0, -1.0]), &r);
        assert_eq!(p, g(&[1.0, 0.0]));
        assert_eq!(p.dot(&r), 0.0);
    }

    #[test]
    fn opposite_gradient_cancels() {
        assert_eq!(
            agem_project(&g(&[-2.0, 0.0]), &g(&[1.0, 0.0])),
            g(&[0.0, 0.0])
        );
    }

    #[test]
    fn zero_reference_is_a_no_op() {
        assert_eq!(
            agem_project(&g(&[-2.0, 3.0]), &g(&[0.0, 0.0])),
            g(&[-2.0, 3.0])
        );
    }

    #[test]
    fn epoch_orders_are_permutations_that_differ() {
        let a = epoch_order(7, 0, 50);
        let b = epoch_order(7, 1, 50);
        assert_ne!(a, b);
        assert_eq!(a, epoch_order(7, 0, 50));
        let mut s = b.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn projection_contract(
            a in prop::collection::vec(-10.0f64..10.0, 1..40),
            b in prop::collection::vec(-10.0f64..10.0, 1..40),
        ) {
            let n = a.len().min(b.len());
            let (gg, rr) = (g(&a[..n]), g(&b[..n]));
            let p = agem_project(&gg, &rr);
            prop_assert!(p.dot(&rr) >= -1e-9);
            if gg.dot(&rr) >= 0.0 {
                prop_assert_eq!(p, gg);
            }
        }
    }
}
