use rand::Rng;
use serde::{Deserialize, Serialize};

use super::memory::{sample_indices, ReplayMemory};
use crate::corpus::Instance;
use crate::error::{Error, Result};
use crate::model::{loss_and_grad, optimizer_step, token_losses, ModelState};

/// How per-token loss increases are pooled into one candidate score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MirVariant {
    Mean,
    Max,
}

impl MirVariant {
    pub fn score(self, deltas: &[f64]) -> f64 {
        match self {
            MirVariant::Mean => deltas.iter().sum::<f64>() / deltas.len().max(1) as f64,
            MirVariant::Max => deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Per-token loss increase of each candidate after one virtual update on
/// `stream_batch`, taken on a full clone of the state.
pub fn interference_deltas(
    state: &ModelState,
    stream_batch: &[Instance],
    candidates: &[&Instance],
    zero_visual: bool,
) -> Result<Vec<Vec<f64>>> {
    let before = token_losses(state, candidates, zero_visual)?;
    let mut virtual_state = state.clone();
    let out = loss_and_grad(&virtual_state, stream_batch, zero_visual)?;
    optimizer_step(&mut virtual_state, &out.grads)?;
    let after = token_losses(&virtual_state, candidates, zero_visual)?;
    Ok(before
        .iter()
        .zip(&after)
        .map(|(b, a)| a.iter().zip(b).map(|(a, b)| a - b).collect())
        .collect())
}

/// Draws up to `candidate_size` slots, scores them with `deltas` and returns
/// the buffer indices of the top `k`, highest score first, ties to the
/// lower index.
pub fn mir_select_with<R, F>(
    memory: &ReplayMemory,
    candidate_size: usize,
    k: usize,
    variant: MirVariant,
    rng: &mut R,
    mut deltas: F,
) -> Result<Vec<usize>>
where
    R: Rng + ?Sized,
    F: FnMut(&[&Instance]) -> Result<Vec<Vec<f64>>>,
{
    if memory.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let c = candidate_size.min(memory.len()).max(1);
    let k = k.min(c);
    let idx = sample_indices(memory, c, rng)?;
    let cands: Vec<&Instance> = idx.iter().map(|&i| &memory.buffer()[i]).collect();
    let d = deltas(&cands)?;
    let mut scored: Vec<(f64, usize)> = idx
        .iter()
        .zip(&d)
        .map(|(&i, d)| (variant.score(d), i))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
}

pub fn mir_select<R: Rng + ?Sized>(
    memory: &ReplayMemory,
    state: &ModelState,
    stream_batch: &[Instance],
    candidate_size: usize,
    k: usize,
    variant: MirVariant,
    zero_visual: bool,
    rng: &mut R,
) -> Result<Vec<Instance>> {
    let picked = mir_select_with(memory, candidate_size, k, variant, rng, |c| {
        interference_deltas(state, stream_batch, c, zero_visual)
    })?;
    Ok(picked
        .into_iter()
        .map(|i| memory.buffer()[i].clone())
        .collect())
}
