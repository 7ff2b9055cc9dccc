use std::collections::BTreeMap;

use crate::corpus::{Instance, TokenId};
use crate::error::{Error, Result};

pub const DEFAULT_FORGET_DECAY: f64 = 0.05;

/// Per-word moving average of observed loss increases.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingTracker {
    alpha: f64,
    estimates: BTreeMap<TokenId, f64>,
    last_loss: BTreeMap<TokenId, f64>,
}

impl Default for ForgettingTracker {
    fn default() -> Self {
        ForgettingTracker {
            alpha: DEFAULT_FORGET_DECAY,
            estimates: BTreeMap::new(),
            last_loss: BTreeMap::new(),
        }
    }
}

impl ForgettingTracker {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!(
                "forgetting decay must be in (0, 1), got {alpha}"
            )));
        }
        Ok(ForgettingTracker {
            alpha,
            ..Default::default()
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn estimate(&self, word: TokenId) -> f64 {
        self.estimates.get(&word).copied().unwrap_or(0.0)
    }

    pub fn estimates(&self) -> &BTreeMap<TokenId, f64> {
        &self.estimates
    }

    /// Feeds the per-token training losses of a batch. Each word's delta is
    /// its current loss minus the loss it had when last seen.
    pub fn observe_losses(&mut self, batch: &[Instance], losses: &[Vec<f64>]) {
        for (inst, row) in batch.iter().zip(losses) {
            for (&w, &loss) in inst.label_tokens.iter().zip(row) {
                if let Some(prev) = self.last_loss.insert(w, loss) {
                    tracker_update(self, w, loss - prev);
                }
            }
        }
    }
}

pub fn tracker_update(tracker: &mut ForgettingTracker, word: TokenId, loss_delta: f64) {
    let a = tracker.alpha;
    let e = tracker.estimates.entry(word).or_insert(0.0);
    *e = (1.0 - a) * *e + a * loss_delta.max(0.0);
}
