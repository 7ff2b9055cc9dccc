use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::memory::ReplayMemory;
use super::tracker::ForgettingTracker;
use crate::corpus::{Instance, TokenId};

/// Pseudo-count added to every target-support word before normalizing the
/// memory distribution.
pub const KL_SMOOTHING: f64 = 0.5;

const MIN_DECREASE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancePolicy {
    Sqrt,
    Forget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalancedOutcome {
    Appended,
    Replaced(usize),
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancedStep {
    pub outcome: BalancedOutcome,
    pub kl_before: f64,
    pub kl_after: f64,
}

/// Normalized target distribution; words with zero weight are left out.
pub fn target_distribution(
    memory: &ReplayMemory,
    policy: BalancePolicy,
    tracker: &ForgettingTracker,
) -> BTreeMap<TokenId, f64> {
    let mut w: BTreeMap<TokenId, f64> = memory
        .word_counts_stream()
        .iter()
        .map(|(&word, &c)| {
            let weight = match policy {
                BalancePolicy::Sqrt => (c as f64).sqrt(),
                BalancePolicy::Forget => c as f64 * tracker.estimate(word),
            };
            (word, weight)
        })
        .filter(|&(_, x)| x > 0.0)
        .collect();
    let total: f64 = w.values().sum();
    for x in w.values_mut() {
        *x /= total;
    }
    w
}

/// KL(p_mem || p_tgt) over the target support, with smoothed memory counts.
pub fn smoothed_kl(memory_counts: &BTreeMap<TokenId, u64>, target: &BTreeMap<TokenId, f64>) -> f64 {
    if target.is_empty() {
        return 0.0;
    }
    let a = |w: &TokenId| memory_counts.get(w).copied().unwrap_or(0) as f64 + KL_SMOOTHING;
    let z: f64 = target.keys().map(a).sum();
    target
        .iter()
        .map(|(w, &t)| {
            let p = a(w) / z;
            p * (p / t).ln()
        })
        .sum()
}

/// Running sums that give the smoothed KL in closed form:
/// KL = A/Z - ln Z - B/Z with a_w = c_w + 0.5, A = sum a ln a, B = sum a ln t.
#[derive(Clone, Copy)]
struct KlSums {
    a: f64,
    b: f64,
    z: f64,
}

impl KlSums {
    fn kl(&self) -> f64 {
        self.a / self.z - self.z.ln() - self.b / self.z
    }
}

fn signed_delta(
    add: &[TokenId],
    remove: &[TokenId],
    target: &BTreeMap<TokenId, f64>,
) -> Vec<(TokenId, i64)> {
    let mut d: BTreeMap<TokenId, i64> = BTreeMap::new();
    for w in add.iter().filter(|w| target.contains_key(w)) {
        *d.entry(*w).or_default() += 1;
    }
    for w in remove.iter().filter(|w| target.contains_key(w)) {
        *d.entry(*w).or_default() -= 1;
    }
    d.into_iter().filter(|&(_, x)| x != 0).collect()
}

/// Current KL and the KL after replacing each slot with `incoming`.
fn replacement_kls(
    memory: &ReplayMemory,
    incoming: &Instance,
    target: &BTreeMap<TokenId, f64>,
) -> (f64, Vec<f64>) {
    let counts = memory.word_counts_memory();
    let a_of = |w: TokenId| counts.get(&w).copied().unwrap_or(0) as f64 + KL_SMOOTHING;
    let mut sums = KlSums {
        a: 0.0,
        b: 0.0,
        z: 0.0,
    };
    for (&w, &t) in target {
        let a = a_of(w);
        sums.a += a * a.ln();
        sums.b += a * t.ln();
        sums.z += a;
    }
    let current = sums.kl();
    let kls = memory
        .buffer()
        .iter()
        .map(|stored| {
            let delta = signed_delta(&incoming.label_tokens, &stored.label_tokens, target);
            if delta.is_empty() {
                return current;
            }
            let mut h = sums;
            for (w, d) in delta {
                let old = a_of(w);
                let new = old + d as f64;
                h.a += new * new.ln() - old * old.ln();
                h.b += d as f64 * target[&w].ln();
                h.z += d as f64;
            }
            h.kl()
        })
        .collect();
    (current, kls)
}

/// Offers one stream example to a memory kept close to the target word
/// distribution. While filling, the example is appended; afterwards it
/// replaces the slot giving the largest KL decrease, or is dropped.
pub fn balanced_update(
    memory: &mut ReplayMemory,
    incoming: &Instance,
    policy: BalancePolicy,
    tracker: &ForgettingTracker,
) -> BalancedStep {
    memory.observe(incoming);
    let target = target_distribution(memory, policy, tracker);
    let kl_before = smoothed_kl(memory.word_counts_memory(), &target);
    if memory.capacity() == 0 {
        return BalancedStep {
            outcome: BalancedOutcome::Discarded,
            kl_before,
            kl_after: kl_before,
        };
    }
    if !memory.is_full() {
        memory.push(incoming.clone());
        let kl_after = smoothed_kl(memory.word_counts_memory(), &target);
        return BalancedStep {
            outcome: BalancedOutcome::Appended,
            kl_before,
            kl_after,
        };
    }

    let (current, kls) = replacement_kls(memory, incoming, &target);
    let mut best: Option<(f64, usize)> = None;
    for (slot, kl) in kls.into_iter().enumerate() {
        let decrease = current - kl;
        if decrease > MIN_DECREASE && best.is_none_or(|(b, _)| decrease > b) {
            best = Some((decrease, slot));
        }
    }

    match best {
        Some((_, slot)) => {
            memory.replace(slot, incoming.clone());
            let kl_after = smoothed_kl(memory.word_counts_memory(), &target);
            BalancedStep {
                outcome: BalancedOutcome::Replaced(slot),
                kl_before,
                kl_after,
            }
        }
        None => BalancedStep {
            outcome: BalancedOutcome::Discarded,
            kl_before,
            kl_after: kl_before,
        },
    }
}
