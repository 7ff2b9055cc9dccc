use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, Instance, TokenId, Vocabulary};
use crate::error::{Error, Result};

/// Fixed-capacity example buffer plus the word statistics the balanced
/// write policies need. Words are masked-span (label) tokens.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    buffer: Vec<Instance>,
    seen_count: u64,
    word_counts_stream: BTreeMap<TokenId, u64>,
    word_counts_memory: BTreeMap<TokenId, u64>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory {
            capacity,
            buffer: Vec::with_capacity(capacity),
            seen_count: 0,
            word_counts_stream: BTreeMap::new(),
            word_counts_memory: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buffer.len() >= self.capacity
    }

    pub fn buffer(&self) -> &[Instance] {
        &self.buffer
    }

    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn word_counts_stream(&self) -> &BTreeMap<TokenId, u64> {
        &self.word_counts_stream
    }

    pub fn word_counts_memory(&self) -> &BTreeMap<TokenId, u64> {
        &self.word_counts_memory
    }

    /// Records an offered stream example (stored or not).
    pub(crate) fn observe(&mut self, inst: &Instance) {
        self.seen_count += 1;
        for &w in &inst.label_tokens {
            *self.word_counts_stream.entry(w).or_default() += 1;
        }
    }

    pub(crate) fn push(&mut self, inst: Instance) {
        debug_assert!(!self.is_full());
        add_counts(&mut self.word_counts_memory, &inst.label_tokens);
        self.buffer.push(inst);
    }

    pub(crate) fn replace(&mut self, slot: usize, inst: Instance) {
        remove_counts(
            &mut self.word_counts_memory,
            &self.buffer[slot].label_tokens,
        );
        add_counts(&mut self.word_counts_memory, &inst.label_tokens);
        self.buffer[slot] = inst;
    }

    /// Fresh recount of the buffer's span words.
    pub fn recount(&self) -> BTreeMap<TokenId, u64> {
        let mut out = BTreeMap::new();
        for inst in &self.buffer {
            add_counts(&mut out, &inst.label_tokens);
        }
        out
    }

    /// Writes `<stem>.jsonl` with the stored instances and `<stem>.json`
    /// with `{seen_count, word_counts_memory}`.
    pub fn dump(&self, dir: &Path, stem: &str, vocab: &Vocabulary) -> Result<()> {
        write_jsonl(&dir.join(format!("{stem}.jsonl")), &self.buffer, vocab)?;
        let sidecar = MemorySidecar {
            seen_count: self.seen_count,
            word_counts_memory: self
                .word_counts_memory
                .iter()
                .map(|(&w, &c)| (vocab.token(w).to_string(), c))
                .collect(),
        };
        let path = dir.join(format!("{stem}.json"));
        std::fs::write(&path, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySidecar {
    pub seen_count: u64,
    pub word_counts_memory: BTreeMap<String, u64>,
}

fn add_counts(counts: &mut BTreeMap<TokenId, u64>, words: &[TokenId]) {
    for &w in words {
        *counts.entry(w).or_default() += 1;
    }
}

fn remove_counts(counts: &mut BTreeMap<TokenId, u64>, words: &[TokenId]) {
    for &w in words {
        if let Some(c) = counts.get_mut(&w) {
            *c -= 1;
            if *c == 0 {
                counts.remove(&w);
            }
        }
    }
}

/// Reservoir sampling, one example at a time: append while filling, then
/// keep the n-th offered example with probability M/n in a uniform slot.
pub fn reservoir_update<R: Rng + ?Sized>(
    memory: &mut ReplayMemory,
    incoming: &[Instance],
    rng: &mut R,
) {
    for inst in incoming {
        memory.observe(inst);
        if memory.capacity == 0 {
            continue;
        }
        if !memory.is_full() {
            memory.push(inst.clone());
        } else {
            let j = rng.random_range(0..memory.seen_count);
            if (j as usize) < memory.capacity {
                memory.replace(j as usize, inst.clone());
            }
        }
    }
}

/// Buffer indices of `k` uniform draws: without replacement when `k` fits in
/// the buffer, with replacement otherwise.
pub fn sample_indices<R: Rng + ?Sized>(
    memory: &ReplayMemory,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = memory.len();
    if n == 0 {
        return Err(Error::EmptyMemory);
    }
    if k <= n {
        Ok(index::sample(rng, n, k).into_vec())
    } else {
        Ok((0..k).map(|_| rng.random_range(0..n)).collect())
    }
}

pub fn sample_batch<R: Rng + ?Sized>(
    memory: &ReplayMemory,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Instance>> {
    Ok(sample_indices(memory, k, rng)?
        .into_iter()
        .map(|i| memory.buffer[i].clone())
        .collect())
}
