use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::scores::log_perplexity;
use crate::corpus::{
    compositions_in_span, CompositionKind, CompositionPair, Instance, Lemmatizer, Vocabulary,
};
use crate::error::Result;
use crate::model::{predict_span, ModelState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub seen_log_ppl: Option<f64>,
    pub seen_compositions: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub novel_log_ppl: Option<f64>,
    pub novel_compositions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub kinds: BTreeMap<String, KindReport>,
    pub warnings: Vec<String>,
}

impl CompositionReport {
    pub fn kind(&self, kind: CompositionKind) -> Option<&KindReport> {
        self.kinds.get(kind.as_str())
    }
}

/// Mean log-PPL per composition, for compositions accepted by `keep`.
fn per_composition<F>(
    state: &ModelState,
    insts: &[Instance],
    vocab: &Vocabulary,
    lem: &Lemmatizer,
    zero_visual: bool,
    keep: F,
) -> Result<BTreeMap<CompositionPair, (f64, usize)>>
where
    F: Fn(&CompositionPair) -> bool,
{
    let mut acc: BTreeMap<CompositionPair, (f64, usize)> = BTreeMap::new();
    for inst in insts {
        let pairs: Vec<CompositionPair> = compositions_in_span(inst, vocab, lem)
            .into_iter()
            .filter(|p| keep(p))
            .collect();
        if pairs.is_empty() {
            continue;
        }
        let v = log_perplexity(&predict_span(state, inst, zero_visual)?, &inst.label_tokens);
        for p in pairs {
            let e = acc.entry(p).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    Ok(acc)
}

fn kind_means(
    comps: &BTreeMap<CompositionPair, (f64, usize)>,
) -> BTreeMap<CompositionKind, (f64, usize)> {
    let mut out: BTreeMap<CompositionKind, (f64, usize)> = BTreeMap::new();
    for (p, &(sum, n)) in comps {
        let e = out.entry(p.kind).or_default();
        e.0 += sum / n as f64;
        e.1 += 1;
    }
    out.into_iter()
        .map(|(k, (s, n))| (k, (s / n as f64, n)))
        .collect()
}

/// Seen compositions are regular-test compositions of the same kind sharing
/// an atom with a held-out pair; novel ones are the held-out pairs found in
/// the compositional test. Each side averages per composition first.
pub fn composition_report(
    state: &ModelState,
    regular_test: &[Instance],
    compositional_test: &[Instance],
    held_out: &[CompositionPair],
    vocab: &Vocabulary,
    lem: &Lemmatizer,
    zero_visual: bool,
) -> Result<CompositionReport> {
    let seen = per_composition(state, regular_test, vocab, lem, zero_visual, |p| {
        !held_out.contains(p)
            && held_out
                .iter()
                .any(|h| h.kind == p.kind && h.shares_atom(p))
    })?;
    let novel = per_composition(state, compositional_test, vocab, lem, zero_visual, |p| {
        held_out.contains(p)
    })?;
    let mut warnings = Vec::new();
    if compositional_test.is_empty() {
        warnings.push("compositional test split is empty; novel scores omitted".to_string());
    }
    let seen_k = kind_means(&seen);
    let novel_k = kind_means(&novel);
    let mut kinds = BTreeMap::new();
    for kind in [CompositionKind::NounAdj, CompositionKind::NounVerb] {
        let s = seen_k.get(&kind);
        let n = novel_k.get(&kind);
        if s.is_none() && n.is_none() {
            continue;
        }
        kinds.insert(
            kind.as_str().to_string(),
            KindReport {
                seen_log_ppl: s.map(|x| x.0),
                seen_compositions: s.map_or(0, |x| x.1),
                novel_log_ppl: n.map(|x| x.0),
                novel_compositions: n.map_or(0, |x| x.1),
            },
        );
    }
    Ok(CompositionReport { kinds, warnings })
}
