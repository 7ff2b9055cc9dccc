//! Held-out composition filtering.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::instance::{is_noun_tag, CompositionKind, CompositionPair, Instance, Vocabulary};
use super::lemma::Lemmatizer;
use crate::error::{Error, Result};

/// Loads `modifier<TAB>noun<TAB>kind` rows.
pub fn load_held_out(path: &Path) -> Result<Vec<CompositionPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_held_out(&text).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

pub fn parse_held_out(text: &str) -> std::result::Result<Vec<CompositionPair>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err((i + 1, format!("expected 3 columns, got {}", cols.len())));
        }
        let pair = CompositionKind::parse(cols[2])
            .and_then(|kind| CompositionPair::new(cols[0].trim(), cols[1].trim(), kind))
            .map_err(|e| (i + 1, e.to_string()))?;
        out.push(pair);
    }
    Ok(out)
}

pub fn format_held_out(pairs: &[CompositionPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}\t{}\t{}\n", p.modifier, p.noun, p.kind.as_str()))
        .collect()
}

/// All (modifier, head noun) compositions in an instance's masked span.
///
/// Prenominal JJ/VBG/VBN tokens pair with the head noun as noun-adj;
/// verbs after the head pair as noun-verb. Verb modifiers are lemmatized.
pub fn compositions_in_span(
    inst: &Instance,
    vocab: &Vocabulary,
    lem: &Lemmatizer,
) -> Vec<CompositionPair> {
    let span = inst.tagged_span(vocab);
    let Some(head) = span.iter().rposition(|t| is_noun_tag(&t.pos)) else {
        return Vec::new();
    };
    let noun = lem.noun(&span[head].surface);
    let mut out = Vec::new();
    for (i, tok) in span.iter().enumerate() {
        let kind = if i < head && matches!(tok.pos.as_str(), "JJ" | "JJR" | "JJS" | "VBG" | "VBN") {
            CompositionKind::NounAdj
        } else if i > head && tok.pos.starts_with("VB") {
            CompositionKind::NounVerb
        } else {
            continue;
        };
        let modifier = if tok.pos.starts_with("VB") {
            lem.verb(&tok.surface)
        } else {
            tok.surface.to_lowercase()
        };
        if let Ok(p) = CompositionPair::new(modifier, noun.clone(), kind) {
            out.push(p);
        }
    }
    out
}

/// True when the span holds both atoms of `pair`, either as a parsed
/// composition or as raw tokens (surface or lemma).
pub fn span_contains_pair(
    inst: &Instance,
    vocab: &Vocabulary,
    lem: &Lemmatizer,
    pair: &CompositionPair,
) -> bool {
    let span = inst.tagged_span(vocab);
    let has_noun = span
        .iter()
        .any(|t| is_noun_tag(&t.pos) && lem.noun(&t.surface) == pair.noun);
    let has_modifier = span.iter().any(|t| {
        !is_noun_tag(&t.pos)
            && (t.surface.eq_ignore_ascii_case(&pair.modifier) || lem.lemma(t) == pair.modifier)
    });
    has_noun && has_modifier
}

#[derive(Debug, Clone, Default)]
pub struct CompositionalSplit {
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
    pub compositional_test: Vec<Instance>,
    pub warnings: Vec<String>,
}

pub fn build_compositional_split(
    train: Vec<Instance>,
    val: Vec<Instance>,
    test: Vec<Instance>,
    held_out: &[CompositionPair],
    vocab: &Vocabulary,
    lem: &Lemmatizer,
) -> CompositionalSplit {
    let is_held = |inst: &Instance| {
        held_out
            .iter()
            .any(|p| span_contains_pair(inst, vocab, lem, p))
    };
    let (_, train): (Vec<_>, Vec<_>) = train.into_iter().partition(|i| is_held(i));
    let (_, val): (Vec<_>, Vec<_>) = val.into_iter().partition(|i| is_held(i));
    let (compositional_test, test): (Vec<_>, Vec<_>) = test.into_iter().partition(|i| is_held(i));

    let mut train_nouns = BTreeSet::new();
    let mut train_modifiers = BTreeSet::new();
    for inst in &train {
        for c in compositions_in_span(inst, vocab, lem) {
            train_nouns.insert(c.noun);
            train_modifiers.insert(c.modifier);
        }
    }
    let mut warnings = Vec::new();
    for p in held_out {
        if !train_nouns.contains(&p.noun) {
            warnings.push(format!(
                "held-out pair `{}`: noun `{}` never occurs in train",
                p.label(),
                p.noun
            ));
        }
        if !train_modifiers.contains(&p.modifier) {
            warnings.push(format!(
                "held-out pair `{}`: modifier `{}` never occurs in train",
                p.label(),
                p.modifier
            ));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    CompositionalSplit {
        train,
        val,
        test,
        compositional_test,
        warnings,
    }
}
