//! Regular-expression noun-phrase chunker over Penn Treebank tags.
//!
//! Pattern: `<DT>? <JJ|VBG|VBN>* <NN|NNS>+ <VB|VBD|VBG|VBN|VBP|VBZ>*`.
//! Matches are leftmost and maximal, scanned left to right without overlap.
//! The tag groups are disjoint at each stage boundary, so greedy matching
//! never needs to backtrack.

use super::instance::{Span, TaggedToken};

fn is_pre_modifier(tag: &str) -> bool {
    matches!(tag, "JJ" | "VBG" | "VBN")
}

fn is_chunk_noun(tag: &str) -> bool {
    matches!(tag, "NN" | "NNS")
}

fn is_post_verb(tag: &str) -> bool {
    matches!(tag, "VB" | "VBD" | "VBG" | "VBN" | "VBP" | "VBZ")
}

/// Length of the longest match anchored at `start`, if any.
fn match_at<S: AsRef<str>>(tags: &[S], start: usize) -> Option<usize> {
    let tag = |i: usize| tags.get(i).map(|t| t.as_ref());
    let mut i = start;
    if tag(i) == Some("DT") {
        i += 1;
    }
    while tag(i).is_some_and(is_pre_modifier) {
        i += 1;
    }
    let noun_start = i;
    while tag(i).is_some_and(is_chunk_noun) {
        i += 1;
    }
    if i == noun_start {
        return None;
    }
    while tag(i).is_some_and(is_post_verb) {
        i += 1;
    }
    Some(i - start)
}

/// Chunks a tag sequence.
pub fn chunk_tags<S: AsRef<str>>(tags: &[S]) -> Vec<Span> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        match match_at(tags, i) {
            Some(len) => {
                out.push(Span::new(i, i + len));
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

pub fn chunk_caption(tagged: &[TaggedToken]) -> Vec<Span> {
    let tags: Vec<&str> = tagged.iter().map(|t| t.pos.as_str()).collect();
    chunk_tags(&tags)
}
