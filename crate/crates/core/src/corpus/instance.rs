use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Opaque task label: the (mapped) head noun of an instance's masked span.
///
/// Only the stream builder and the evaluation code look at it; learners never do.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl TaskId {
    pub fn new(s: impl Into<String>) -> Self {
        TaskId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosRole {
    Noun,
    Adjective,
    Verb,
    Other,
}

impl PosRole {
    pub fn from_tag(tag: &str) -> Self {
        if is_noun_tag(tag) {
            PosRole::Noun
        } else if tag.starts_with("JJ") {
            PosRole::Adjective
        } else if tag.starts_with("VB") {
            PosRole::Verb
        } else {
            PosRole::Other
        }
    }
}

pub fn is_noun_tag(tag: &str) -> bool {
    matches!(tag, "NN" | "NNS" | "NNP" | "NNPS")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedToken {
    pub surface: String,
    pub pos: String,
}

impl TaggedToken {
    pub fn new(surface: impl Into<String>, pos: impl Into<String>) -> Result<Self> {
        let pos = pos.into();
        if pos.is_empty() {
            return Err(Error::Schema("empty part-of-speech tag".into()));
        }
        Ok(TaggedToken {
            surface: surface.into(),
            pos,
        })
    }

    /// Parses `word/TAG word/TAG ...`.
    pub fn parse_sentence(s: &str) -> Result<Vec<TaggedToken>> {
        s.split_whitespace()
            .map(|item| match item.rsplit_once('/') {
                Some((w, t)) => TaggedToken::new(w, t),
                None => Err(Error::Schema(format!("token `{item}` lacks a /TAG suffix"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompositionKind {
    #[serde(rename = "noun-adj")]
    NounAdj,
    #[serde(rename = "noun-verb")]
    NounVerb,
}

impl CompositionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CompositionKind::NounAdj => "noun-adj",
            CompositionKind::NounVerb => "noun-verb",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "noun-adj" | "adj" => Ok(CompositionKind::NounAdj),
            "noun-verb" | "verb" => Ok(CompositionKind::NounVerb),
            other => Err(Error::Schema(format!("unknown composition kind `{other}`"))),
        }
    }
}

/// A (modifier, noun) pair. Modifiers are compared in base form (verb lemma or adjective).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CompositionPair {
    pub modifier: String,
    pub noun: String,
    pub kind: CompositionKind,
}

impl CompositionPair {
    pub fn new(
        modifier: impl Into<String>,
        noun: impl Into<String>,
        kind: CompositionKind,
    ) -> Result<Self> {
        let (modifier, noun) = (modifier.into(), noun.into());
        if modifier == noun {
            return Err(Error::Schema(format!(
                "composition modifier equals noun `{noun}`"
            )));
        }
        Ok(CompositionPair {
            modifier,
            noun,
            kind,
        })
    }

    pub fn label(&self) -> String {
        format!("{} {}", self.modifier, self.noun)
    }

    pub fn shares_atom(&self, other: &CompositionPair) -> bool {
        self.modifier == other.modifier || self.noun == other.noun
    }
}

/// One stream example.
///
/// `tokens` keeps the original ids inside the masked span; the encoder swaps in
/// MASK at forward time, and `label_tokens` is a copy of `tokens[mask_span]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub image_feature: Vec<f32>,
    pub object_features: Vec<Vec<f32>>,
    pub tokens: Vec<TokenId>,
    pub pos: Vec<String>,
    pub mask_span: Span,
    pub label_tokens: Vec<TokenId>,
    pub task_id: TaskId,
}

impl Instance {
    pub fn new(
        image_feature: Vec<f32>,
        object_features: Vec<Vec<f32>>,
        tokens: Vec<TokenId>,
        pos: Vec<String>,
        mask_span: Span,
        task_id: TaskId,
    ) -> Result<Self> {
        if pos.len() != tokens.len() {
            return Err(Error::DimensionMismatch {
                what: "pos tags".into(),
                expected: tokens.len(),
                got: pos.len(),
            });
        }
        if mask_span.start >= mask_span.end || mask_span.end > tokens.len() {
            return Err(Error::Schema(format!(
                "mask span [{}, {}) invalid for {} tokens",
                mask_span.start,
                mask_span.end,
                tokens.len()
            )));
        }
        if !pos[mask_span.range()].iter().any(|t| is_noun_tag(t)) {
            return Err(Error::NoNounInSpan);
        }
        let label_tokens = tokens[mask_span.range()].to_vec();
        Ok(Instance {
            image_feature,
            object_features,
            tokens,
            pos,
            mask_span,
            label_tokens,
            task_id,
        })
    }

    pub fn span_tokens(&self) -> &[TokenId] {
        &self.tokens[self.mask_span.range()]
    }

    pub fn span_pos(&self) -> &[String] {
        &self.pos[self.mask_span.range()]
    }

    pub fn tagged_span(&self, vocab: &Vocabulary) -> Vec<TaggedToken> {
        self.span_tokens()
            .iter()
            .zip(self.span_pos())
            .map(|(&id, pos)| TaggedToken {
                surface: vocab.token(id).to_string(),
                pos: pos.clone(),
            })
            .collect()
    }

    pub fn has_visual_content(&self) -> bool {
        self.image_feature
            .iter()
            .chain(self.object_features.iter().flatten())
            .any(|&v| v != 0.0)
    }
}

/// Dense token-id mapping. Ids 0..3 are PAD, UNK and MASK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    roles: Vec<Option<PosRole>>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub const PAD: TokenId = 0;
    pub const UNK: TokenId = 1;
    pub const MASK: TokenId = 2;

    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            roles: Vec::new(),
            index: HashMap::new(),
        };
        for s in ["[PAD]", "[UNK]", "[MASK]"] {
            v.insert(s);
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.roles.push(None);
        self.index.insert(token.to_string(), id);
        id
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> TokenId {
        self.get(token).unwrap_or(Self::UNK)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or("[UNK]")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn set_role(&mut self, id: TokenId, role: PosRole) {
        if let Some(r) = self.roles.get_mut(id as usize) {
            r.get_or_insert(role);
        }
    }

    pub fn role(&self, id: TokenId) -> Option<PosRole> {
        self.roles.get(id as usize).copied().flatten()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (i as TokenId, t.as_str()))
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    roles: Vec<Option<PosRole>>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let index = r
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        let mut roles = r.roles;
        roles.resize(r.tokens.len(), None);
        Vocabulary {
            tokens: r.tokens,
            roles,
            index,
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            roles: v.roles,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_specials_are_distinct_and_dense() {
        let mut v = Vocabulary::new();
        assert_eq!(v.len(), 3);
        let dog = v.insert("dog");
        assert_eq!(dog, 3);
        assert_eq!(v.insert("dog"), dog);
        assert_eq!(v.id("cat"), Vocabulary::UNK);
        assert_ne!(Vocabulary::PAD, Vocabulary::MASK);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn instance_rejects_span_without_noun() {
        let err = Instance::new(
            vec![],
            vec![],
            vec![3, 4],
            vec!["RB".into(), "VBD".into()],
            Span::new(0, 2),
            TaskId::new("x"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoNounInSpan));
    }

    #[test]
    fn composition_pair_rejects_identical_atoms() {
        assert!(CompositionPair::new("dog", "dog", CompositionKind::NounAdj).is_err());
    }

    #[test]
    fn parse_tagged_sentence() {
        let t = TaggedToken::parse_sentence("a/DT brown/JJ dog/NN").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[2].pos, "NN");
        assert!(TaggedToken::parse_sentence("dog").is_err());
    }
}
