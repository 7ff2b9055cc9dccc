//! Lookup-table lemmatization and task-id derivation.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::instance::{is_noun_tag, TaggedToken, TaskId};
use crate::error::{Error, Result};

const NOUN_EXCEPTIONS: &[(&str, &str)] = &[
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("people", "person"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("knives", "knife"),
    ("wives", "wife"),
    ("lives", "life"),
    ("leaves", "leaf"),
    ("shelves", "shelf"),
    ("wolves", "wolf"),
    ("calves", "calf"),
    ("halves", "half"),
    ("oxen", "ox"),
    ("sheep", "sheep"),
    ("fish", "fish"),
    ("deer", "deer"),
    ("skis", "ski"),
    ("buses", "bus"),
    ("glasses", "glass"),
    ("giraffes", "giraffe"),
    ("ties", "tie"),
    ("pies", "pie"),
];

const VERB_EXCEPTIONS: &[(&str, &str)] = &[
    ("lying", "lie"),
    ("lies", "lie"),
    ("lay", "lie"),
    ("riding", "ride"),
    ("rode", "ride"),
    ("ridden", "ride"),
    ("making", "make"),
    ("taking", "take"),
    ("having", "have"),
    ("has", "have"),
    ("is", "be"),
    ("are", "be"),
    ("being", "be"),
    ("sat", "sit"),
    ("stood", "stand"),
    ("ate", "eat"),
    ("eaten", "eat"),
    ("flew", "fly"),
    ("flown", "fly"),
    ("flies", "fly"),
    ("held", "hold"),
    ("driving", "drive"),
    ("parked", "park"),
    ("grazing", "graze"),
    ("skiing", "ski"),
];

/// Plural-to-singular noun rules plus verb base-form rules, both backed by
/// exception tables that an external TSV can extend.
#[derive(Debug, Clone)]
pub struct Lemmatizer {
    nouns: HashMap<String, String>,
    verbs: HashMap<String, String>,
}

impl Default for Lemmatizer {
    fn default() -> Self {
        let table = |pairs: &[(&str, &str)]| {
            pairs
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect()
        };
        Lemmatizer {
            nouns: table(NOUN_EXCEPTIONS),
            verbs: table(VERB_EXCEPTIONS),
        }
    }
}

impl Lemmatizer {
    /// Adds noun exceptions from a `plural<TAB>singular` file.
    pub fn with_noun_exceptions(mut self, path: &Path) -> Result<Self> {
        for (k, v) in read_two_column_tsv(path)? {
            self.nouns.insert(k, v);
        }
        Ok(self)
    }

    pub fn noun(&self, word: &str) -> String {
        let w = word.to_lowercase();
        if let Some(l) = self.nouns.get(&w) {
            return l.clone();
        }
        let n = w.len();
        if n > 3 && w.ends_with("ies") {
            return format!("{}y", &w[..n - 3]);
        }
        if n > 3 && w.ends_with("ves") {
            return format!("{}f", &w[..n - 3]);
        }
        for suffix in ["ches", "shes", "sses", "xes", "zes"] {
            if w.ends_with(suffix) {
                return w[..n - 2].to_string();
            }
        }
        if n > 2
            && w.ends_with('s')
            && !w.ends_with("ss")
            && !w.ends_with("us")
            && !w.ends_with("is")
        {
            return w[..n - 1].to_string();
        }
        w
    }

    pub fn verb(&self, word: &str) -> String {
        let w = word.to_lowercase();
        if let Some(l) = self.verbs.get(&w) {
            return l.clone();
        }
        let n = w.len();
        if n > 5 && w.ends_with("ing") {
            let stem = &w[..n - 3];
            return undouble(stem);
        }
        if n > 4 && w.ends_with("ed") {
            return undouble(&w[..n - 2]);
        }
        if n > 3
            && w.ends_with("es")
            && (w.ends_with("ches") || w.ends_with("shes") || w.ends_with("sses"))
        {
            return w[..n - 2].to_string();
        }
        if n > 2 && w.ends_with('s') && !w.ends_with("ss") {
            return w[..n - 1].to_string();
        }
        w
    }

    /// Base form of a tagged token: nouns singularized, verbs to their stem,
    /// everything else lowercased.
    pub fn lemma(&self, token: &TaggedToken) -> String {
        if is_noun_tag(&token.pos) {
            self.noun(&token.surface)
        } else if token.pos.starts_with("VB") {
            self.verb(&token.surface)
        } else {
            token.surface.to_lowercase()
        }
    }
}

fn undouble(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 2 && b[n - 1] == b[n - 2] && !matches!(b[n - 1], b'l' | b's' | b'z' | b'e' | b'o') {
        stem[..n - 1].to_string()
    } else {
        stem.to_string()
    }
}

/// Noun → category mapping loaded from a `noun<TAB>category` file.
#[derive(Debug, Clone, Default)]
pub struct SynonymTable {
    map: HashMap<String, String>,
}

impl SynonymTable {
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        SynonymTable {
            map: pairs
                .into_iter()
                .map(|(a, b)| (a.into(), b.into()))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(SynonymTable {
            map: read_two_column_tsv(path)?.into_iter().collect(),
        })
    }

    pub fn get(&self, noun: &str) -> Option<&str> {
        self.map.get(noun).map(String::as_str)
    }
}

fn read_two_column_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next()) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                out.push((a.trim().to_string(), b.trim().to_string()))
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected two tab-separated columns".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Head noun of a span: the last noun-tagged token.
pub fn head_noun(span: &[TaggedToken]) -> Option<&TaggedToken> {
    span.iter().rev().find(|t| is_noun_tag(&t.pos))
}

/// Lemmatized head noun, mapped through `synonyms` when a table is supplied
/// and it has an entry (either for the lemma or the surface form).
pub fn derive_task_id(
    span: &[TaggedToken],
    synonyms: Option<&SynonymTable>,
    lemmatizer: &Lemmatizer,
) -> Result<TaskId> {
    let head = head_noun(span).ok_or(Error::NoNounInSpan)?;
    let lemma = lemmatizer.noun(&head.surface);
    let mapped = synonyms.and_then(|table| {
        table
            .get(&lemma)
            .or_else(|| table.get(&head.surface.to_lowercase()))
    });
    Ok(TaskId::new(mapped.map(str::to_string).unwrap_or(lemma)))
}
