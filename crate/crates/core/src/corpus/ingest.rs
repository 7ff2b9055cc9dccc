//! JSONL instance files.
//!
//! One object per line:
//! `{"image_feature": [...], "object_features": [[...]...], "tokens": [...],
//!   "pos": [...], "mask_span": [s, e], "task_id": "dog"}` (task_id optional).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::instance::{Instance, PosRole, Span, TaggedToken, TaskId, Vocabulary};
use super::lemma::{derive_task_id, Lemmatizer, SynonymTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub image_feature: Vec<f32>,
    pub object_features: Vec<Vec<f32>>,
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    pub mask_span: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
}

impl InstanceRecord {
    pub fn from_instance(inst: &Instance, vocab: &Vocabulary) -> Self {
        InstanceRecord {
            image_feature: inst.image_feature.clone(),
            object_features: inst.object_features.clone(),
            tokens: inst
                .tokens
                .iter()
                .map(|&t| vocab.token(t).to_string())
                .collect(),
            pos: inst.pos.clone(),
            mask_span: [inst.mask_span.start, inst.mask_span.end],
            task_id: Some(inst.task_id.0.clone()),
        }
    }
}

/// Whether ingestion may add new tokens to the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabMode {
    Grow,
    /// Unknown tokens become UNK.
    Frozen,
}

#[derive(Debug, Clone)]
pub struct IngestOptions<'a> {
    pub feature_dim: usize,
    pub max_objects: usize,
    pub vocab_mode: VocabMode,
    pub synonyms: Option<&'a SynonymTable>,
    pub lemmatizer: &'a Lemmatizer,
}

pub fn ingest_jsonl(
    path: &Path,
    vocab: &mut Vocabulary,
    opts: &IngestOptions<'_>,
) -> Result<Vec<Instance>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: InstanceRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let inst = record_to_instance(record, vocab, opts).map_err(|e| match e {
            Error::DimensionMismatch { .. } => e,
            other => parse_err(other.to_string()),
        })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn record_to_instance(
    record: InstanceRecord,
    vocab: &mut Vocabulary,
    opts: &IngestOptions<'_>,
) -> Result<Instance> {
    let check_dim = |what: &str, v: &[f32]| {
        if v.len() != opts.feature_dim {
            Err(Error::DimensionMismatch {
                what: what.to_string(),
                expected: opts.feature_dim,
                got: v.len(),
            })
        } else {
            Ok(())
        }
    };
    check_dim("image_feature", &record.image_feature)?;
    for obj in &record.object_features {
        check_dim("object_features", obj)?;
    }
    if record.object_features.len() > opts.max_objects {
        return Err(Error::DimensionMismatch {
            what: "object count".into(),
            expected: opts.max_objects,
            got: record.object_features.len(),
        });
    }
    if record.pos.len() != record.tokens.len() {
        return Err(Error::DimensionMismatch {
            what: "pos tags".into(),
            expected: record.tokens.len(),
            got: record.pos.len(),
        });
    }
    let [start, end] = record.mask_span;
    if start >= end || end > record.tokens.len() {
        return Err(Error::Schema(format!(
            "mask_span [{start}, {end}) invalid for {} tokens",
            record.tokens.len()
        )));
    }
    let task_id = match record.task_id {
        Some(t) => TaskId::new(t),
        None => {
            let span: Vec<TaggedToken> = record.tokens[start..end]
                .iter()
                .zip(&record.pos[start..end])
                .map(|(w, p)| TaggedToken::new(w.clone(), p.clone()))
                .collect::<Result<_>>()?;
            derive_task_id(&span, opts.synonyms, opts.lemmatizer)?
        }
    };
    let tokens = record
        .tokens
        .iter()
        .zip(&record.pos)
        .map(|(w, p)| match opts.vocab_mode {
            VocabMode::Grow => {
                let id = vocab.insert(w);
                vocab.set_role(id, PosRole::from_tag(p));
                id
            }
            VocabMode::Frozen => vocab.id(w),
        })
        .collect();
    Instance::new(
        record.image_feature,
        record.object_features,
        tokens,
        record.pos,
        Span::new(start, end),
        task_id,
    )
}

pub fn write_jsonl<'a>(
    path: &Path,
    instances: impl IntoIterator<Item = &'a Instance>,
    vocab: &Vocabulary,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        serde_json::to_writer(&mut w, &InstanceRecord::from_instance(inst, vocab))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
