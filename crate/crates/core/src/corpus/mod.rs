//! Instances, vocabulary, chunking, ingestion, synthetic generation and the
//! compositional test split.

pub mod chunker;
pub mod ingest;
pub mod instance;
pub mod lemma;
pub mod split;
pub mod synthetic;

pub use chunker::{chunk_caption, chunk_tags};
pub use ingest::{ingest_jsonl, write_jsonl, IngestOptions, InstanceRecord, VocabMode};
pub use instance::{
    CompositionKind, CompositionPair, Instance, PosRole, Span, TaggedToken, TaskId, TokenId,
    Vocabulary,
};
pub use lemma::{derive_task_id, Lemmatizer, SynonymTable};
pub use split::{
    build_compositional_split, compositions_in_span, load_held_out, CompositionalSplit,
};
pub use synthetic::{generate_synthetic_corpus, SyntheticCorpus, SyntheticSpec};

use std::collections::BTreeMap;

/// Groups instances by task id.
pub fn group_by_task(instances: &[Instance]) -> BTreeMap<TaskId, Vec<Instance>> {
    let mut out: BTreeMap<TaskId, Vec<Instance>> = BTreeMap::new();
    for inst in instances {
        out.entry(inst.task_id.clone())
            .or_default()
            .push(inst.clone());
    }
    out
}
