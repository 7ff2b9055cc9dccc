use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{load_summary, ExperimentSummary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub memory: usize,
    pub final_log_ppl: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub f_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub corpus_fingerprint: String,
    pub stream_seed: u64,
    pub rows: Vec<ComparisonRow>,
}

/// One row per run, from seed-averaged summaries. Runs must share the
/// corpus and stream seed.
pub fn compare_summaries(summaries: &[ExperimentSummary]) -> Result<ComparisonTable> {
    let first = summaries
        .first()
        .ok_or_else(|| Error::Config("compare needs at least one run".into()))?;
    for s in summaries {
        if s.corpus_fingerprint != first.corpus_fingerprint {
            return Err(Error::Mismatch(format!(
                "{} (memory {}) was trained on a different corpus",
                s.method, s.memory
            )));
        }
        if s.stream_seed != first.stream_seed {
            return Err(Error::Mismatch(format!(
                "stream seed {} differs from {}",
                s.stream_seed, first.stream_seed
            )));
        }
    }
    let rows = summaries
        .iter()
        .map(|s| ComparisonRow {
            method: s.method.clone(),
            memory: s.memory,
            final_log_ppl: s.mean.final_log_ppl,
            bleu1: s.mean.bleu1,
            bleu2: s.mean.bleu2,
            f_avg: s.mean.f_avg,
        })
        .collect();
    Ok(ComparisonTable {
        corpus_fingerprint: first.corpus_fingerprint.clone(),
        stream_seed: first.stream_seed,
        rows,
    })
}

pub fn compare_methods<P: AsRef<Path>>(run_dirs: &[P]) -> Result<ComparisonTable> {
    let summaries = run_dirs
        .iter()
        .map(|d| load_summary(d.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    compare_summaries(&summaries)
}

pub fn write_comparison_csv<W: Write>(out: W, table: &ComparisonTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &table.rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}
