use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::scores::{bleu_n, log_perplexity};
use crate::corpus::{Instance, TaskId};
use crate::error::{Error, Result};
use crate::model::{decode_span, predict_span, ModelState};

pub const OVERALL_ROW: &str = "__overall__";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub log_ppl: f64,
    pub bleu1: f64,
    pub bleu2: f64,
}

/// Test-set scores of one model snapshot. `step` counts optimizer updates.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub step: usize,
    pub per_task: BTreeMap<TaskId, Scores>,
    pub overall: Scores,
}

/// Per-instance log-PPL and span BLEU, averaged per task and over all
/// instances.
pub fn evaluate_checkpoint(
    state: &ModelState,
    test: &BTreeMap<TaskId, Vec<Instance>>,
    step: usize,
    zero_visual: bool,
) -> Result<CheckpointRecord> {
    let mut per_task = BTreeMap::new();
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (task, insts) in test {
        if insts.is_empty() {
            continue;
        }
        let mut t = [0.0; 3];
        for inst in insts {
            let rows = predict_span(state, inst, zero_visual)?;
            let hyp = decode_span(&rows);
            let s = [
                log_perplexity(&rows, &inst.label_tokens),
                bleu_n(&hyp, &inst.label_tokens, 1),
                bleu_n(&hyp, &inst.label_tokens, 2),
            ];
            for k in 0..3 {
                t[k] += s[k];
                sum[k] += s[k];
            }
        }
        n += insts.len();
        let m = insts.len() as f64;
        per_task.insert(
            task.clone(),
            Scores {
                log_ppl: t[0] / m,
                bleu1: t[1] / m,
                bleu2: t[2] / m,
            },
        );
    }
    let m = n.max(1) as f64;
    Ok(CheckpointRecord {
        step,
        per_task,
        overall: Scores {
            log_ppl: sum[0] / m,
            bleu1: sum[1] / m,
            bleu2: sum[2] / m,
        },
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    step: usize,
    task_id: String,
    log_ppl: f64,
    bleu1: f64,
    bleu2: f64,
}

/// `step,task_id,log_ppl,bleu1,bleu2`; each checkpoint ends with an
/// overall row.
pub fn write_records_csv<W: Write>(out: W, records: &[CheckpointRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        let rows = r
            .per_task
            .iter()
            .map(|(t, s)| (t.as_str(), s))
            .chain(std::iter::once((OVERALL_ROW, &r.overall)));
        for (task, s) in rows {
            w.serialize(CsvRow {
                step: r.step,
                task_id: task.to_string(),
                log_ppl: s.log_ppl,
                bleu1: s.bleu1,
                bleu2: s.bleu2,
            })?;
        }
    }
    w.flush().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<CheckpointRecord>> {
    let mut out: Vec<CheckpointRecord> = Vec::new();
    let mut rdr = csv::Reader::from_reader(input);
    for row in rdr.deserialize() {
        let row: CsvRow = row?;
        let s = Scores {
            log_ppl: row.log_ppl,
            bleu1: row.bleu1,
            bleu2: row.bleu2,
        };
        if out.last().is_none_or(|r| r.step != row.step) {
            out.push(CheckpointRecord {
                step: row.step,
                per_task: BTreeMap::new(),
                overall: s,
            });
        }
        let rec = out.last_mut().unwrap();
        if row.task_id == OVERALL_ROW {
            rec.overall = s;
        } else {
            rec.per_task.insert(TaskId::new(row.task_id), s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, group_by_task, SyntheticSpec};
    use crate::model::EncoderConfig;

    fn setup() -> (ModelState, Vec<Instance>) {
        let spec = SyntheticSpec {
            train_per_composition: 1,
            test_per_composition: 1,
            ..SyntheticSpec::default()
        };
        let corpus = generate_synthetic_corpus(&spec, 0).unwrap();
        let cfg = EncoderConfig {
            vocab_size: 100,
            hidden: 16,
            layers: 1,
            heads: 2,
            ffn: 32,
            ..EncoderConfig::default()
        };
        assert!(corpus.vocab.len() <= 100);
        (ModelState::new(cfg).unwrap(), corpus.test)
    }

    #[test]
    fn fresh_model_scores_near_ln_v() {
        let (state, test) = setup();
        let rec = evaluate_checkpoint(&state, &group_by_task(&test), 0, false).unwrap();
        assert!(
            (rec.overall.log_ppl - 100f64.ln()).abs() < 0.1,
            "{}",
            rec.overall.log_ppl
        );
        assert_eq!(rec.per_task.len(), 20);
    }

    #[test]
    fn single_task_matches_overall() {
        let (state, test) = setup();
        let grouped = group_by_task(&test);
        let (task, insts) = grouped.into_iter().next().unwrap();
        let one = BTreeMap::from([(task.clone(), insts)]);
        let rec = evaluate_checkpoint(&state, &one, 3, false).unwrap();
        assert_eq!(rec.per_task[&task], rec.overall);
    }

    #[test]
    fn evaluation_is_repeatable_and_csv_round_trips() {
        let (state, test) = setup();
        let grouped = group_by_task(&test);
        let a = evaluate_checkpoint(&state, &grouped, 5, false).unwrap();
        let b = evaluate_checkpoint(&state, &grouped, 5, false).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &[a.clone(), b]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,task_id,log_ppl,bleu1,bleu2\n"));
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], a);
    }
}
