use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::record::CheckpointRecord;
use crate::corpus::TaskId;
use crate::error::{Error, Result};

/// Fraction of a task's training instances that must have been visited
/// before its best checkpoint is fixed.
pub const WINDOW_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskForgetting {
    pub window_end: usize,
    pub reference_step: usize,
    pub reference_log_ppl: f64,
    pub final_log_ppl: f64,
    pub forgetting: f64,
    /// No checkpoint fell inside the window; the first one after it was used.
    pub outside_window: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub per_task: BTreeMap<TaskId, TaskForgetting>,
    pub f_avg: f64,
}

/// Final per-task log-PPL minus the best one reached by the end of the
/// task's window. Candidates are `records` plus `final_record`.
pub fn forgetting_metric(
    records: &[CheckpointRecord],
    task_windows: &BTreeMap<TaskId, usize>,
    final_record: &CheckpointRecord,
) -> Result<ForgettingReport> {
    let mut candidates: Vec<&CheckpointRecord> = records.iter().collect();
    if records.last().is_none_or(|r| r.step != final_record.step) {
        candidates.push(final_record);
    }
    let mut per_task = BTreeMap::new();
    for (task, &window_end) in task_windows {
        let Some(fin) = final_record.per_task.get(task) else {
            continue;
        };
        let scored = candidates
            .iter()
            .filter_map(|r| r.per_task.get(task).map(|s| (r.step, s.log_ppl)));
        let mut best: Option<(usize, f64)> = None;
        let mut after: Option<(usize, f64)> = None;
        for (step, v) in scored {
            if step <= window_end {
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((step, v));
                }
            } else if after.is_none_or(|(s, _)| step < s) {
                after = Some((step, v));
            }
        }
        let outside_window = best.is_none();
        let (reference_step, reference_log_ppl) = best
            .or(after)
            .ok_or_else(|| Error::Mismatch(format!("no checkpoint scores task {task}")))?;
        per_task.insert(
            task.clone(),
            TaskForgetting {
                window_end,
                reference_step,
                reference_log_ppl,
                final_log_ppl: fin.log_ppl,
                forgetting: fin.log_ppl - reference_log_ppl,
                outside_window,
            },
        );
    }
    let f_avg = if per_task.is_empty() {
        0.0
    } else {
        per_task.values().map(|t| t.forgetting).sum::<f64>() / per_task.len() as f64
    };
    Ok(ForgettingReport { per_task, f_avg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Scores;
    use proptest::prelude::*;

    fn rec(step: usize, vals: &[(&str, f64)]) -> CheckpointRecord {
        let s = |v| Scores {
            log_ppl: v,
            bleu1: 0.0,
            bleu2: 0.0,
        };
        CheckpointRecord {
            step,
            per_task: vals.iter().map(|&(t, v)| (TaskId::new(t), s(v))).collect(),
            overall: s(0.0),
        }
    }

    fn windows(w: &[(&str, usize)]) -> BTreeMap<TaskId, usize> {
        w.iter().map(|&(t, s)| (TaskId::new(t), s)).collect()
    }

    #[test]
    fn forgetting_after_the_window() {
        let recs = [rec(1, &[("a", 5.0)]), rec(2, &[("a", 3.0)])];
        let r = forgetting_metric(&recs, &windows(&[("a", 2)]), &rec(3, &[("a", 4.0)])).unwrap();
        assert!((r.f_avg - 1.0).abs() < 1e-12);
        assert_eq!(r.per_task[&TaskId::new("a")].reference_step, 2);
    }

    #[test]
    fn later_improvement_is_negative() {
        let recs = [rec(1, &[("a", 5.0)]), rec(2, &[("a", 3.0)])];
        let r = forgetting_metric(&recs, &windows(&[("a", 2)]), &rec(3, &[("a", 2.0)])).unwrap();
        assert!((r.f_avg + 1.0).abs() < 1e-12);
    }

    #[test]
    fn lone_final_checkpoint_gives_zero() {
        let fin = rec(4, &[("a", 2.5)]);
        let r = forgetting_metric(&[], &windows(&[("a", 4)]), &fin).unwrap();
        assert_eq!(r.f_avg, 0.0);
    }

    #[test]
    fn empty_window_uses_first_later_checkpoint() {
        let recs = [rec(5, &[("a", 4.0)]), rec(10, &[("a", 3.0)])];
        let r = forgetting_metric(&recs, &windows(&[("a", 2)]), &rec(15, &[("a", 3.5)])).unwrap();
        let t = &r.per_task[&TaskId::new("a")];
        assert!(t.outside_window);
        assert_eq!(t.reference_step, 5);
        assert!((r.f_avg + 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn f_avg_is_mean_and_non_negative_when_final_is_best(
            vals in prop::collection::vec(prop::collection::vec(0.5f64..6.0, 3), 1..8),
        ) {
            let tasks = ["a", "b", "c"];
            let recs: Vec<CheckpointRecord> = vals
                .iter()
                .enumerate()
                .map(|(i, v)| rec(i + 1, &[("a", v[0]), ("b", v[1]), ("c", v[2])]))
                .collect();
            let fin = rec(vals.len() + 1, &[("a", 0.1), ("b", 0.2), ("c", 0.3)]);
            let w = windows(&[("a", vals.len() + 1), ("b", vals.len() + 1), ("c", vals.len() + 1)]);
            let r = forgetting_metric(&recs, &w, &fin).unwrap();
            let mean = tasks.iter().map(|t| r.per_task[&TaskId::new(*t)].forgetting).sum::<f64>() / 3.0;
            prop_assert!((r.f_avg - mean).abs() < 1e-12);
            prop_assert!(r.f_avg >= 0.0);
        }
    }
}
