//! Perplexity, span BLEU, checkpoint evaluation, forgetting and the
//! seen-versus-novel composition report.

pub mod composition;
pub mod forgetting;
pub mod record;
pub mod scores;

pub use composition::{composition_report, CompositionReport, KindReport};
pub use forgetting::{forgetting_metric, ForgettingReport, TaskForgetting, WINDOW_FRACTION};
pub use record::{
    evaluate_checkpoint, read_records_csv, write_records_csv, CheckpointRecord, Scores, OVERALL_ROW,
};
pub use scores::{bleu_n, log_perplexity, PROB_FLOOR};
