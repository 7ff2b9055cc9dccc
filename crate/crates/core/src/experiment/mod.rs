//! Experiment orchestration: configuration, data and stream preparation,
//! multi-seed runs with on-disk artifacts, and run comparison.

pub mod checks;
pub mod compare;
pub mod config;
pub mod run;

pub use compare::{
    compare_methods, compare_summaries, write_comparison_csv, ComparisonRow, ComparisonTable,
};
pub use config::{CorpusConfig, ExperimentConfig, StreamConfig};
pub use run::{
    experiment_dir, load_summary, memory_sqrt_kl, model_config, prepare_data, prepare_stream,
    run_experiment, run_seed, seed_dir, summarize, write_seed_artifacts, ExperimentResult,
    ExperimentSummary, Headline, PreparedData, SeedMetrics, SeedRun,
};
