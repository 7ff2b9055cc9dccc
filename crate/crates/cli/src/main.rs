use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use drift_core::corpus::{split::format_held_out, write_jsonl};
use drift_core::experiment::{
    checks, compare_methods, prepare_data, prepare_stream, run_experiment, write_comparison_csv,
    ExperimentConfig,
};
use drift_core::stream::{write_schedule_csv, write_slot_csv};
use drift_core::trainers::Method;

#[derive(Parser)]
#[command(
    name = "drift-bench",
    version,
    about = "Task-free online continual learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the prepared corpus splits as JSONL.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        /// Synthetic generation seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the task schedule and slot assignment of the stream.
    BuildStream {
        #[command(flatten)]
        common: Common,
        /// Stream seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train and evaluate one method over the configured seeds.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run this seed only.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: Option<String>,
        /// Replay memory capacity.
        #[arg(long)]
        memory: Option<usize>,
        /// Seeds trained in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Tabulate finished runs that share a corpus and stream.
    Compare {
        /// Run directories (each holding summary.json).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite.
    Check,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn gen_corpus(common: Common, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(&common)?;
    if let Some(s) = seed {
        cfg.corpus.seed = s;
    }
    cfg.validate()?;
    let data = prepare_data(&cfg.corpus, &cfg.model)?;
    create_dir(&cfg.out)?;
    for (name, insts) in [
        ("train", &data.train),
        ("val", &data.val),
        ("test", &data.test),
        ("compositional_test", &data.compositional_test),
    ] {
        write_jsonl(&cfg.out.join(format!("{name}.jsonl")), insts, &data.vocab)?;
    }
    fs::write(
        cfg.out.join("vocab.json"),
        serde_json::to_vec_pretty(&data.vocab)?,
    )?;
    fs::write(
        cfg.out.join("held_out.tsv"),
        format_held_out(&data.held_out),
    )?;
    for w in &data.warnings {
        log::warn!("{w}");
    }
    println!(
        "wrote {} train, {} val, {} test, {} compositional-test instances to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.compositional_test.len(),
        cfg.out.display()
    );
    Ok(())
}

fn build_stream(common: Common, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(&common)?;
    if let Some(s) = seed {
        cfg.stream.seed = s;
    }
    cfg.validate()?;
    let data = prepare_data(&cfg.corpus, &cfg.model)?;
    let (schedule, stream) = prepare_stream(&data, &cfg.stream)?;
    create_dir(&cfg.out)?;
    write_schedule_csv(&cfg.out.join("schedule.csv"), &schedule)?;
    write_slot_csv(&cfg.out.join("stream.csv"), &stream)?;
    println!(
        "{} tasks, {} instances, {} batches -> {}",
        schedule.len(),
        stream.len(),
        stream.num_batches(),
        cfg.out.display()
    );
    Ok(())
}

fn run(
    common: Common,
    seed: Option<u64>,
    method: Option<String>,
    memory: Option<usize>,
    jobs: usize,
) -> Result<()> {
    let mut cfg = load_config(&common)?;
    if let Some(m) = method {
        cfg.trainer.method = m.parse::<Method>()?;
    }
    if let Some(m) = memory {
        cfg.trainer.memory_capacity = m;
    }
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let result = run_experiment(&cfg, jobs)?;
    let s = &result.summary;
    println!("{}", result.dir.display());
    println!(
        "{} (memory {}): final log-PPL {:.4} ± {:.4}, BLEU-1 {:.4}, BLEU-2 {:.4}, f_avg {:.4} ± {:.4} over {} seed(s)",
        s.method,
        s.memory,
        s.mean.final_log_ppl,
        s.std.final_log_ppl,
        s.mean.bleu1,
        s.mean.bleu2,
        s.mean.f_avg,
        s.std.f_avg,
        s.seeds.len()
    );
    Ok(())
}

fn compare(runs: Vec<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let table = compare_methods(&runs)?;
    let mut csv = Vec::new();
    write_comparison_csv(&mut csv, &table)?;
    if let Some(dir) = out {
        create_dir(&dir)?;
        fs::write(dir.join("comparison.csv"), &csv)?;
        fs::write(
            dir.join("comparison.json"),
            serde_json::to_vec_pretty(&table)?,
        )?;
    }
    print!("{}", String::from_utf8(csv)?);
    Ok(())
}

fn check() -> Result<bool> {
    let outcomes = checks::run_all()?;
    for o in &outcomes {
        println!(
            "{} {}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<drift_core::Error>() {
        Some(drift_core::Error::Config(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus { common, seed } => gen_corpus(common, seed),
        Command::BuildStream { common, seed } => build_stream(common, seed),
        Command::Run {
            common,
            seed,
            method,
            memory,
            jobs,
        } => run(common, seed, method, memory, jobs),
        Command::Compare { runs, out } => compare(runs, out),
        Command::Check => match check() {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
