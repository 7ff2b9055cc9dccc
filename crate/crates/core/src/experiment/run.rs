use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{CorpusConfig, ExperimentConfig, StreamConfig};
use crate::corpus::{
    build_compositional_split, generate_synthetic_corpus, group_by_task, ingest_jsonl,
    load_held_out, CompositionPair, IngestOptions, Instance, Lemmatizer, SynonymTable, TaskId,
    VocabMode, Vocabulary,
};
use crate::error::{Error, Result};
use crate::metrics::{
    composition_report, evaluate_checkpoint, forgetting_metric, write_records_csv,
    CheckpointRecord, CompositionReport, ForgettingReport, WINDOW_FRACTION,
};
use crate::model::{checkpoint, EncoderConfig, ModelState};
use crate::replay::{
    smoothed_kl, target_distribution, BalancePolicy, ForgettingTracker, ReplayMemory,
};
use crate::stream::{
    build_stream, propose_schedule, write_schedule_csv, write_slot_csv, Stream, TaskSchedule,
};
use crate::trainers::{run_method, RunOutput};

/// Corpus after held-out filtering, shared by every seed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
    pub compositional_test: Vec<Instance>,
    pub held_out: Vec<CompositionPair>,
    pub lemmatizer: Lemmatizer,
    pub warnings: Vec<String>,
}

impl PreparedData {
    pub fn test_by_task(&self) -> BTreeMap<TaskId, Vec<Instance>> {
        group_by_task(&self.test)
    }
}

pub fn prepare_data(cfg: &CorpusConfig, model: &EncoderConfig) -> Result<PreparedData> {
    let lemmatizer = Lemmatizer::default();
    let (vocab, train, val, test) = if let Some(spec) = cfg.synthetic_spec() {
        let c = generate_synthetic_corpus(&spec, cfg.seed)?;
        (c.vocab, c.train, c.val, c.test)
    } else {
        let synonyms = cfg
            .synonyms
            .as_deref()
            .map(SynonymTable::load)
            .transpose()?;
        let mut vocab = Vocabulary::new();
        let mut opts = IngestOptions {
            feature_dim: model.visual_dim,
            max_objects: model.max_objects,
            vocab_mode: VocabMode::Grow,
            synonyms: synonyms.as_ref(),
            lemmatizer: &lemmatizer,
        };
        let train_path = cfg
            .train
            .as_deref()
            .ok_or_else(|| Error::Config("corpus.train missing".into()))?;
        let train = ingest_jsonl(train_path, &mut vocab, &opts)?;
        opts.vocab_mode = VocabMode::Frozen;
        let val = match &cfg.val {
            Some(p) => ingest_jsonl(p, &mut vocab, &opts)?,
            None => Vec::new(),
        };
        let test_path = cfg
            .test
            .as_deref()
            .ok_or_else(|| Error::Config("corpus.test missing".into()))?;
        let test = ingest_jsonl(test_path, &mut vocab, &opts)?;
        (vocab, train, val, test)
    };
    let mut held_out = cfg.held_out_pairs.clone();
    if let Some(p) = &cfg.held_out {
        held_out.extend(load_held_out(p)?);
    }
    let split = build_compositional_split(train, val, test, &held_out, &vocab, &lemmatizer);
    Ok(PreparedData {
        vocab,
        train: split.train,
        val: split.val,
        test: split.test,
        compositional_test: split.compositional_test,
        held_out,
        lemmatizer,
        warnings: split.warnings,
    })
}

pub fn prepare_stream(data: &PreparedData, cfg: &StreamConfig) -> Result<(TaskSchedule, Stream)> {
    let pools = group_by_task(&data.train);
    let schedule = propose_schedule(&pools, cfg.order)?;
    let stream = build_stream(&schedule, &pools, cfg.seed, cfg.batch_size)?;
    Ok((schedule, stream))
}

/// Model config for one seed: vocabulary size filled in, seed applied.
pub fn model_config(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
) -> Result<EncoderConfig> {
    let mut m = cfg.model.clone();
    if m.vocab_size == 0 {
        m.vocab_size = data.vocab.len();
    } else if m.vocab_size < data.vocab.len() {
        return Err(Error::Config(format!(
            "model.vocab_size ({}) is smaller than the corpus vocabulary ({})",
            m.vocab_size,
            data.vocab.len()
        )));
    }
    m.seed = seed;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub final_log_ppl: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub f_avg: f64,
    /// KL of the final memory's word distribution to the square-root target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_sqrt_kl: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub metrics: SeedMetrics,
    pub output: RunOutput,
    pub forgetting: ForgettingReport,
    pub composition: CompositionReport,
}

impl SeedRun {
    /// Periodic records followed by the final one (unless it repeats the last).
    pub fn all_records(&self) -> Vec<CheckpointRecord> {
        let mut v = self.output.records.clone();
        if v.last()
            .is_none_or(|r| r.step != self.output.final_record.step)
        {
            v.push(self.output.final_record.clone());
        }
        v
    }
}

pub fn memory_sqrt_kl(memory: &ReplayMemory) -> f64 {
    let target = target_distribution(memory, BalancePolicy::Sqrt, &ForgettingTracker::default());
    smoothed_kl(memory.word_counts_memory(), &target)
}

pub fn run_seed(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    stream: &Stream,
    seed: u64,
) -> Result<SeedRun> {
    let state = ModelState::new(model_config(cfg, data, seed)?)?;
    let mut trainer = cfg.trainer.clone();
    trainer.seed = seed;
    let test = data.test_by_task();
    let zv = trainer.zero_visual;
    let mut eval = |s: &ModelState, step: usize| evaluate_checkpoint(s, &test, step, zv);
    let output = run_method(&trainer, stream, state, &mut eval)?;
    let windows = stream.task_windows(WINDOW_FRACTION);
    let forgetting = forgetting_metric(&output.records, &windows, &output.final_record)?;
    let composition = composition_report(
        &output.state,
        &data.test,
        &data.compositional_test,
        &data.held_out,
        &data.vocab,
        &data.lemmatizer,
        zv,
    )?;
    let fin = &output.final_record.overall;
    let metrics = SeedMetrics {
        seed,
        final_log_ppl: fin.log_ppl,
        bleu1: fin.bleu1,
        bleu2: fin.bleu2,
        f_avg: forgetting.f_avg,
        memory_sqrt_kl: output.memory.as_ref().map(memory_sqrt_kl),
    };
    Ok(SeedRun {
        metrics,
        output,
        forgetting,
        composition,
    })
}

pub const CONFIG_FILE: &str = "config.toml";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const SLOTS_FILE: &str = "stream.csv";
pub const CHECKPOINTS_FILE: &str = "checkpoints.csv";
pub const FORGETTING_FILE: &str = "forgetting.json";
pub const COMPOSITION_FILE: &str = "composition.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const SUMMARY_FILE: &str = "summary.json";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn write_seed_artifacts(
    dir: &Path,
    cfg: &ExperimentConfig,
    data: &PreparedData,
    schedule: &TaskSchedule,
    stream: &Stream,
    run: &SeedRun,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut echoed = cfg.clone();
    echoed.seeds = vec![run.metrics.seed];
    write_file(&dir.join(CONFIG_FILE), echoed.to_toml_string()?.as_bytes())?;
    write_schedule_csv(&dir.join(SCHEDULE_FILE), schedule)?;
    write_slot_csv(&dir.join(SLOTS_FILE), stream)?;
    let mut csv = Vec::new();
    write_records_csv(&mut csv, &run.all_records())?;
    write_file(&dir.join(CHECKPOINTS_FILE), &csv)?;
    write_json(&dir.join(FORGETTING_FILE), &run.forgetting)?;
    write_json(&dir.join(COMPOSITION_FILE), &run.composition)?;
    checkpoint::save(&run.output.state, &dir.join(MODEL_FILE))?;
    if let Some(m) = &run.output.memory {
        m.dump(dir, "memory", &data.vocab)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub final_log_ppl: f64,
    pub bleu1: f64,
    pub bleu2: f64,
    pub f_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub method: String,
    pub memory: usize,
    pub write_policy: String,
    pub zero_visual: bool,
    /// Hash of the corpus section; runs are comparable only when equal.
    pub corpus_fingerprint: String,
    pub stream_seed: u64,
    pub seeds: Vec<SeedMetrics>,
    pub mean: Headline,
    /// Sample standard deviation; zero for a single seed.
    pub std: Headline,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(cfg: &ExperimentConfig, seeds: Vec<SeedMetrics>) -> Result<ExperimentSummary> {
    let col = |f: fn(&SeedMetrics) -> f64| mean_std(&seeds.iter().map(f).collect::<Vec<_>>());
    let (l, b1, b2, f) = (
        col(|s| s.final_log_ppl),
        col(|s| s.bleu1),
        col(|s| s.bleu2),
        col(|s| s.f_avg),
    );
    Ok(ExperimentSummary {
        method: cfg.trainer.method.to_string(),
        memory: if cfg.trainer.method.uses_memory() {
            cfg.trainer.memory_capacity
        } else {
            0
        },
        write_policy: serde_json::to_value(cfg.trainer.write_policy)?
            .as_str()
            .unwrap_or_default()
            .to_string(),
        zero_visual: cfg.trainer.zero_visual,
        corpus_fingerprint: corpus_fingerprint(&cfg.corpus)?,
        stream_seed: cfg.stream.seed,
        mean: Headline {
            final_log_ppl: l.0,
            bleu1: b1.0,
            bleu2: b2.0,
            f_avg: f.0,
        },
        std: Headline {
            final_log_ppl: l.1,
            bleu1: b1.1,
            bleu2: b2.1,
            f_avg: f.1,
        },
        seeds,
    })
}

fn digest_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub fn corpus_fingerprint(corpus: &CorpusConfig) -> Result<String> {
    Ok(digest_hex(&[serde_json::to_string(corpus)?.as_bytes()]))
}

/// `<out>/<method>-m<M>-<hash>`, the hash covering the whole config minus
/// the output directory and seed list.
pub fn experiment_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let mut keyed = cfg.clone();
    keyed.out = PathBuf::new();
    keyed.seeds.clear();
    let hash = digest_hex(&[keyed.to_toml_string()?.as_bytes()]);
    Ok(cfg.out.join(format!(
        "{}-m{}-{}",
        cfg.trainer.method,
        cfg.trainer.memory_capacity,
        &hash[..12]
    )))
}

pub fn seed_dir(experiment_dir: &Path, seed: u64) -> PathBuf {
    experiment_dir.join(format!("seed-{seed}"))
}

pub struct ExperimentResult {
    pub dir: PathBuf,
    pub summary: ExperimentSummary,
}

/// Runs every seed (up to `jobs` at once), writes per-seed artifacts and
/// `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = prepare_data(&cfg.corpus, &cfg.model)?;
    let (schedule, stream) = prepare_stream(&data, &cfg.stream)?;
    let dir = experiment_dir(cfg)?;
    let jobs = jobs.max(1);
    let mut metrics: Vec<Option<Result<SeedMetrics>>> =
        (0..cfg.seeds.len()).map(|_| None).collect();
    for chunk in cfg
        .seeds
        .iter()
        .enumerate()
        .collect::<Vec<_>>()
        .chunks(jobs)
    {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&(i, &seed)| {
                    let (data, stream, schedule, dir) = (&data, &stream, &schedule, &dir);
                    let h = s.spawn(move || -> Result<SeedMetrics> {
                        log::info!("{} seed {seed}: training", cfg.trainer.method);
                        let run = run_seed(cfg, data, stream, seed)?;
                        write_seed_artifacts(
                            &seed_dir(dir, seed),
                            cfg,
                            data,
                            schedule,
                            stream,
                            &run,
                        )?;
                        log::info!(
                            "{} seed {seed}: final log-PPL {:.4}, f_avg {:.4}",
                            cfg.trainer.method,
                            run.metrics.final_log_ppl,
                            run.metrics.f_avg
                        );
                        Ok(run.metrics)
                    });
                    (i, h)
                })
                .collect();
            for (i, h) in handles {
                metrics[i] = Some(
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Config("worker panicked".into()))),
                );
            }
        });
    }
    let seeds = metrics
        .into_iter()
        .map(|m| m.expect("every seed ran"))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(cfg, seeds)?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(ExperimentResult { dir, summary })
}

pub fn load_summary(dir: &Path) -> Result<ExperimentSummary> {
    let path = dir.join(SUMMARY_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_of_known_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn directory_depends_on_config_not_seeds() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seeds = vec![9];
        b.out = "elsewhere".into();
        assert_eq!(
            experiment_dir(&a).unwrap().file_name(),
            experiment_dir(&b).unwrap().file_name()
        );
        let mut c = a.clone();
        c.trainer.eval_interval += 1;
        assert_ne!(experiment_dir(&a).unwrap(), experiment_dir(&c).unwrap());
    }
}
