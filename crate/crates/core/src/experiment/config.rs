use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CompositionPair, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::EncoderConfig;
use crate::stream::OrderPolicy;
use crate::trainers::TrainerConfig;

/// Where instances come from: JSONL files, or a synthetic spec (the
/// default one when neither is given).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub synthetic: Option<SyntheticSpec>,
    /// Generation seed for the synthetic corpus.
    pub seed: u64,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    /// Tab-separated `modifier noun kind` rows.
    pub held_out: Option<PathBuf>,
    pub held_out_pairs: Vec<CompositionPair>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            synthetic: None,
            seed: 0,
            train: None,
            val: None,
            test: None,
            synonyms: None,
            held_out: None,
            held_out_pairs: Vec::new(),
        }
    }
}

impl CorpusConfig {
    /// The synthetic spec in effect, if the corpus is synthetic.
    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match (&self.synthetic, &self.train) {
            (Some(s), _) => Some(s.clone()),
            (None, None) => Some(SyntheticSpec::default()),
            (None, Some(_)) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub order: OrderPolicy,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            order: OrderPolicy::Random { seed: 0 },
            seed: 0,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub corpus: CorpusConfig,
    pub stream: StreamConfig,
    /// `vocab_size = 0` takes the corpus vocabulary size.
    pub model: EncoderConfig,
    pub trainer: TrainerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out: PathBuf::from("runs"),
            seeds: vec![0, 1, 2],
            corpus: CorpusConfig::default(),
            stream: StreamConfig::default(),
            model: EncoderConfig::default(),
            trainer: TrainerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Makes relative corpus paths relative to `base`.
    fn resolve_paths(&mut self, base: &Path) {
        let c = &mut self.corpus;
        for p in [
            &mut c.train,
            &mut c.val,
            &mut c.test,
            &mut c.synonyms,
            &mut c.held_out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        match (&c.synthetic, &c.train) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "corpus: set either `synthetic` or `train`, not both".into(),
                ))
            }
            (None, Some(_)) if c.test.is_none() => {
                return Err(Error::Config(
                    "corpus: `test` is required with `train`".into(),
                ))
            }
            _ => {}
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if let Some(spec) = c.synthetic_spec() {
            if spec.feature_dim != self.model.visual_dim {
                return Err(Error::Config(format!(
                    "model.visual_dim ({}) must equal corpus feature_dim ({})",
                    self.model.visual_dim, spec.feature_dim
                )));
            }
        }
        self.trainer.validate(self.stream.batch_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_anywhere_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[trainer]\nmethd = \"er\"").is_err());
        assert!(ExperimentConfig::from_toml_str("[model]\nhiden = 3").is_err());
    }

    #[test]
    fn invalid_method_names_the_valid_ones() {
        let err = ExperimentConfig::from_toml_str("[trainer]\nmethod = \"sgd\"")
            .unwrap_err()
            .to_string();
        assert!(err.contains("vanilla"), "{err}");
    }

    #[test]
    fn held_out_pairs_parse_inline() {
        let cfg = ExperimentConfig::from_toml_str(
            "[corpus]\nheld_out_pairs = [{ modifier = \"black\", noun = \"cat\", kind = \"noun-adj\" }]",
        )
        .unwrap();
        assert_eq!(cfg.corpus.held_out_pairs[0].label(), "black cat");
    }

    #[test]
    fn corpus_source_must_be_unique() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.corpus.synthetic_spec(), Some(SyntheticSpec::default()));
        cfg.corpus.train = Some("a.jsonl".into());
        assert_eq!(cfg.corpus.synthetic_spec(), None);
        assert!(cfg.validate().is_err());
        cfg.corpus.test = Some("b.jsonl".into());
        cfg.validate().unwrap();
        cfg.corpus.synthetic = Some(SyntheticSpec::default());
        assert!(cfg.validate().is_err());
    }
}
