use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::{MirVariant, DEFAULT_FORGET_DECAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vanilla,
    Er,
    Agem,
    ErMir,
    ErMirMax,
    Offline,
    OfflineOnePass,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Vanilla,
        Method::Er,
        Method::Agem,
        Method::ErMir,
        Method::ErMirMax,
        Method::Offline,
        Method::OfflineOnePass,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Er => "er",
            Method::Agem => "agem",
            Method::ErMir => "er_mir",
            Method::ErMirMax => "er_mir_max",
            Method::Offline => "offline",
            Method::OfflineOnePass => "offline_one_pass",
        }
    }

    pub fn uses_memory(self) -> bool {
        matches!(
            self,
            Method::Er | Method::Agem | Method::ErMir | Method::ErMirMax
        )
    }

    pub fn is_offline(self) -> bool {
        matches!(self, Method::Offline | Method::OfflineOnePass)
    }

    pub fn mir_variant(self) -> Option<MirVariant> {
        match self {
            Method::ErMir => Some(MirVariant::Mean),
            Method::ErMirMax => Some(MirVariant::Max),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!(
                    "unknown method `{s}`; valid methods: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WritePolicy {
    #[default]
    Reservoir,
    BalancedSqrt,
    BalancedForget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub method: Method,
    pub memory_capacity: usize,
    /// Replay examples per step; the stream batch size when unset.
    pub replay_batch_size: Option<usize>,
    pub agem_ref_size: usize,
    pub mir_candidate_size: usize,
    pub epochs: usize,
    /// Optimizer steps between checkpoint evaluations.
    pub eval_interval: usize,
    pub zero_visual: bool,
    pub write_policy: WritePolicy,
    pub forget_decay: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            method: Method::Er,
            memory_capacity: 1000,
            replay_batch_size: None,
            agem_ref_size: 64,
            mir_candidate_size: 64,
            epochs: 1,
            eval_interval: 20,
            zero_visual: false,
            write_policy: WritePolicy::Reservoir,
            forget_decay: DEFAULT_FORGET_DECAY,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn replay_size(&self, batch_size: usize) -> usize {
        self.replay_batch_size.unwrap_or(batch_size)
    }

    pub fn validate(&self, batch_size: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive".into());
        }
        if !(self.forget_decay > 0.0 && self.forget_decay < 1.0) {
            return bad(format!(
                "forget_decay must be in (0, 1), got {}",
                self.forget_decay
            ));
        }
        let m = self.memory_capacity;
        let r = self.replay_size(batch_size);
        match self.method {
            Method::Er | Method::ErMir | Method::ErMirMax if m == 0 => {
                return bad(format!("{} needs memory_capacity > 0", self.method))
            }
            Method::Er if m < r => {
                return bad(format!("er needs memory_capacity ({m}) >= replay batch size ({r})"))
            }
            Method::ErMir | Method::ErMirMax if self.mir_candidate_size > m || r > self.mir_candidate_size => {
                return bad(format!(
                    "{} needs replay batch size ({r}) <= mir_candidate_size ({}) <= memory_capacity ({m})",
                    self.method, self.mir_candidate_size
                ))
            }
            Method::Agem if self.agem_ref_size == 0 || self.agem_ref_size > m => {
                return bad(format!(
                    "agem needs 0 < agem_ref_size ({}) <= memory_capacity ({m})",
                    self.agem_ref_size
                ))
            }
            Method::Offline if self.epochs == 0 => return bad("offline needs epochs >= 1".into()),
            _ => {}
        }
        if r == 0 && self.method.uses_memory() {
            return bad("replay batch size must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        let err = "sgd".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("er_mir_max") && err.contains("vanilla"));
    }

    #[test]
    fn er_without_memory_is_rejected() {
        let cfg = TrainerConfig {
            memory_capacity: 0,
            ..TrainerConfig::default()
        };
        assert!(cfg.validate(32).is_err());
        let vanilla = TrainerConfig {
            method: Method::Vanilla,
            ..cfg
        };
        assert!(vanilla.validate(32).is_ok());
    }

    #[test]
    fn method_specific_bounds() {
        let agem = TrainerConfig {
            method: Method::Agem,
            memory_capacity: 50,
            ..TrainerConfig::default()
        };
        assert!(agem.validate(32).is_err());
        let mir = TrainerConfig {
            method: Method::ErMir,
            mir_candidate_size: 16,
            ..TrainerConfig::default()
        };
        assert!(mir.validate(32).is_err());
        assert!(TrainerConfig::default().validate(32).is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<TrainerConfig>("method = \"er\"\nbogus = 1").is_err());
        let cfg: TrainerConfig =
            toml::from_str("method = \"agem\"\nmemory_capacity = 100").unwrap();
        assert_eq!(cfg.method, Method::Agem);
        assert_eq!(cfg.agem_ref_size, 64);
    }
}
