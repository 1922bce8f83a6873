//! Run configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baselines::{ComaConfig, RelaxationConfig};
use crate::deterministic::DeterministicConfig;
use crate::envs::EnvConfig;
use crate::error::{ensure, Result};
use crate::stochastic::StochasticConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    StochasticDop,
    DeterministicDop,
    Coma,
    Maddpg,
    /// Stochastic DOP trained only with on-policy critic targets.
    OnpolicyDop,
    /// Stochastic DOP trained only with tree-backup targets.
    OffpolicyDop,
    /// Stochastic DOP with sampled joint-action expectations.
    CommonTbDop,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::StochasticDop => "stochastic_dop",
            Algorithm::DeterministicDop => "deterministic_dop",
            Algorithm::Coma => "coma",
            Algorithm::Maddpg => "maddpg",
            Algorithm::OnpolicyDop => "onpolicy_dop",
            Algorithm::OffpolicyDop => "offpolicy_dop",
            Algorithm::CommonTbDop => "common_tb_dop",
        }
    }
}

/// One experiment: an algorithm on an environment over a list of seeds.
///
/// Only the section matching the algorithm is read; the others keep their
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub env: EnvConfig,
    /// Overrides the environment's discount factor.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub stochastic: StochasticConfig,
    #[serde(default)]
    pub deterministic: DeterministicConfig,
    #[serde(default)]
    pub coma: ComaConfig,
    /// Gumbel-Softmax settings; required for MADDPG on discrete actions.
    #[serde(default)]
    pub relaxation: Option<RelaxationConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    #[serde(default = "default_metric_period")]
    pub metric_period: u64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Resamples per gradient-variance measurement; 0 disables it.
    #[serde(default = "default_variance_samples")]
    pub variance_samples: usize,
    /// Fill the wall-clock column. Off by default so reruns are bit-identical.
    #[serde(default)]
    pub wall_clock: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    (0..12).collect()
}

fn default_metric_period() -> u64 {
    1000
}

fn default_eval_episodes() -> usize {
    1
}

fn default_variance_samples() -> usize {
    30
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    /// A config with every optional key at its default.
    pub fn new(algorithm: Algorithm, env: EnvConfig, total_steps: u64) -> Self {
        Self {
            algorithm,
            env,
            gamma: None,
            stochastic: StochasticConfig::default(),
            deterministic: DeterministicConfig::default(),
            coma: ComaConfig::default(),
            relaxation: None,
            seeds: default_seeds(),
            total_steps,
            metric_period: default_metric_period(),
            eval_episodes: default_eval_episodes(),
            variance_samples: default_variance_samples(),
            wall_clock: false,
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.seeds.is_empty(), Config, "seed list is empty");
        ensure!(self.total_steps >= 1, Config, "total_steps must be positive");
        ensure!(self.metric_period >= 1, Config, "metric_period must be positive");
        ensure!(self.eval_episodes >= 1, Config, "eval_episodes must be positive");
        ensure!(self.variance_samples == 0 || self.variance_samples >= 2, Config, "variance_samples must be 0 or at least 2");
        match self.algorithm {
            Algorithm::DeterministicDop => self.deterministic.validate(),
            Algorithm::Maddpg => {
                self.deterministic.validate()?;
                self.relaxation.map_or(Ok(()), |r| r.validate())
            }
            Algorithm::Coma => self.coma.validate(),
            _ => self.stochastic.validate(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_documented_defaults() {
        let cfg = RunConfig::from_json(r#"{"algorithm": "stochastic_dop", "env": {"kind": "matrix_game"}, "total_steps": 100}"#).unwrap();
        assert_eq!(cfg.seeds.len(), 12);
        assert_eq!(cfg.stochastic.tb.kappa, 0.5);
        assert_eq!(cfg.stochastic.tb.tb_steps, 5);
        assert_eq!(cfg.stochastic.off_capacity, 5000);
        assert_eq!(cfg.stochastic.on_capacity, 32);
        assert_eq!((cfg.stochastic.tb.off_batch, cfg.stochastic.tb.on_batch), (32, 16));
        assert_eq!((cfg.stochastic.epsilon.start, cfg.stochastic.epsilon.end), (1.0, 0.05));
        assert_eq!(cfg.stochastic.rms_alpha, 0.99);
        assert_eq!(cfg.deterministic.buffer_capacity, 10_000);
        assert_eq!(cfg.deterministic.batch_size, 1250);
        assert_eq!(cfg, RunConfig::new(Algorithm::StochasticDop, EnvConfig::MatrixGame, 100));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let top = r#"{"algorithm": "coma", "env": {"kind": "matrix_game"}, "total_steps": 1, "colour": 1}"#;
        assert!(RunConfig::from_json(top).is_err());
        let nested = r#"{"algorithm": "coma", "env": {"kind": "matrix_game"}, "total_steps": 1, "stochastic": {"tb": {"kapa": 0.1}}}"#;
        assert!(RunConfig::from_json(nested).is_err());
        let algo = r#"{"algorithm": "qmix", "env": {"kind": "matrix_game"}, "total_steps": 1}"#;
        assert!(RunConfig::from_json(algo).is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = RunConfig::new(Algorithm::Maddpg, EnvConfig::RandomTabular { seed: 3, n_states: 2, n_agents: 2, n_actions: 3, episode_limit: 7 }, 500);
        cfg.gamma = Some(0.9);
        cfg.relaxation = Some(RelaxationConfig { temperature: 0.5, ..RelaxationConfig::default() });
        cfg.seeds = vec![4, 9];
        cfg.stochastic.critic_lr = 1e-2;
        let again = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(RunConfig::from_json(&again.to_json()).unwrap(), again);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::new(Algorithm::Coma, EnvConfig::MatrixGame, 10);
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::new(Algorithm::StochasticDop, EnvConfig::MatrixGame, 10);
        cfg.stochastic.tb.kappa = 2.0;
        assert!(cfg.validate().is_err());
        cfg.stochastic.tb.kappa = 0.5;
        cfg.variance_samples = 1;
        assert!(cfg.validate().is_err());
    }
}
