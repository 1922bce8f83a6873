//! Builds trainers from configs and drives them to metric rows.

use std::time::Instant;

use crate::baselines::{maddpg_continuous, ComaTrainer, MaddpgDiscreteTrainer};
use crate::config::{Algorithm, RunConfig};
use crate::deterministic::DeterministicTrainer;
use crate::envs::{ActionSpace, EnvConfig};
use crate::error::{DopError, Result};
use crate::metrics::{format_actions, MetricRecord};
use crate::stochastic::{StochasticMode, StochasticTrainer};
use crate::trainer::Trainer;

pub fn build_trainer(cfg: &RunConfig, seed: u64) -> Result<Box<dyn Trainer>> {
    cfg.validate()?;
    let env = cfg.env.build(cfg.gamma)?;
    let eval = cfg.env.build(cfg.gamma)?;
    let mode = match cfg.algorithm {
        Algorithm::StochasticDop => Some(StochasticMode::Dop),
        Algorithm::OnpolicyDop => Some(StochasticMode::OnPolicy),
        Algorithm::OffpolicyDop => Some(StochasticMode::OffPolicy),
        Algorithm::CommonTbDop => Some(StochasticMode::CommonTreeBackup),
        _ => None,
    };
    if let Some(mode) = mode {
        return Ok(Box::new(StochasticTrainer::new(env, eval, cfg.stochastic.clone(), mode, seed)?));
    }
    match cfg.algorithm {
        Algorithm::DeterministicDop => Ok(Box::new(DeterministicTrainer::new(env, eval, cfg.deterministic.clone(), seed)?)),
        Algorithm::Coma => Ok(Box::new(ComaTrainer::new(env, eval, cfg.coma.clone(), seed)?)),
        Algorithm::Maddpg => match (&env.spec().action_space, cfg.relaxation) {
            (ActionSpace::Continuous { .. }, _) => Ok(Box::new(maddpg_continuous(env, eval, cfg.deterministic.clone(), seed)?)),
            (ActionSpace::Discrete(_), Some(relax)) => Ok(Box::new(MaddpgDiscreteTrainer::new(env, eval, cfg.deterministic.clone(), relax, seed)?)),
            (ActionSpace::Discrete(_), None) => Err(DopError::Config("maddpg on discrete actions needs a \"relaxation\" section".into())),
        },
        _ => unreachable!("stochastic variants handled above"),
    }
}

fn env_tag(env: &EnvConfig) -> &'static str {
    match env {
        EnvConfig::MatrixGame => "matrix_game",
        EnvConfig::Aggregation => "aggregation",
        EnvConfig::Mill => "mill",
        EnvConfig::RandomTabular { .. } => "random_tabular",
    }
}

pub fn run_id(cfg: &RunConfig, seed: u64) -> String {
    format!("{}-{}-seed{}", cfg.algorithm.tag(), env_tag(&cfg.env), seed)
}

/// Trains one seed, calling `sink` once per metric period.
pub fn run_seed_with(cfg: &RunConfig, seed: u64, trainer: &mut dyn Trainer, mut sink: impl FnMut(MetricRecord) -> Result<()>) -> Result<()> {
    let id = run_id(cfg, seed);
    let start = Instant::now();
    let mut next = cfg.metric_period.min(cfg.total_steps);
    let mut last = crate::trainer::IterationStats::default();
    while trainer.env_steps() < cfg.total_steps {
        let stats = trainer.iterate()?;
        last.train_return = stats.train_return.or(last.train_return);
        last.loss_tb = stats.loss_tb.or(last.loss_tb);
        last.loss_on = stats.loss_on.or(last.loss_on);
        last.loss_td = stats.loss_td.or(last.loss_td);
        let step = trainer.env_steps();
        if step >= next || step >= cfg.total_steps {
            while next <= step {
                next += cfg.metric_period;
            }
            let grad_variance = if cfg.variance_samples >= 2 {
                trainer.gradient_variance(cfg.variance_samples)?.filter(|r| r.reportable()).map(|r| r.mean)
            } else {
                None
            };
            sink(MetricRecord {
                run_id: id.clone(),
                seed,
                step,
                train_return: last.train_return,
                eval_return: Some(trainer.greedy_return(cfg.eval_episodes)?),
                loss_tb: last.loss_tb,
                loss_on: last.loss_on,
                loss_td: last.loss_td,
                k_spread: trainer.k_spread()?,
                grad_variance,
                bias: trainer.bias()?,
                argmax_actions: trainer.argmax_actions()?.map(|a| format_actions(&a)),
                wall_clock: cfg.wall_clock.then(|| start.elapsed().as_secs_f64()),
            })?;
        }
    }
    Ok(())
}

/// Trains one seed and returns its rows.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<Vec<MetricRecord>> {
    let mut trainer = build_trainer(cfg, seed)?;
    let mut rows = Vec::new();
    run_seed_with(cfg, seed, trainer.as_mut(), |r| {
        rows.push(r);
        Ok(())
    })?;
    Ok(rows)
}
