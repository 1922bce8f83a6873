use std::time::Instant;

use dop::baselines::maddpg_continuous;
use dop::deterministic::{DeterministicConfig, DeterministicTrainer};
use dop::envs::EnvConfig;
use dop::trainer::Trainer;
use dop::Result;

use super::Check;

pub const SEEDS: u64 = 12;
pub const AGGREGATION_STEPS: u64 = 10_000;
pub const MILL_STEPS: u64 = 12_000;
pub const BATCH: usize = 64;
/// Moving-average window, in episodes, of the smoothed return curve.
pub const SMOOTHING: usize = 20;
/// Return of a failed Aggregation episode; degradation is measured above it.
pub const FAILURE_RETURN: f64 = -10.0;
pub const MAX_DEGRADATION: f64 = 0.2;
pub const MIN_STABLE_SEEDS: usize = 9;
pub const MIN_POSITIVE_AGENTS: usize = 9;
pub const MIN_MILL_SEEDS: usize = 9;

/// Desk-scale settings shared by both continuous tasks.
pub fn continuous_config() -> DeterministicConfig {
    DeterministicConfig { batch_size: BATCH, ..DeterministicConfig::default() }
}

fn episode_returns(trainer: &mut dyn Trainer, steps: u64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    while trainer.env_steps() < steps {
        if let Some(r) = trainer.iterate()?.train_return {
            out.push(r);
        }
    }
    Ok(out)
}

/// Training-episode returns of both learners, one list per seed.
#[derive(Debug, Clone)]
pub struct AggregationStudy {
    pub dop: Vec<Vec<f64>>,
    pub maddpg: Vec<Vec<f64>>,
}

pub fn aggregation_study(seeds: &[u64], steps: u64) -> Result<AggregationStudy> {
    let env = EnvConfig::Aggregation;
    let cfg = continuous_config();
    let mut study = AggregationStudy { dop: Vec::new(), maddpg: Vec::new() };
    for &seed in seeds {
        let mut dop = DeterministicTrainer::new(env.build(None)?, env.build(None)?, cfg.clone(), seed)?;
        study.dop.push(episode_returns(&mut dop, steps)?);
        let mut maddpg = maddpg_continuous(env.build(None)?, env.build(None)?, cfg.clone(), seed)?;
        study.maddpg.push(episode_returns(&mut maddpg, steps)?);
    }
    Ok(study)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean return over the last tenth of the episodes.
pub fn final_tenth(returns: &[f64]) -> f64 {
    let k = (returns.len() / 10).max(1);
    mean(&returns[returns.len().saturating_sub(k)..])
}

pub fn smoothed(returns: &[f64], window: usize) -> Vec<f64> {
    returns.windows(window.min(returns.len()).max(1)).map(mean).collect()
}

/// `(peak - final) / (peak - FAILURE_RETURN)` of the smoothed curve; zero when
/// the curve never rises above the failure return.
pub fn degradation(returns: &[f64]) -> f64 {
    let curve = smoothed(returns, SMOOTHING);
    let Some(&last) = curve.last() else { return 0.0 };
    let peak = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak <= FAILURE_RETURN {
        return 0.0;
    }
    (peak - last) / (peak - FAILURE_RETURN)
}

fn successes(returns: &[f64]) -> usize {
    returns.iter().filter(|&&r| r > FAILURE_RETURN).count()
}

/// Final return and stability of deterministic DOP against MADDPG.
pub fn criterion_8() -> Result<Check> {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..SEEDS).collect();
    let study = aggregation_study(&seeds, AGGREGATION_STEPS)?;
    let dop_final = mean(&study.dop.iter().map(|r| final_tenth(r)).collect::<Vec<_>>());
    let maddpg_final = mean(&study.maddpg.iter().map(|r| final_tenth(r)).collect::<Vec<_>>());
    let stable = study.dop.iter().filter(|r| degradation(r) < MAX_DEGRADATION).count();
    let dop_wins: usize = study.dop.iter().map(|r| successes(r)).sum();
    let maddpg_wins: usize = study.maddpg.iter().map(|r| successes(r)).sum();
    let episodes: usize = study.dop.iter().map(Vec::len).sum();
    let note = if dop_wins + maddpg_wins == 0 { " (neither learner ever gathered: the comparison is vacuous)" } else { "" };
    Ok(Check::new(
        8,
        "aggregation stability",
        format!(
            "final-10% return DOP {dop_final:.2} vs MADDPG {maddpg_final:.2}; {stable}/{SEEDS} DOP seeds degrade < {MAX_DEGRADATION}; \
             successful episodes DOP {dop_wins}/{episodes}, MADDPG {maddpg_wins}{note}; {AGGREGATION_STEPS} steps per seed"
        ),
        format!("DOP >= MADDPG and >= {MIN_STABLE_SEEDS}/{SEEDS} stable seeds"),
        dop_final >= maddpg_final && stable >= MIN_STABLE_SEEDS,
        start,
    ))
}

/// Per seed: number of agents whose critic action gradient points clockwise,
/// and the greedy return.
#[derive(Debug, Clone)]
pub struct MillStudy {
    pub positive_agents: Vec<usize>,
    pub n_agents: usize,
    pub greedy_return: Vec<f64>,
}

pub fn mill_study(seeds: &[u64], steps: u64) -> Result<MillStudy> {
    let env = EnvConfig::Mill;
    let mut study = MillStudy { positive_agents: Vec::new(), n_agents: 0, greedy_return: Vec::new() };
    for &seed in seeds {
        let mut trainer = DeterministicTrainer::new(env.build(None)?, env.build(None)?, continuous_config(), seed)?;
        while trainer.env_steps() < steps {
            trainer.iterate()?;
        }
        let grads = trainer.action_gradients_at(&trainer.probe().clone())?;
        study.n_agents = grads.len();
        study.positive_agents.push(grads.iter().filter(|g| g[0] > 0.0).count());
        study.greedy_return.push(trainer.greedy_return(1)?);
    }
    Ok(study)
}

/// Sign of each agent's action gradient at the learned policy.
pub fn criterion_9() -> Result<Check> {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..SEEDS).collect();
    let study = mill_study(&seeds, MILL_STEPS)?;
    let good = study.positive_agents.iter().filter(|&&k| k >= MIN_POSITIVE_AGENTS).count();
    Ok(Check::new(
        9,
        "mill credit assignment",
        format!(
            "{good}/{SEEDS} seeds with >= {MIN_POSITIVE_AGENTS}/{} positive gradients (per seed {:?}); greedy returns {:?}; {MILL_STEPS} steps per seed",
            study.n_agents, study.positive_agents, study.greedy_return
        ),
        format!(">= {MIN_MILL_SEEDS}/{SEEDS} seeds"),
        good >= MIN_MILL_SEEDS,
        start,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degradation_is_relative_to_failure_floor() {
        let mut r = vec![-10.0; 40];
        assert_eq!(degradation(&r), 0.0);
        r.extend(vec![10.0; 40]);
        assert!(degradation(&r).abs() < 1e-12);
        r.extend(vec![0.0; 40]);
        assert!((degradation(&r) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn final_tenth_uses_last_episodes() {
        let r: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(final_tenth(&r), 94.5);
        assert_eq!(final_tenth(&[3.0]), 3.0);
    }
}
