use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::StochasticPolicySet;
use crate::baselines::{expectation, ExpectationMode, LocalTables};
use crate::critic::DecomposedCritic;
use crate::envs::Episode;
use crate::error::{ensure, Result};
use crate::rng::SeedRng;

/// Critic-target hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TbConfig {
    /// Weight of the tree-backup loss; `1 - kappa` goes to the on-policy loss.
    pub kappa: f64,
    pub tb_steps: usize,
    /// Trace decay inside the tree-backup coefficients.
    pub lambda_tb: f64,
    /// TD(lambda) decay of the on-policy target.
    pub lambda_on: f64,
    /// Critic updates between hard target syncs.
    pub target_update_period: u64,
    pub off_batch: usize,
    pub on_batch: usize,
    pub expectation: ExpectationMode,
}

impl Default for TbConfig {
    fn default() -> Self {
        Self {
            kappa: 0.5,
            tb_steps: 5,
            lambda_tb: 1.0,
            lambda_on: 0.8,
            target_update_period: 200,
            off_batch: 32,
            on_batch: 16,
            expectation: ExpectationMode::Decomposed,
        }
    }
}

impl TbConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=1.0).contains(&self.kappa), Config, "kappa {} outside [0, 1]", self.kappa);
        ensure!(self.tb_steps >= 1, Config, "tree-backup steps must be at least 1");
        ensure!((0.0..=1.0).contains(&self.lambda_tb), Config, "lambda_tb outside [0, 1]");
        ensure!((0.0..=1.0).contains(&self.lambda_on), Config, "lambda_on outside [0, 1]");
        ensure!(self.target_update_period >= 1, Config, "target update period must be positive");
        ensure!(self.off_batch >= 1 && self.on_batch >= 1, Config, "batch sizes must be positive");
        Ok(())
    }
}

/// Target-network quantities along one episode of length `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeValues {
    /// `Q_tot'(s_t, a_t)`, `T` entries.
    pub q: Vec<f64>,
    /// `E_pi[Q_tot'(s_t, .)]`, `T + 1` entries; the last is 0 for terminated episodes.
    pub expect: Vec<f64>,
    /// Joint target-policy probability of the taken action, `T` entries.
    pub pi_joint: Vec<f64>,
    /// Summation terms spent on expectations.
    pub expectation_terms: usize,
}

/// Evaluates the target critic and target policies along an episode.
pub fn episode_values(
    episode: &Episode,
    critic: &DecomposedCritic,
    policies: &StochasticPolicySet,
    mode: ExpectationMode,
    rng: &mut SeedRng,
) -> Result<EpisodeValues> {
    Ok(batch_values(&[episode], critic, policies, mode, rng)?.remove(0))
}

/// [`episode_values`] for several episodes with one forward pass per network.
pub fn batch_values(
    episodes: &[&Episode],
    critic: &DecomposedCritic,
    policies: &StochasticPolicySet,
    mode: ExpectationMode,
    rng: &mut SeedRng,
) -> Result<Vec<EpisodeValues>> {
    let n = critic.n_agents();
    let state_dim = critic.state_dim();
    let rows: usize = episodes.iter().map(|e| e.states.len()).sum();
    let mut states = Array2::zeros((rows, state_dim));
    let width = policies.actors()[0].input_dim();
    let mut inputs = vec![Array2::zeros((rows, width)); n];
    let mut r = 0;
    for ep in episodes {
        ensure!(ep.states.len() == ep.len() + 1, Data, "episode has {} states for {} steps", ep.states.len(), ep.len());
        for i in 0..n {
            inputs[i].slice_mut(ndarray::s![r..r + ep.states.len(), ..]).assign(&policies.episode_inputs(ep, i));
        }
        for s in &ep.states {
            ensure!(s.len() == state_dim, Shape, "state width {} != {state_dim}", s.len());
            states.row_mut(r).assign(&ndarray::ArrayView1::from(s));
            r += 1;
        }
    }
    let fwd = critic.forward(states.view(), None)?;
    let probs: Vec<Array2<f64>> = (0..n).map(|i| policies.probs(i, inputs[i].view())).collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(episodes.len());
    let mut start = 0;
    for ep in episodes {
        let t_len = ep.len();
        let at = |t: usize| start + t;
        let q = (0..t_len)
            .map(|t| fwd.b[at(t)] + (0..n).map(|i| fwd.k[[at(t), i]] * fwd.q[i][[at(t), ep.actions[t][i]]]).sum::<f64>())
            .collect();
        let pi_joint = (0..t_len).map(|t| (0..n).map(|i| probs[i][[at(t), ep.actions[t][i]]]).product()).collect();
        let mut expect = Vec::with_capacity(t_len + 1);
        let mut terms = 0;
        for t in 0..=t_len {
            if t == t_len && ep.terminated {
                expect.push(0.0);
                continue;
            }
            let row = at(t);
            let qs: Vec<Vec<f64>> = fwd.q.iter().map(|qi| qi.row(row).to_vec()).collect();
            let k = fwd.k.row(row).to_vec();
            let pis: Vec<Vec<f64>> = probs.iter().map(|p| p.row(row).to_vec()).collect();
            let (e, c) = expectation(LocalTables { q: &qs, k: &k, b: fwd.b[row] }, &pis, mode, rng);
            expect.push(e);
            terms += c;
        }
        out.push(EpisodeValues { q, expect, pi_joint, expectation_terms: terms });
        start += t_len + 1;
    }
    Ok(out)
}

/// k-step decomposed tree-backup targets for every start step of an episode.
pub fn tb_targets(values: &EpisodeValues, rewards: &[f64], gamma: f64, tb_steps: usize, lambda: f64) -> Vec<f64> {
    let t_len = rewards.len();
    (0..t_len)
        .map(|t0| {
            let mut y = values.q[t0];
            let mut c = 1.0;
            let mut discount = 1.0;
            for t in 0..tb_steps {
                let u = t0 + t;
                if u >= t_len {
                    break;
                }
                if t > 0 {
                    c *= lambda * values.pi_joint[u];
                }
                y += discount * c * (rewards[u] + gamma * values.expect[u + 1] - values.q[u]);
                discount *= gamma;
            }
            y
        })
        .collect()
}

/// TD(lambda) targets for every start step, via
/// `G_t = r_t + gamma ((1 - lambda) Q_{t+1} + lambda G_{t+1})`, bootstrapping
/// from the expected value after the final step.
pub fn on_targets(values: &EpisodeValues, rewards: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let t_len = rewards.len();
    let mut out = vec![0.0; t_len];
    let mut next_g = values.expect[t_len];
    let mut next_q = values.expect[t_len];
    for t in (0..t_len).rev() {
        let g = rewards[t] + gamma * ((1.0 - lambda) * next_q + lambda * next_g);
        out[t] = g;
        next_g = g;
        next_q = values.q[t];
    }
    out
}

fn check_behavior(episode: &Episode) -> Result<()> {
    ensure!(
        episode.behavior_probs.len() == episode.len() && episode.behavior_probs.iter().flatten().all(|&p| p > 0.0),
        Data,
        "episode is missing positive behavior probabilities"
    );
    Ok(())
}

/// Tree-backup target at step `t0` of `episode`, using the target critic and
/// target policies.
pub fn tb_target(
    episode: &Episode,
    t0: usize,
    critic: &DecomposedCritic,
    policies: &StochasticPolicySet,
    cfg: &TbConfig,
    gamma: f64,
    rng: &mut SeedRng,
) -> Result<f64> {
    check_behavior(episode)?;
    ensure!(t0 < episode.len(), Input, "start step {t0} outside an episode of length {}", episode.len());
    let values = episode_values(episode, critic, policies, cfg.expectation, rng)?;
    Ok(tb_targets(&values, &episode.rewards, gamma, cfg.tb_steps, cfg.lambda_tb)[t0])
}

/// On-policy TD(lambda) target at step `t0`.
pub fn on_target(
    episode: &Episode,
    t0: usize,
    critic: &DecomposedCritic,
    policies: &StochasticPolicySet,
    lambda_on: f64,
    gamma: f64,
) -> Result<f64> {
    ensure!(t0 < episode.len(), Input, "start step {t0} outside an episode of length {}", episode.len());
    let mut unused = crate::rng::seeded(0);
    let values = episode_values(episode, critic, policies, ExpectationMode::Decomposed, &mut unused)?;
    Ok(on_targets(&values, &episode.rewards, gamma, lambda_on)[t0])
}

pub(crate) fn require_behavior(episode: &Episode) -> Result<()> {
    check_behavior(episode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(q: &[f64], expect: &[f64], pi: &[f64]) -> EpisodeValues {
        EpisodeValues { q: q.to_vec(), expect: expect.to_vec(), pi_joint: pi.to_vec(), expectation_terms: 0 }
    }

    #[test]
    fn one_step_is_expected_sarsa() {
        let v = values(&[1.0, 2.0, 3.0], &[0.5, 1.5, 2.5, 3.5], &[0.3, 0.3, 0.3]);
        let y = tb_targets(&v, &[1.0, -1.0, 0.5], 0.9, 1, 1.0);
        assert!((y[0] - (1.0 + 0.9 * 1.5)).abs() < 1e-15);
        assert!((y[2] - (0.5 + 0.9 * 3.5)).abs() < 1e-15);
    }

    #[test]
    fn unit_coefficients_telescope() {
        // pi = 1 and lambda = 1 make every c_t one, so the target telescopes.
        let v = values(&[1.0, 2.0, 3.0], &[0.0, 2.0, 3.0, 0.0], &[1.0, 1.0, 1.0]);
        let r = [1.0, 2.0, 4.0];
        let y = tb_targets(&v, &r, 0.5, 5, 1.0);
        // With E(s_{t+1}) = Q(s_{t+1}, a_{t+1}) the sum is the Monte-Carlo return.
        assert!((y[0] - (1.0 + 0.5 * 2.0 + 0.25 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn on_policy_extremes() {
        let v = values(&[1.0, 2.0, 3.0], &[9.0, 9.0, 9.0, 0.0], &[1.0; 3]);
        let r = [1.0, 2.0, 4.0];
        let sarsa = on_targets(&v, &r, 0.9, 0.0);
        assert!((sarsa[0] - (1.0 + 0.9 * 2.0)).abs() < 1e-15);
        assert!((sarsa[2] - 4.0).abs() < 1e-15);
        let zero = values(&[0.0; 3], &[0.0; 4], &[1.0; 3]);
        let mc = on_targets(&zero, &r, 0.9, 1.0);
        assert!((mc[0] - (1.0 + 0.9 * 2.0 + 0.81 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn on_policy_matches_direct_sum() {
        let q = [0.3, -1.2, 2.0];
        let v = values(&q, &[0.0, 0.0, 0.0, 0.7], &[1.0; 3]);
        let r = [0.5, -0.25, 1.5];
        let (gamma, lambda) = (0.95, 0.8);
        let y = on_targets(&v, &r, gamma, lambda);
        let next_q = [q[1], q[2], 0.7];
        for t0 in 0..3 {
            let mut direct = q[t0];
            for t in t0..3 {
                direct += (gamma * lambda).powi((t - t0) as i32) * (r[t] + gamma * next_q[t] - q[t]);
            }
            assert!((y[t0] - direct).abs() < 1e-12);
        }
    }
}
