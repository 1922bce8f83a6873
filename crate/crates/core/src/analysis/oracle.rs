//! Straight-line reference implementations. They use only single
//! evaluations of the critic and explicit joint-action enumeration, never the
//! decomposed expectation or target code paths they are compared against.

use crate::critic::DecomposedCritic;
use crate::envs::{joint_count, joint_from_index, Episode, JointAction};
use crate::error::Result;
use crate::stochastic::StochasticPolicySet;

/// `sum_a prod_i pi_i(a_i) Q_tot(s, a)` by enumerating every joint action.
pub fn brute_force_expected_q(critic: &DecomposedCritic, state: &[f64], policies: &[Vec<f64>]) -> Result<f64> {
    let n = policies.len();
    let m = policies[0].len();
    let mut total = 0.0;
    for j in 0..joint_count(n, m) {
        let a = joint_from_index(j, n, m);
        let w: f64 = a.iter().enumerate().map(|(i, &x)| policies[i][x]).product();
        total += w * critic.eval(state, &JointAction::Discrete(a))?.q_tot;
    }
    Ok(total)
}

/// Multi-step tree-backup target written term by term:
/// `Q(s_t0, a_t0) + sum_{t<k} gamma^t c_t (r_t + gamma E[Q(s_{t+1})] - Q(s_t, a_t))`
/// with `c_t = prod_{l=1..t} lambda pi(a_l | s_l)`, truncated at episode end.
pub fn brute_force_tb_target(
    episode: &Episode,
    t0: usize,
    critic: &DecomposedCritic,
    policies: &StochasticPolicySet,
    tb_steps: usize,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    let n = policies.n_agents();
    let probs_at = |t: usize| -> Result<Vec<Vec<f64>>> {
        let inputs = policies.inputs_at(&episode.observations, t);
        (0..n).map(|i| policies.probs_one(i, &inputs[i])).collect()
    };
    let q_at = |t: usize| -> Result<f64> {
        Ok(critic.eval(&episode.states[t], &JointAction::Discrete(episode.actions[t].clone()))?.q_tot)
    };
    let horizon = episode.len();
    let mut y = q_at(t0)?;
    let mut c = 1.0;
    let mut discount = 1.0;
    for t in t0..(t0 + tb_steps).min(horizon) {
        if t > t0 {
            let pi = probs_at(t)?;
            c *= lambda * (0..n).map(|i| pi[i][episode.actions[t][i]]).product::<f64>();
        }
        let next = if t + 1 == horizon && episode.terminated {
            0.0
        } else {
            brute_force_expected_q(critic, &episode.states[t + 1], &probs_at(t + 1)?)?
        };
        y += discount * c * (episode.rewards[t] + gamma * next - q_at(t)?);
        discount *= gamma;
    }
    Ok(y)
}

/// On-policy TD(lambda) target by explicit summation of discounted corrections.
pub fn brute_force_on_target(episode: &Episode, t0: usize, critic: &DecomposedCritic, policies: &StochasticPolicySet, lambda: f64, gamma: f64) -> Result<f64> {
    let n = policies.n_agents();
    let horizon = episode.len();
    let q_at = |t: usize| -> Result<f64> {
        if t == horizon {
            if episode.terminated {
                return Ok(0.0);
            }
            let inputs = policies.inputs_at(&episode.observations, t);
            let pi: Vec<Vec<f64>> = (0..n).map(|i| policies.probs_one(i, &inputs[i])).collect::<Result<_>>()?;
            return brute_force_expected_q(critic, &episode.states[t], &pi);
        }
        Ok(critic.eval(&episode.states[t], &JointAction::Discrete(episode.actions[t].clone()))?.q_tot)
    };
    let mut y = q_at(t0)?;
    for t in t0..horizon {
        let w = (gamma * lambda).powi((t - t0) as i32);
        y += w * (episode.rewards[t] + gamma * q_at(t + 1)? - q_at(t)?);
    }
    Ok(y)
}
