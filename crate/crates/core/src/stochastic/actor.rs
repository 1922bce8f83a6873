use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::policy::stale_error;
use super::StochasticPolicySet;
use crate::critic::{CriticForward, DecomposedCritic};
use crate::envs::Episode;
use crate::error::{ensure, DopError, Result};
use crate::nn::Grad;

/// Per-sample credit used by the stochastic actor update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActorForm {
    /// `k_i Q_i(s, a_i)`
    #[default]
    Plain,
    /// Centered `k_i (Q_i(s, a_i) - E_{pi_i} Q_i(s, .))`; same expectation, lower variance.
    Advantage,
}

/// `U_i = k_i (Q_i(a_i) - sum_x pi_i(x) Q_i(x))`.
pub fn aristocrat_utility(k_i: f64, q_i: &[f64], pi_i: &[f64], action: usize) -> f64 {
    let baseline: f64 = pi_i.iter().zip(q_i).map(|(p, q)| p * q).sum();
    k_i * (q_i[action] - baseline)
}

/// Flattened steps of a batch of episodes.
struct ActorBatch {
    states: Array2<f64>,
    inputs: Vec<Array2<f64>>,
    actions: Vec<Vec<usize>>,
    behavior: Vec<Vec<f64>>,
}

fn flatten(episodes: &[&Episode], critic: &DecomposedCritic, policies: &StochasticPolicySet) -> Result<ActorBatch> {
    let n = policies.n_agents();
    let rows: usize = episodes.iter().map(|e| e.len()).sum();
    ensure!(rows > 0, State, "actor batch is empty");
    let mut states = Array2::zeros((rows, critic.state_dim()));
    let width = policies.actors()[0].input_dim();
    let mut inputs = vec![Array2::zeros((rows, width)); n];
    let mut actions = Vec::with_capacity(rows);
    let mut behavior = Vec::with_capacity(rows);
    let mut r = 0;
    for ep in episodes {
        let agent_inputs: Vec<Array2<f64>> = (0..n).map(|i| policies.episode_inputs(ep, i)).collect();
        for t in 0..ep.len() {
            states.row_mut(r).assign(&ndarray::ArrayView1::from(&ep.states[t]));
            for i in 0..n {
                inputs[i].row_mut(r).assign(&agent_inputs[i].row(t));
            }
            actions.push(ep.actions[t].clone());
            behavior.push(ep.behavior_probs.get(t).cloned().unwrap_or_default());
            r += 1;
        }
    }
    Ok(ActorBatch { states, inputs, actions, behavior })
}

fn credit(fwd: &CriticForward, probs: &[Array2<f64>], actions: &[Vec<usize>], agent: usize, form: ActorForm) -> Vec<f64> {
    (0..actions.len())
        .map(|r| {
            let k = fwd.k[[r, agent]];
            let q = fwd.q[agent].row(r);
            let a = actions[r][agent];
            match form {
                ActorForm::Plain => k * q[a],
                ActorForm::Advantage => {
                    aristocrat_utility(k, q.as_slice().expect("standard layout"), probs[agent].row(r).as_slice().expect("standard layout"), a)
                }
            }
        })
        .collect()
}

fn weighted_grads(
    batch: &ActorBatch,
    critic: &DecomposedCritic,
    policies: &StochasticPolicySet,
    form: ActorForm,
    sample_weight: &[f64],
) -> Result<Vec<Grad>> {
    let fwd = critic.forward(batch.states.view(), None)?;
    let n = policies.n_agents();
    let probs: Vec<Array2<f64>> = (0..n).map(|i| policies.probs(i, batch.inputs[i].view())).collect::<Result<_>>()?;
    let rows = batch.actions.len() as f64;
    (0..n)
        .map(|i| {
            let c = credit(&fwd, &probs, &batch.actions, i, form);
            let w: Vec<f64> = c.iter().zip(sample_weight).map(|(c, s)| c * s / rows).collect();
            let a: Vec<usize> = batch.actions.iter().map(|a| a[i]).collect();
            policies.log_prob_grad(i, batch.inputs[i].view(), &a, &w)
        })
        .collect()
}

/// On-policy decomposed actor gradient, averaged over every step of the
/// batch. Episodes must come from `current_version`.
pub fn actor_gradient(
    episodes: &[&Episode],
    current_version: u64,
    critic: &DecomposedCritic,
    policies: &StochasticPolicySet,
    form: ActorForm,
) -> Result<Vec<Grad>> {
    if let Some(stale) = episodes.iter().find(|e| e.policy_version != current_version) {
        return Err(stale_error(stale.policy_version, current_version));
    }
    let batch = flatten(episodes, critic, policies)?;
    let ones = vec![1.0; batch.actions.len()];
    weighted_grads(&batch, critic, policies, form, &ones)
}

/// Off-policy actor gradient: each step is weighted by the joint ratio
/// `prod_i pi_i / beta_i`, clipped at `clip`.
pub fn offpolicy_actor_gradient(
    episodes: &[&Episode],
    critic: &DecomposedCritic,
    policies: &StochasticPolicySet,
    form: ActorForm,
    clip: f64,
) -> Result<Vec<Grad>> {
    let batch = flatten(episodes, critic, policies)?;
    let n = policies.n_agents();
    let probs: Vec<Array2<f64>> = (0..n).map(|i| policies.probs(i, batch.inputs[i].view())).collect::<Result<_>>()?;
    let mut ratios = Vec::with_capacity(batch.actions.len());
    for (r, beta) in batch.behavior.iter().enumerate() {
        ensure!(beta.len() == n, Data, "step {r} has no behavior probabilities");
        if let Some(bad) = beta.iter().find(|&&b| b <= 0.0) {
            return Err(DopError::Data(format!("behavior probability {bad} at step {r}")));
        }
        let ratio: f64 = (0..n).map(|i| probs[i][[r, batch.actions[r][i]]] / beta[i]).product();
        ratios.push(ratio.min(clip));
    }
    weighted_grads(&batch, critic, policies, form, &ratios)
}
