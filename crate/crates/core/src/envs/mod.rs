//! Cooperative multi-agent environments.
//!
//! Every environment is a Dec-POMDP instance with a shared team reward. Joint
//! actions over discrete spaces are flattened row-major with agent 0 outermost,
//! see [`joint_index`].

mod aggregation;
mod matrix_game;
mod mill;
mod tabular;

pub use aggregation::Aggregation;
pub use matrix_game::{MatrixGame, MATRIX_ACTIONS, MATRIX_AGENTS, MATRIX_OPTIMUM};
pub use mill::Mill;
pub use tabular::{random_tabular, TabularDecMDP, TabularEnv};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, DopError, Result};
use crate::rng::SeedRng;

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }

    /// Number of discrete actions, or the continuous action dimension.
    pub fn size(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Continuous { low, .. } => low.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub action_space: ActionSpace,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub episode_limit: usize,
    pub gamma: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_agents >= 2, Config, "need at least 2 agents, got {}", self.n_agents);
        ensure!(self.episode_limit >= 1, Config, "episode_limit must be positive");
        ensure!(self.obs_dim >= 1 && self.state_dim >= 1, Config, "obs_dim and state_dim must be positive");
        ensure!((0.0..1.0).contains(&self.gamma), Config, "gamma {} outside [0, 1)", self.gamma);
        match &self.action_space {
            ActionSpace::Discrete(n) => ensure!(*n >= 1, Config, "empty discrete action space"),
            ActionSpace::Continuous { low, high } => {
                ensure!(!low.is_empty() && low.len() == high.len(), Config, "bad continuous bounds");
                ensure!(
                    low.iter().zip(high).all(|(l, h)| l < h),
                    Config,
                    "continuous bounds need low < high"
                );
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JointAction {
    Discrete(Vec<usize>),
    Continuous(Vec<Vec<f64>>),
}

impl JointAction {
    pub fn len(&self) -> usize {
        match self {
            JointAction::Discrete(a) => a.len(),
            JointAction::Continuous(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// What every agent sees after a reset or a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub observations: Vec<Vec<f64>>,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    fn reset(&mut self, rng: &mut SeedRng) -> Observation;

    fn step(&mut self, action: &JointAction) -> Result<StepResult>;

    /// Exact Q_tot over flattened joint actions, when the environment is a
    /// single-step game whose true values are its rewards.
    fn true_q_table(&self) -> Option<Vec<f64>> {
        None
    }
}

/// One recorded trajectory.
///
/// `observations` and `states` carry one more entry than `actions`: the final
/// entry is the observation after the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<A = Vec<usize>> {
    pub observations: Vec<Vec<Vec<f64>>>,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<A>,
    /// Probability each agent's behavior policy gave its sampled action.
    pub behavior_probs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub terminated: bool,
    /// Actor update count at the time the episode was generated.
    pub policy_version: u64,
}

impl<A> Episode<A> {
    pub fn new(first: Observation, policy_version: u64) -> Self {
        Self {
            observations: vec![first.observations],
            states: vec![first.state],
            actions: Vec::new(),
            behavior_probs: Vec::new(),
            rewards: Vec::new(),
            terminated: false,
            policy_version,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push(&mut self, action: A, behavior: Vec<f64>, result: StepResult) {
        self.actions.push(action);
        self.behavior_probs.push(behavior);
        self.rewards.push(result.reward);
        self.observations.push(result.observations);
        self.states.push(result.state);
        self.terminated = result.terminated;
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
    }
}

/// Flat joint-action index, agent 0 outermost.
pub fn joint_index(actions: &[usize], n_actions: usize) -> usize {
    actions.iter().fold(0, |acc, &a| acc * n_actions + a)
}

pub fn joint_from_index(mut index: usize, n_agents: usize, n_actions: usize) -> Vec<usize> {
    let mut out = vec![0; n_agents];
    for slot in out.iter_mut().rev() {
        *slot = index % n_actions;
        index /= n_actions;
    }
    out
}

pub fn joint_count(n_agents: usize, n_actions: usize) -> usize {
    n_actions.pow(n_agents as u32)
}

/// Environment selection as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    MatrixGame,
    Aggregation,
    Mill,
    RandomTabular {
        seed: u64,
        n_states: usize,
        n_agents: usize,
        n_actions: usize,
        #[serde(default = "default_tabular_limit")]
        episode_limit: usize,
    },
}

fn default_tabular_limit() -> usize {
    10
}

impl EnvConfig {
    pub fn build(&self, gamma: Option<f64>) -> Result<Box<dyn Environment>> {
        let mut env: Box<dyn Environment> = match self {
            EnvConfig::MatrixGame => Box::new(MatrixGame::new()),
            EnvConfig::Aggregation => Box::new(Aggregation::new()),
            EnvConfig::Mill => Box::new(Mill::new()),
            EnvConfig::RandomTabular { seed, n_states, n_agents, n_actions, episode_limit } => {
                let mdp = random_tabular(*seed, *n_states, *n_agents, *n_actions)?;
                Box::new(TabularEnv::new(mdp, *episode_limit)?)
            }
        };
        if let Some(g) = gamma {
            ensure!((0.0..1.0).contains(&g), Config, "gamma {g} outside [0, 1)");
            env = Box::new(WithGamma::new(env, g));
        }
        env.spec().validate()?;
        Ok(env)
    }
}

/// Overrides the discount factor reported by an inner environment.
struct WithGamma {
    inner: Box<dyn Environment>,
    spec: EnvSpec,
}

impl WithGamma {
    fn new(inner: Box<dyn Environment>, gamma: f64) -> Self {
        let mut spec = inner.spec().clone();
        spec.gamma = gamma;
        Self { inner, spec }
    }
}

impl Environment for WithGamma {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut SeedRng) -> Observation {
        self.inner.reset(rng)
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        self.inner.step(action)
    }

    fn true_q_table(&self) -> Option<Vec<f64>> {
        self.inner.true_q_table()
    }
}

pub(crate) fn expect_continuous<'a>(action: &'a JointAction, n_agents: usize, dim: usize) -> Result<&'a [Vec<f64>]> {
    match action {
        JointAction::Continuous(a) => {
            ensure!(a.len() == n_agents, Input, "expected {n_agents} agent actions, got {}", a.len());
            for (i, ai) in a.iter().enumerate() {
                ensure!(ai.len() == dim, Input, "agent {i} action has dimension {}, expected {dim}", ai.len());
                ensure!(ai.iter().all(|x| x.is_finite()), Input, "agent {i} action is not finite");
            }
            Ok(a)
        }
        JointAction::Discrete(_) => Err(DopError::Input("expected a continuous joint action".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_index_is_row_major_agent0_outermost() {
        assert_eq!(joint_index(&[1, 5, 9], 14), 1 * 196 + 5 * 14 + 9);
        for idx in 0..joint_count(3, 4) {
            assert_eq!(joint_index(&joint_from_index(idx, 3, 4), 4), idx);
        }
        assert_eq!(joint_from_index(1, 2, 3), vec![0, 1]);
    }

    #[test]
    fn spec_validation_rejects_single_agent() {
        let spec = EnvSpec {
            n_agents: 1,
            action_space: ActionSpace::Discrete(2),
            obs_dim: 1,
            state_dim: 1,
            episode_limit: 1,
            gamma: 0.9,
        };
        assert!(matches!(spec.validate(), Err(DopError::Config(_))));
    }

    #[test]
    fn spec_validation_rejects_inverted_bounds() {
        let spec = EnvSpec {
            n_agents: 2,
            action_space: ActionSpace::Continuous { low: vec![1.0], high: vec![-1.0] },
            obs_dim: 1,
            state_dim: 1,
            episode_limit: 1,
            gamma: 0.9,
        };
        assert!(spec.validate().is_err());
    }
}
