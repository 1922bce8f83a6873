use rand::Rng;

use super::{joint_count, ActionSpace, EnvSpec, Environment, JointAction, Observation, StepResult};
use crate::error::{ensure, DopError, Result};
use crate::rng::{seeded, SeedRng};

const SIZE_GUARD: usize = 1_000_000;

/// Fully tabular cooperative game with explicit transition and reward tables.
///
/// Joint actions are indexed with [`super::joint_index`].
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDecMDP {
    pub n_states: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    /// `transitions[s][joint][s']`
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[s][joint]`
    pub rewards: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    pub gamma: f64,
}

impl TabularDecMDP {
    pub fn n_joint(&self) -> usize {
        joint_count(self.n_agents, self.n_actions)
    }

    pub fn validate(&self) -> Result<()> {
        check_size(self.n_states, self.n_agents, self.n_actions)?;
        let nj = self.n_joint();
        ensure!(self.transitions.len() == self.n_states, Shape, "transition table has wrong state count");
        ensure!(self.rewards.len() == self.n_states, Shape, "reward table has wrong state count");
        for s in 0..self.n_states {
            ensure!(self.transitions[s].len() == nj && self.rewards[s].len() == nj, Shape, "state {s} has wrong joint-action count");
            for (j, row) in self.transitions[s].iter().enumerate() {
                ensure!(row.len() == self.n_states, Shape, "row ({s}, {j}) has wrong length");
                ensure!(row.iter().all(|&p| p >= 0.0), Input, "negative probability in row ({s}, {j})");
                let total: f64 = row.iter().sum();
                ensure!((total - 1.0).abs() <= 1e-12, Input, "row ({s}, {j}) sums to {total}");
            }
        }
        ensure!(self.initial.len() == self.n_states, Shape, "initial distribution has wrong length");
        ensure!((0.0..1.0).contains(&self.gamma), Config, "gamma {} outside [0, 1)", self.gamma);
        Ok(())
    }
}

fn check_size(n_states: usize, n_agents: usize, n_actions: usize) -> Result<()> {
    ensure!(n_states >= 1 && n_agents >= 1 && n_actions >= 1, Config, "tabular sizes must be positive");
    let joint = (n_actions as f64).powi(n_agents as i32);
    ensure!(
        n_states as f64 * joint <= SIZE_GUARD as f64,
        Config,
        "{n_states} states x {n_actions}^{n_agents} joint actions exceeds the {SIZE_GUARD} size guard"
    );
    Ok(())
}

fn normalized_row(rng: &mut SeedRng, len: usize) -> Vec<f64> {
    // Uniform on (0, 1] keeps every entry strictly positive.
    let raw: Vec<f64> = (0..len).map(|_| 1.0 - rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Seeded random instance: normalized positive transition rows, rewards
/// uniform in [-1, 1], discount 0.9.
pub fn random_tabular(seed: u64, n_states: usize, n_agents: usize, n_actions: usize) -> Result<TabularDecMDP> {
    check_size(n_states, n_agents, n_actions)?;
    let mut rng = seeded(seed);
    let nj = joint_count(n_agents, n_actions);
    let transitions = (0..n_states)
        .map(|_| (0..nj).map(|_| normalized_row(&mut rng, n_states)).collect())
        .collect();
    let rewards = (0..n_states)
        .map(|_| (0..nj).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let initial = normalized_row(&mut rng, n_states);
    Ok(TabularDecMDP { n_states, n_agents, n_actions, transitions, rewards, initial, gamma: 0.9 })
}

/// Episodic wrapper over a [`TabularDecMDP`]; every agent observes the one-hot
/// state, episodes are cut at `episode_limit` steps.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: TabularDecMDP,
    spec: EnvSpec,
    state: usize,
    t: usize,
    rng: SeedRng,
}

impl TabularEnv {
    pub fn new(mdp: TabularDecMDP, episode_limit: usize) -> Result<Self> {
        mdp.validate()?;
        let spec = EnvSpec {
            n_agents: mdp.n_agents,
            action_space: ActionSpace::Discrete(mdp.n_actions),
            obs_dim: mdp.n_states,
            state_dim: mdp.n_states,
            episode_limit,
            gamma: mdp.gamma,
        };
        Ok(Self { mdp, spec, state: 0, t: 0, rng: seeded(0) })
    }

    pub fn mdp(&self) -> &TabularDecMDP {
        &self.mdp
    }

    fn observe(&self) -> Observation {
        let mut one_hot = vec![0.0; self.mdp.n_states];
        one_hot[self.state] = 1.0;
        Observation { observations: vec![one_hot.clone(); self.mdp.n_agents], state: one_hot }
    }
}

fn sample_index(rng: &mut SeedRng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl Environment for TabularEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut SeedRng) -> Observation {
        // Transition noise is drawn from a child stream forked at reset so a
        // replay of the same actions after the same reset is bit-exact.
        self.rng = seeded(rng.random());
        self.state = sample_index(rng, &self.mdp.initial);
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        let JointAction::Discrete(a) = action else {
            return Err(DopError::Input("tabular games take discrete actions".into()));
        };
        ensure!(a.len() == self.mdp.n_agents, Input, "expected {} agents, got {}", self.mdp.n_agents, a.len());
        ensure!(a.iter().all(|&x| x < self.mdp.n_actions), Input, "action out of range: {a:?}");
        let j = super::joint_index(a, self.mdp.n_actions);
        let reward = self.mdp.rewards[self.state][j];
        self.state = sample_index(&mut self.rng, &self.mdp.transitions[self.state][j]);
        self.t += 1;
        let truncated = self.t >= self.spec.episode_limit;
        let obs = self.observe();
        Ok(StepResult { observations: obs.observations, state: obs.state, reward, terminated: false, truncated })
    }
}
