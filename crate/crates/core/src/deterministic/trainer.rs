use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{DeterministicPolicySet, Transition, TransitionBuffer};
use crate::critic::{CriticConfig, CriticKind, CriticOptim, DecomposedCritic};
use crate::envs::{ActionSpace, Environment, JointAction, Observation};
use crate::error::{ensure, DopError, Result};
use crate::nn::{Grad, RmsProp, RmsPropConfig};
use crate::rng::{stream_rng, SeedRng, Stream};
use crate::trainer::{IterationStats, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeterministicConfig {
    pub critic: CriticConfig,
    /// Hidden widths of the joint critic when one is used instead.
    pub joint_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Soft target update rate.
    pub tau: f64,
    /// Exploration noise in half-ranges of the action box.
    pub noise_sigma: f64,
    /// Environment steps collected before the first update.
    pub warmup: u64,
    /// Critic updates per actor and target update.
    pub policy_delay: u64,
}

impl Default for DeterministicConfig {
    fn default() -> Self {
        Self {
            critic: CriticConfig::default(),
            joint_hidden: vec![64, 64],
            actor_hidden: vec![64],
            critic_lr: 5e-3,
            actor_lr: 5e-3,
            rms_alpha: 0.99,
            rms_eps: 1e-8,
            buffer_capacity: 10_000,
            batch_size: 1250,
            tau: 0.01,
            noise_sigma: 0.1,
            warmup: 1000,
            policy_delay: 2,
        }
    }
}

impl DeterministicConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.critic_lr > 0.0 && self.actor_lr > 0.0, Config, "learning rates must be positive");
        ensure!((0.0..1.0).contains(&self.rms_alpha) && self.rms_eps > 0.0, Config, "bad RMSProp constants");
        ensure!(self.buffer_capacity >= 1 && self.batch_size >= 1, Config, "buffer and batch sizes must be positive");
        ensure!(self.tau > 0.0 && self.tau <= 1.0, Config, "tau must be in (0, 1]");
        ensure!(self.noise_sigma >= 0.0, Config, "noise must be non-negative");
        ensure!(self.policy_delay >= 1, Config, "policy delay must be positive");
        Ok(())
    }

    fn critic_rms(&self) -> RmsPropConfig {
        RmsPropConfig { lr: self.critic_lr, alpha: self.rms_alpha, eps: self.rms_eps }
    }

    fn actor_rms(&self) -> RmsPropConfig {
        RmsPropConfig { lr: self.actor_lr, alpha: self.rms_alpha, eps: self.rms_eps }
    }
}

/// A sampled minibatch laid out as matrices.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub observations: Vec<Array2<f64>>,
    pub actions: Vec<Array2<f64>>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub next_observations: Vec<Array2<f64>>,
    pub terminated: Vec<bool>,
}

fn stack(rows: impl Iterator<Item = Vec<f64>>, n: usize) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = rows.collect();
    let width = rows.first().map_or(0, Vec::len);
    ensure!(rows.iter().all(|r| r.len() == width), Shape, "ragged rows in batch");
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, width), flat).map_err(|e| DopError::Shape(e.to_string()))
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        ensure!(!items.is_empty(), State, "empty transition batch");
        let b = items.len();
        let n = items[0].actions.len();
        Ok(Self {
            states: stack(items.iter().map(|t| t.state.clone()), b)?,
            observations: (0..n).map(|i| stack(items.iter().map(|t| t.observations[i].clone()), b)).collect::<Result<_>>()?,
            actions: (0..n).map(|i| stack(items.iter().map(|t| t.actions[i].clone()), b)).collect::<Result<_>>()?,
            rewards: items.iter().map(|t| t.reward).collect(),
            next_states: stack(items.iter().map(|t| t.next_state.clone()), b)?,
            next_observations: (0..n).map(|i| stack(items.iter().map(|t| t.next_observations[i].clone()), b)).collect::<Result<_>>()?,
            terminated: items.iter().map(|t| t.terminated).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// A critic over continuous joint actions usable by [`OffPolicyTrainer`].
pub trait ContinuousQ: Clone + Send {
    type Optim: Send;

    fn make_optim(&self, config: RmsPropConfig) -> Self::Optim;

    fn q_values(&self, states: ArrayView2<f64>, actions: &[Array2<f64>]) -> Result<Array1<f64>>;

    /// One descent step on `mean (target - Q)^2`; returns the loss before the step.
    fn td_step(&mut self, optim: &mut Self::Optim, states: ArrayView2<f64>, actions: &[Array2<f64>], targets: &Array1<f64>) -> Result<f64>;

    /// Per row, `dQ_tot/da_i` evaluated with agent `i` acting `policy_actions[i]`
    /// and the others acting as in `buffer_actions`.
    fn policy_action_grads(&self, states: ArrayView2<f64>, buffer_actions: &[Array2<f64>], policy_actions: &[Array2<f64>]) -> Result<Vec<Array2<f64>>>;

    fn soft_update_from(&mut self, online: &Self, alpha: f64) -> Result<()>;

    /// Normalized mixing weights at one state, for decomposed critics.
    fn mixing_weights(&self, _state: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

fn views(a: &[Array2<f64>]) -> Vec<ArrayView2<'_, f64>> {
    a.iter().map(|x| x.view()).collect()
}

impl ContinuousQ for DecomposedCritic {
    type Optim = CriticOptim;

    fn make_optim(&self, config: RmsPropConfig) -> CriticOptim {
        CriticOptim::new(config, self)
    }

    fn q_values(&self, states: ArrayView2<f64>, actions: &[Array2<f64>]) -> Result<Array1<f64>> {
        Ok(self.forward(states, Some(&views(actions)))?.q_tot_continuous())
    }

    fn td_step(&mut self, optim: &mut CriticOptim, states: ArrayView2<f64>, actions: &[Array2<f64>], targets: &Array1<f64>) -> Result<f64> {
        let fwd = self.forward(states, Some(&views(actions)))?;
        let q = fwd.q_tot_continuous();
        let rows = q.len();
        let err = &q - targets;
        let loss = err.mapv(|e| e * e).sum() / rows as f64;
        let g = err.mapv(|e| 2.0 * e / rows as f64);
        let n = self.n_agents();
        let dk = Array2::from_shape_fn((rows, n), |(r, i)| g[r] * fwd.q[i][[r, 0]]);
        let dq: Vec<Array2<f64>> = (0..n).map(|i| Array2::from_shape_fn((rows, 1), |(r, _)| g[r] * fwd.k[[r, i]])).collect();
        let (grad, _) = self.backward(&fwd, dk.view(), g.view(), &dq)?;
        optim.step(self, &grad)?;
        Ok(loss)
    }

    fn policy_action_grads(&self, states: ArrayView2<f64>, _buffer_actions: &[Array2<f64>], policy_actions: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        // Each Q_i reads only a_i, so replacing every action at once gives
        // the same per-agent gradients as replacing them one at a time.
        let fwd = self.forward(states, Some(&views(policy_actions)))?;
        let rows = fwd.rows();
        let n = self.n_agents();
        let dq: Vec<Array2<f64>> = (0..n).map(|i| Array2::from_shape_fn((rows, 1), |(r, _)| fwd.k[[r, i]])).collect();
        let (_, grads) = self.backward(&fwd, Array2::zeros((rows, n)).view(), Array1::zeros(rows).view(), &dq)?;
        Ok(grads)
    }

    fn soft_update_from(&mut self, online: &Self, alpha: f64) -> Result<()> {
        DecomposedCritic::soft_update_from(self, online, alpha)
    }

    fn mixing_weights(&self, state: &[f64]) -> Result<Option<Vec<f64>>> {
        let s = ArrayView2::from_shape((1, state.len()), state).map_err(|e| DopError::Shape(e.to_string()))?;
        Ok(Some(self.weights(s)?.0.row(0).to_vec()))
    }
}

/// TD(0) targets `r + gamma (1 - terminated) Q'(s', mu'(o'))`.
pub fn td_targets<C: ContinuousQ>(target_critic: &C, target_actors: &DeterministicPolicySet, batch: &Batch, gamma: f64) -> Result<Array1<f64>> {
    let next_actions: Vec<Array2<f64>> =
        (0..target_actors.n_agents()).map(|i| target_actors.actions(i, batch.next_observations[i].view())).collect::<Result<_>>()?;
    let next_q = target_critic.q_values(batch.next_states.view(), &next_actions)?;
    Ok(Array1::from_shape_fn(batch.len(), |r| batch.rewards[r] + if batch.terminated[r] { 0.0 } else { gamma * next_q[r] }))
}

/// One critic step on the TD(0) loss; returns the loss.
pub fn det_critic_update<C: ContinuousQ>(
    critic: &mut C,
    optim: &mut C::Optim,
    target_critic: &C,
    target_actors: &DeterministicPolicySet,
    batch: &Batch,
    gamma: f64,
) -> Result<f64> {
    let targets = td_targets(target_critic, target_actors, batch, gamma)?;
    critic.td_step(optim, batch.states.view(), &batch.actions, &targets)
}

/// Ascent direction `mean_b grad_theta_i mu_i(o_i) dQ/da_i` for every agent.
pub fn det_actor_gradient<C: ContinuousQ>(critic: &C, actors: &DeterministicPolicySet, batch: &Batch) -> Result<Vec<Grad>> {
    let n = actors.n_agents();
    let mut actions = Vec::with_capacity(n);
    let mut caches = Vec::with_capacity(n);
    for i in 0..n {
        let (a, cache) = actors.actions_cached(i, batch.observations[i].view())?;
        actions.push(a);
        caches.push(cache);
    }
    let grads = critic.policy_action_grads(batch.states.view(), &batch.actions, &actions)?;
    let scale = 1.0 / batch.len() as f64;
    (0..n).map(|i| actors.backward(i, &caches[i], (&grads[i] * scale).view())).collect()
}

/// Off-policy actor-critic over continuous actions with delayed actor and
/// soft target updates. With a [`DecomposedCritic`] this is deterministic DOP;
/// with a joint critic it is MADDPG.
pub struct OffPolicyTrainer<C: ContinuousQ> {
    env: Box<dyn Environment>,
    eval_env: Box<dyn Environment>,
    cfg: DeterministicConfig,
    gamma: f64,
    critic: C,
    target_critic: C,
    critic_optim: C::Optim,
    actors: DeterministicPolicySet,
    target_actors: DeterministicPolicySet,
    actor_optims: Vec<RmsProp>,
    buffer: TransitionBuffer,
    current: Option<Observation>,
    episode_return: f64,
    steps: u64,
    critic_updates: u64,
    probe: Observation,
    env_rng: SeedRng,
    explore_rng: SeedRng,
    buffer_rng: SeedRng,
    eval_rng: SeedRng,
}

pub type DeterministicTrainer = OffPolicyTrainer<DecomposedCritic>;

pub(crate) fn continuous_bounds(env: &dyn Environment) -> Result<(Vec<f64>, Vec<f64>)> {
    match &env.spec().action_space {
        ActionSpace::Continuous { low, high } => Ok((low.clone(), high.clone())),
        ActionSpace::Discrete(_) => Err(DopError::Config("this trainer needs a continuous action space".into())),
    }
}

impl DeterministicTrainer {
    pub fn new(env: Box<dyn Environment>, eval_env: Box<dyn Environment>, cfg: DeterministicConfig, seed: u64) -> Result<Self> {
        let (low, _) = continuous_bounds(env.as_ref())?;
        let spec = env.spec().clone();
        let mut init = stream_rng(seed, Stream::Init);
        let critic = DecomposedCritic::new(spec.n_agents, spec.state_dim, CriticKind::Continuous { action_dim: low.len() }, &cfg.critic, &mut init)?;
        Self::with_critic(env, eval_env, cfg, critic, init, seed)
    }
}

impl<C: ContinuousQ> OffPolicyTrainer<C> {
    /// `init` continues the initialization stream after the critic was built.
    pub fn with_critic(env: Box<dyn Environment>, eval_env: Box<dyn Environment>, cfg: DeterministicConfig, critic: C, mut init: SeedRng, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (low, high) = continuous_bounds(env.as_ref())?;
        let spec = env.spec().clone();
        let actors = DeterministicPolicySet::new(spec.n_agents, spec.obs_dim, &low, &high, &cfg.actor_hidden, &mut init)?;
        let critic_optim = critic.make_optim(cfg.critic_rms());
        let actor_optims = actors.actors().iter().map(|a| RmsProp::new(cfg.actor_rms(), a)).collect();
        let mut eval_env = eval_env;
        let probe = eval_env.reset(&mut stream_rng(seed, Stream::Analysis));
        Ok(Self {
            env,
            eval_env,
            gamma: spec.gamma,
            target_critic: critic.clone(),
            critic,
            critic_optim,
            target_actors: actors.clone(),
            actors,
            actor_optims,
            buffer: TransitionBuffer::new(cfg.buffer_capacity),
            cfg,
            current: None,
            episode_return: 0.0,
            steps: 0,
            critic_updates: 0,
            probe,
            env_rng: stream_rng(seed, Stream::Env),
            explore_rng: stream_rng(seed, Stream::Explore),
            buffer_rng: stream_rng(seed, Stream::Buffer),
            eval_rng: stream_rng(seed, Stream::Eval),
        })
    }

    pub fn critic(&self) -> &C {
        &self.critic
    }

    pub fn actors(&self) -> &DeterministicPolicySet {
        &self.actors
    }

    pub fn probe(&self) -> &Observation {
        &self.probe
    }

    /// `dQ_tot/da_i` at `a = mu(o)` for every agent at one observation.
    pub fn action_gradients_at(&self, obs: &Observation) -> Result<Vec<Vec<f64>>> {
        let actions: Vec<Array2<f64>> = self
            .actors
            .act(&obs.observations)?
            .into_iter()
            .map(|a| Array2::from_shape_vec((1, a.len()), a).map_err(|e| DopError::Shape(e.to_string())))
            .collect::<Result<_>>()?;
        let s = ArrayView2::from_shape((1, obs.state.len()), &obs.state).map_err(|e| DopError::Shape(e.to_string()))?;
        let grads = self.critic.policy_action_grads(s, &actions, &actions)?;
        Ok(grads.into_iter().map(|g| g.row(0).to_vec()).collect())
    }

    fn update(&mut self) -> Result<Option<f64>> {
        if self.steps < self.cfg.warmup || self.buffer.is_empty() {
            return Ok(None);
        }
        let batch = Batch::from_transitions(&self.buffer.sample(self.cfg.batch_size, &mut self.buffer_rng))?;
        let loss = det_critic_update(&mut self.critic, &mut self.critic_optim, &self.target_critic, &self.target_actors, &batch, self.gamma)?;
        if !loss.is_finite() {
            return Err(DopError::Divergence { step: self.steps, detail: format!("critic loss {loss}") });
        }
        self.critic_updates += 1;
        if self.critic_updates % self.cfg.policy_delay == 0 {
            let grads = det_actor_gradient(&self.critic, &self.actors, &batch)?;
            for ((opt, actor), g) in self.actor_optims.iter_mut().zip(self.actors.actors_mut()).zip(&grads) {
                opt.ascend(actor, g)?;
            }
            self.target_critic.soft_update_from(&self.critic, self.cfg.tau)?;
            self.target_actors.soft_update_from(&self.actors, self.cfg.tau)?;
        }
        Ok(Some(loss))
    }
}

impl<C: ContinuousQ> Trainer for OffPolicyTrainer<C> {
    fn env_steps(&self) -> u64 {
        self.steps
    }

    fn iterate(&mut self) -> Result<IterationStats> {
        let mut stats = IterationStats::default();
        let obs = match self.current.take() {
            Some(o) => o,
            None => {
                self.episode_return = 0.0;
                self.env.reset(&mut self.env_rng)
            }
        };
        let actions = self.actors.explore(&obs.observations, self.cfg.noise_sigma, &mut self.explore_rng)?;
        let result = self.env.step(&JointAction::Continuous(actions.clone()))?;
        self.steps += 1;
        self.episode_return += result.reward;
        let done = result.done();
        let next = Observation { observations: result.observations.clone(), state: result.state.clone() };
        self.buffer.push(Transition {
            state: obs.state,
            observations: obs.observations,
            actions,
            reward: result.reward,
            next_state: result.state,
            next_observations: result.observations,
            terminated: result.terminated,
        });
        if done {
            stats.train_return = Some(self.episode_return);
        } else {
            self.current = Some(next);
        }
        stats.loss_td = self.update()?;
        Ok(stats)
    }

    fn greedy_return(&mut self, episodes: usize) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..episodes {
            let mut obs = self.eval_env.reset(&mut self.eval_rng);
            loop {
                let a = self.actors.act(&obs.observations)?;
                let r = self.eval_env.step(&JointAction::Continuous(a))?;
                total += r.reward;
                if r.done() {
                    break;
                }
                obs = Observation { observations: r.observations, state: r.state };
            }
        }
        Ok(total / episodes.max(1) as f64)
    }

    fn k_spread(&self) -> Result<Option<f64>> {
        Ok(self.critic.mixing_weights(&self.probe.state)?.map(|k| {
            let max = k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = k.iter().copied().fold(f64::INFINITY, f64::min);
            max - min
        }))
    }
}
