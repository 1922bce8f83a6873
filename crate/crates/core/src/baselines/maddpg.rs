use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::coma::greedy_discrete_return;
use super::joint::{one_hot, JointCritic, JointMode};
use crate::analysis::{bias_report, variance_trace, GradientVarianceReport};
use crate::deterministic::{continuous_bounds, Batch, ContinuousQ, DeterministicConfig, OffPolicyTrainer, Transition, TransitionBuffer};
use crate::envs::{ActionSpace, Environment, JointAction, Observation};
use crate::error::{ensure, DopError, Result};
use crate::nn::{softmax, Grad, RmsProp, RmsPropConfig};
use crate::rng::{stream_rng, SeedRng, Stream};
use crate::stochastic::{argmax, StochasticPolicySet};
use crate::trainer::{IterationStats, Trainer};

/// Standard Gumbel draws `-ln(-ln u)`.
pub fn gumbel_noise(n: usize, rng: &mut SeedRng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // Open interval keeps both logarithms finite.
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

/// `softmax((logits + noise) / temperature)`.
pub fn gumbel_softmax(logits: &[f64], noise: &[f64], temperature: f64) -> Vec<f64> {
    let z: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / temperature).collect();
    softmax(&z)
}

/// Pulls `dL/dy` back to the logits of a relaxed sample `y`.
pub fn gumbel_softmax_backward(y: &[f64], dy: &[f64], temperature: f64) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, di)| yi * (di - dot) / temperature).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxationConfig {
    pub temperature: f64,
    /// Feed the one-hot argmax to the critic while differentiating through
    /// the relaxed sample.
    pub straight_through: bool,
    /// Own-noise draws held fixed when measuring gradient variance.
    pub variance_draws: usize,
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        Self { temperature: 1.0, straight_through: false, variance_draws: 8 }
    }
}

impl RelaxationConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.temperature > 0.0 && self.temperature.is_finite(), Config, "temperature must be positive");
        ensure!(self.variance_draws >= 1, Config, "need at least one variance draw");
        Ok(())
    }
}

/// MADDPG over continuous actions: the shared off-policy trainer with a
/// scalar joint critic.
pub type MaddpgTrainer = OffPolicyTrainer<JointCritic>;

pub fn maddpg_continuous(env: Box<dyn Environment>, eval_env: Box<dyn Environment>, cfg: DeterministicConfig, seed: u64) -> Result<MaddpgTrainer> {
    let (low, _) = continuous_bounds(env.as_ref())?;
    let spec = env.spec().clone();
    let mut init = stream_rng(seed, Stream::Init);
    let critic = JointCritic::new(spec.n_agents, spec.state_dim, low.len(), JointMode::Scalar, &cfg.joint_hidden, &mut init)?;
    OffPolicyTrainer::with_critic(env, eval_env, cfg, critic, init, seed)
}

/// What the critic sees for a relaxed sample.
fn critic_view(relax: &RelaxationConfig, y: &[f64]) -> Vec<f64> {
    if relax.straight_through {
        one_hot(argmax(y), y.len())
    } else {
        y.to_vec()
    }
}

/// Relaxed samples for every row of `logits`.
fn relaxed_rows(relax: &RelaxationConfig, logits: &Array2<f64>, rng: &mut SeedRng) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let g = gumbel_noise(row.len(), rng);
        let y = gumbel_softmax(row.as_slice().expect("standard layout"), &g, relax.temperature);
        row.assign(&ndarray::ArrayView1::from(&critic_view(relax, &y)));
    }
    out
}

/// MADDPG on discrete actions through a Gumbel-Softmax relaxation.
pub struct MaddpgDiscreteTrainer {
    env: Box<dyn Environment>,
    eval_env: Box<dyn Environment>,
    cfg: DeterministicConfig,
    relax: RelaxationConfig,
    gamma: f64,
    n_actions: usize,
    critic: JointCritic,
    target_critic: JointCritic,
    critic_optim: RmsProp,
    policies: StochasticPolicySet,
    target_policies: StochasticPolicySet,
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
    target_rng: SeedRng,
    analysis_rng: SeedRng,
}

impl MaddpgDiscreteTrainer {
    pub fn new(
        env: Box<dyn Environment>,
        eval_env: Box<dyn Environment>,
        cfg: DeterministicConfig,
        relax: RelaxationConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        relax.validate()?;
        let spec = env.spec().clone();
        let ActionSpace::Discrete(n_actions) = spec.action_space else {
            return Err(DopError::Config("the relaxed trainer needs a discrete action space".into()));
        };
        let mut init = stream_rng(seed, Stream::Init);
        let critic = JointCritic::new(spec.n_agents, spec.state_dim, n_actions, JointMode::Scalar, &cfg.joint_hidden, &mut init)?;
        let policies = StochasticPolicySet::new(spec.n_agents, spec.obs_dim, n_actions, 1, &cfg.actor_hidden, &mut init)?;
        let critic_optim = critic.make_rmsprop(RmsPropConfig { lr: cfg.critic_lr, alpha: cfg.rms_alpha, eps: cfg.rms_eps });
        let actor_cfg = RmsPropConfig { lr: cfg.actor_lr, alpha: cfg.rms_alpha, eps: cfg.rms_eps };
        let actor_optims = policies.actors().iter().map(|a| RmsProp::new(actor_cfg, a)).collect();
        let mut eval_env = eval_env;
        let probe = eval_env.reset(&mut stream_rng(seed, Stream::Analysis));
        Ok(Self {
            env,
            eval_env,
            relax,
            gamma: spec.gamma,
            n_actions,
            target_critic: critic.clone(),
            critic,
            critic_optim,
            target_policies: policies.clone(),
            policies,
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
            target_rng: stream_rng(seed, Stream::Target),
            analysis_rng: stream_rng(seed ^ 0x5eed, Stream::Analysis),
        })
    }

    pub fn critic(&self) -> &JointCritic {
        &self.critic
    }

    pub fn policies(&self) -> &StochasticPolicySet {
        &self.policies
    }

    fn critic_update(&mut self, batch: &Batch) -> Result<f64> {
        let n = self.policies.n_agents();
        let mut next_actions = Vec::with_capacity(n);
        for i in 0..n {
            let logits = self.target_policies.actors()[i].forward(batch.next_observations[i].view())?;
            next_actions.push(relaxed_rows(&self.relax, &logits, &mut self.target_rng));
        }
        let next_q = self.target_critic.q_values(batch.next_states.view(), &next_actions)?;
        let targets: Vec<f64> = (0..batch.len()).map(|r| batch.rewards[r] + if batch.terminated[r] { 0.0 } else { self.gamma * next_q[r] }).collect();
        let x = self.critic.scalar_input(batch.states.view(), &batch.actions)?;
        self.critic.regression_step(&mut self.critic_optim, x.view(), &vec![0; targets.len()], &targets)
    }

    /// Gradient of `Q(s, y_i(theta_i, noise), others)` for one agent over a batch,
    /// averaged over rows.
    fn agent_gradient(
        &self,
        agent: usize,
        states: ArrayView2<f64>,
        observations: ArrayView2<f64>,
        others: &[Array2<f64>],
        noise: &Array2<f64>,
    ) -> Result<Grad> {
        let actor = &self.policies.actors()[agent];
        let (logits, cache) = actor.forward_cached(observations)?;
        let rows = logits.nrows();
        let mut soft = Array2::zeros(logits.dim());
        let mut fed = Array2::zeros(logits.dim());
        for r in 0..rows {
            let y = gumbel_softmax(logits.row(r).as_slice().expect("standard layout"), noise.row(r).as_slice().expect("standard layout"), self.relax.temperature);
            fed.row_mut(r).assign(&ndarray::ArrayView1::from(&critic_view(&self.relax, &y)));
            soft.row_mut(r).assign(&ndarray::ArrayView1::from(&y));
        }
        let mut joint = others.to_vec();
        joint[agent] = fed;
        let dq = self.critic.action_grad(states, &joint, agent)?;
        let mut upstream = Array2::zeros(logits.dim());
        for r in 0..rows {
            let dl = gumbel_softmax_backward(soft.row(r).as_slice().expect("standard layout"), dq.row(r).as_slice().expect("standard layout"), self.relax.temperature);
            upstream.row_mut(r).assign(&(Array1::from(dl) / rows as f64));
        }
        Ok(actor.backward(&cache, upstream.view())?.0)
    }

    fn actor_update(&mut self, batch: &Batch) -> Result<()> {
        let n = self.policies.n_agents();
        let mut grads = Vec::with_capacity(n);
        for i in 0..n {
            let noise = Array2::from_shape_fn((batch.len(), self.n_actions), |_| gumbel_noise(1, &mut self.explore_rng)[0]);
            grads.push(self.agent_gradient(i, batch.states.view(), batch.observations[i].view(), &batch.actions, &noise)?);
        }
        for ((opt, actor), g) in self.actor_optims.iter_mut().zip(self.policies.actors_mut()).zip(&grads) {
            opt.ascend(actor, g)?;
        }
        Ok(())
    }

    fn update(&mut self) -> Result<Option<f64>> {
        if self.steps < self.cfg.warmup || self.buffer.is_empty() {
            return Ok(None);
        }
        let batch = Batch::from_transitions(&self.buffer.sample(self.cfg.batch_size, &mut self.buffer_rng))?;
        let loss = self.critic_update(&batch)?;
        if !loss.is_finite() {
            return Err(DopError::Divergence { step: self.steps, detail: format!("critic loss {loss}") });
        }
        self.critic_updates += 1;
        if self.critic_updates % self.cfg.policy_delay == 0 {
            self.actor_update(&batch)?;
            self.target_critic.soft_update_net(&self.critic, self.cfg.tau)?;
            for (t, o) in self.target_policies.actors_mut().iter_mut().zip(self.policies.actors()) {
                t.soft_update_from(o, self.cfg.tau)?;
            }
        }
        Ok(Some(loss))
    }
}

impl Trainer for MaddpgDiscreteTrainer {
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
        let mut relaxed = Vec::with_capacity(obs.observations.len());
        let mut discrete = Vec::with_capacity(obs.observations.len());
        for (i, o) in obs.observations.iter().enumerate() {
            let logits = self.policies.actors()[i].forward_one(o)?;
            let g = gumbel_noise(self.n_actions, &mut self.explore_rng);
            let y = gumbel_softmax(&logits, &g, self.relax.temperature);
            discrete.push(argmax(&y));
            relaxed.push(critic_view(&self.relax, &y));
        }
        let result = self.env.step(&JointAction::Discrete(discrete))?;
        self.steps += 1;
        self.episode_return += result.reward;
        let done = result.done();
        let next = Observation { observations: result.observations.clone(), state: result.state.clone() };
        self.buffer.push(Transition {
            state: obs.state,
            observations: obs.observations,
            actions: relaxed,
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
        greedy_discrete_return(self.eval_env.as_mut(), &self.policies, episodes, &mut self.eval_rng)
    }

    /// Holds agent i's own Gumbel noise at each of a few fixed draws and
    /// resamples the other agents' relaxed actions.
    fn gradient_variance(&mut self, n_samples: usize) -> Result<Option<GradientVarianceReport>> {
        ensure!(n_samples >= 2, Input, "gradient variance needs at least 2 samples");
        let n = self.policies.n_agents();
        let state = ArrayView2::from_shape((1, self.probe.state.len()), &self.probe.state).map_err(|e| DopError::Shape(e.to_string()))?;
        let logits: Vec<Vec<f64>> = (0..n).map(|j| self.policies.actors()[j].forward_one(&self.probe.observations[j])).collect::<Result<_>>()?;
        let mut per_agent = Vec::with_capacity(n);
        for i in 0..n {
            let obs = ArrayView2::from_shape((1, self.probe.observations[i].len()), &self.probe.observations[i]).map_err(|e| DopError::Shape(e.to_string()))?;
            let mut acc = 0.0;
            for _ in 0..self.relax.variance_draws {
                let own = Array2::from_shape_vec((1, self.n_actions), gumbel_noise(self.n_actions, &mut self.analysis_rng)).map_err(|e| DopError::Shape(e.to_string()))?;
                let mut samples = Vec::with_capacity(n_samples);
                for _ in 0..n_samples {
                    let others: Vec<Array2<f64>> = (0..n)
                        .map(|j| {
                            let g = gumbel_noise(self.n_actions, &mut self.analysis_rng);
                            let y = critic_view(&self.relax, &gumbel_softmax(&logits[j], &g, self.relax.temperature));
                            Array2::from_shape_vec((1, self.n_actions), y).map_err(|e| DopError::Shape(e.to_string()))
                        })
                        .collect::<Result<_>>()?;
                    samples.push(self.agent_gradient(i, state, obs, &others, &own)?.flatten());
                }
                acc += variance_trace(&samples)?;
            }
            per_agent.push(acc / self.relax.variance_draws as f64);
        }
        let mean = per_agent.iter().sum::<f64>() / n as f64;
        Ok(Some(GradientVarianceReport { per_agent, mean, n_samples, step: self.steps }))
    }

    fn bias(&self) -> Result<Option<f64>> {
        let Some(truth) = self.env.true_q_table() else {
            return Ok(None);
        };
        Ok(Some(bias_report(&self.critic.q_table(&self.probe.state)?, &truth)?.mean_abs_error))
    }

    fn argmax_actions(&self) -> Result<Option<Vec<usize>>> {
        let inputs = self.policies.inputs_at(std::slice::from_ref(&self.probe.observations), 0);
        Ok(Some(self.policies.greedy(&inputs)?))
    }
}
