use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::joint::{JointCritic, JointMode};
use crate::analysis::{bias_report, gradient_variance, GradientVarianceReport};
use crate::envs::{ActionSpace, Environment, Episode, JointAction, Observation};
use crate::error::{ensure, DopError, Result};
use crate::nn::{Grad, RmsProp, RmsPropConfig};
use crate::rng::{stream_rng, SeedRng, Stream};
use crate::stochastic::{on_targets, run_episode, sample_categorical, EpisodeBuffer, EpisodeValues, LinearSchedule, StochasticPolicySet};
use crate::trainer::{IterationStats, Trainer};

/// `A_i = Q(a) - sum_x pi_i(x) Q((a_-i, x))` from agent i's counterfactual row.
pub fn coma_advantage(counterfactuals: &[f64], pi_i: &[f64], action: usize) -> Result<f64> {
    ensure!(counterfactuals.len() == pi_i.len() && action < pi_i.len(), Shape, "counterfactual row and policy disagree");
    let baseline: f64 = counterfactuals.iter().zip(pi_i).map(|(q, p)| q * p).sum();
    Ok(counterfactuals[action] - baseline)
}

/// Agent `agent`'s counterfactual row `Q(s, (a_-i, x))` for every `x`.
pub fn counterfactual_row(critic: &JointCritic, state: &[f64], joint: &[usize], agent: usize, n_actions: usize) -> Result<Vec<f64>> {
    let s = ArrayView2::from_shape((1, state.len()), state).map_err(|e| DopError::Shape(e.to_string()))?;
    match critic.mode() {
        JointMode::Counterfactual => Ok(critic.counterfactual(s, agent, &[joint.to_vec()])?.row(0).to_vec()),
        JointMode::Scalar => {
            let rows: Vec<Vec<usize>> = (0..n_actions)
                .map(|x| {
                    let mut a = joint.to_vec();
                    a[agent] = x;
                    a
                })
                .collect();
            let states = Array2::from_shape_fn((n_actions, state.len()), |(_, c)| state[c]);
            Ok(critic.q_discrete(states.view(), &rows)?.to_vec())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComaConfig {
    pub critic_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub window: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    /// TD(lambda) decay of the critic target.
    pub lambda: f64,
    pub epsilon: LinearSchedule,
    pub on_capacity: usize,
    pub critic_batch: usize,
    pub actor_batch: usize,
    pub episodes_per_iteration: usize,
    pub target_update_period: u64,
}

impl Default for ComaConfig {
    fn default() -> Self {
        Self {
            critic_hidden: vec![64],
            actor_hidden: vec![64],
            window: 1,
            critic_lr: 5e-4,
            actor_lr: 5e-4,
            rms_alpha: 0.99,
            rms_eps: 1e-8,
            lambda: 0.8,
            epsilon: LinearSchedule::default(),
            on_capacity: 32,
            critic_batch: 16,
            actor_batch: 16,
            episodes_per_iteration: 1,
            target_update_period: 200,
        }
    }
}

impl ComaConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.window >= 1, Config, "window must be at least 1");
        ensure!(self.critic_lr > 0.0 && self.actor_lr > 0.0, Config, "learning rates must be positive");
        ensure!((0.0..1.0).contains(&self.rms_alpha) && self.rms_eps > 0.0, Config, "bad RMSProp constants");
        ensure!((0.0..=1.0).contains(&self.lambda), Config, "lambda outside [0, 1]");
        ensure!((0.0..=1.0).contains(&self.epsilon.start) && (0.0..=1.0).contains(&self.epsilon.end), Config, "epsilon outside [0, 1]");
        ensure!(self.on_capacity >= 1 && self.critic_batch >= 1 && self.actor_batch >= 1, Config, "batch sizes must be positive");
        ensure!(self.episodes_per_iteration >= 1 && self.target_update_period >= 1, Config, "periods must be positive");
        Ok(())
    }
}

/// On-policy actor-critic with a counterfactual joint critic.
pub struct ComaTrainer {
    env: Box<dyn Environment>,
    eval_env: Box<dyn Environment>,
    cfg: ComaConfig,
    gamma: f64,
    n_actions: usize,
    critic: JointCritic,
    target: JointCritic,
    critic_optim: RmsProp,
    policies: StochasticPolicySet,
    actor_optims: Vec<RmsProp>,
    buffer: EpisodeBuffer,
    version: u64,
    critic_updates: u64,
    steps: u64,
    probe: Observation,
    env_rng: SeedRng,
    explore_rng: SeedRng,
    buffer_rng: SeedRng,
    eval_rng: SeedRng,
    target_rng: SeedRng,
    analysis_rng: SeedRng,
}

impl ComaTrainer {
    pub fn new(env: Box<dyn Environment>, eval_env: Box<dyn Environment>, cfg: ComaConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let spec = env.spec().clone();
        let ActionSpace::Discrete(n_actions) = spec.action_space else {
            return Err(DopError::Config("COMA needs a discrete action space".into()));
        };
        let mut init = stream_rng(seed, Stream::Init);
        let critic = JointCritic::new(spec.n_agents, spec.state_dim, n_actions, JointMode::Counterfactual, &cfg.critic_hidden, &mut init)?;
        let policies = StochasticPolicySet::new(spec.n_agents, spec.obs_dim, n_actions, cfg.window, &cfg.actor_hidden, &mut init)?;
        let critic_optim = critic.make_rmsprop(RmsPropConfig { lr: cfg.critic_lr, alpha: cfg.rms_alpha, eps: cfg.rms_eps });
        let actor_cfg = RmsPropConfig { lr: cfg.actor_lr, alpha: cfg.rms_alpha, eps: cfg.rms_eps };
        let actor_optims = policies.actors().iter().map(|a| RmsProp::new(actor_cfg, a)).collect();
        let mut eval_env = eval_env;
        let probe = eval_env.reset(&mut stream_rng(seed, Stream::Analysis));
        Ok(Self {
            env,
            eval_env,
            gamma: spec.gamma,
            n_actions,
            target: critic.clone(),
            critic,
            critic_optim,
            policies,
            actor_optims,
            buffer: EpisodeBuffer::new(cfg.on_capacity),
            cfg,
            version: 0,
            critic_updates: 0,
            steps: 0,
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

    fn states_of(ep: &Episode, rows: std::ops::Range<usize>) -> Array2<f64> {
        let width = ep.states[0].len();
        Array2::from_shape_fn((rows.len(), width), |(r, c)| ep.states[rows.start + r][c])
    }

    /// TD(lambda) targets for every (episode step, agent) from the target critic.
    ///
    /// A time-limit cut bootstraps from agent i's counterfactual expectation at
    /// the final state, with the other agents' actions drawn from the policies.
    fn critic_update(&mut self) -> Result<f64> {
        let batch: Vec<Episode> = self.buffer.sample(self.cfg.critic_batch, &mut self.buffer_rng).into_iter().cloned().collect();
        let n = self.policies.n_agents();
        let mut inputs = Vec::new();
        let mut cols = Vec::new();
        let mut targets = Vec::new();
        for ep in &batch {
            let t_len = ep.len();
            let states = Self::states_of(ep, 0..t_len);
            let last = ep.states[t_len].clone();
            let last_inputs = self.policies.inputs_at(&ep.observations, t_len);
            let last_pis: Vec<Vec<f64>> = (0..n).map(|i| self.policies.probs_one(i, &last_inputs[i])).collect::<Result<_>>()?;
            let sampled: Vec<usize> = last_pis.iter().map(|p| sample_categorical(p, &mut self.target_rng)).collect();
            for i in 0..n {
                let q_all = self.target.counterfactual(states.view(), i, &ep.actions)?;
                let q: Vec<f64> = (0..t_len).map(|t| q_all[[t, ep.actions[t][i]]]).collect();
                let boundary = if ep.terminated {
                    0.0
                } else {
                    let row = counterfactual_row(&self.target, &last, &sampled, i, self.n_actions)?;
                    row.iter().zip(&last_pis[i]).map(|(q, p)| q * p).sum()
                };
                let mut expect = vec![0.0; t_len + 1];
                expect[t_len] = boundary;
                let values = EpisodeValues { q, expect, pi_joint: Vec::new(), expectation_terms: 0 };
                targets.extend(on_targets(&values, &ep.rewards, self.gamma, self.cfg.lambda));
                inputs.push(self.critic.counterfactual_input(states.view(), i, &ep.actions)?);
                cols.extend(ep.actions.iter().map(|a| a[i]));
            }
        }
        let views: Vec<ArrayView2<f64>> = inputs.iter().map(|x| x.view()).collect();
        let x = ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| DopError::Shape(e.to_string()))?;
        self.critic.regression_step(&mut self.critic_optim, x.view(), &cols, &targets)
    }

    fn actor_update(&mut self) -> Result<()> {
        let batch = self.buffer.current(self.version, self.cfg.actor_batch);
        let n = self.policies.n_agents();
        let total: usize = batch.iter().map(|e| e.len()).sum();
        if total == 0 {
            return Ok(());
        }
        let mut grads: Vec<Grad> = self.policies.actors().iter().map(Grad::zeros_like).collect();
        for ep in &batch {
            let t_len = ep.len();
            let states = Self::states_of(ep, 0..t_len);
            for (i, grad) in grads.iter_mut().enumerate() {
                let x = self.policies.episode_inputs(ep, i);
                let x = x.slice(ndarray::s![..t_len, ..]);
                let pis = self.policies.probs(i, x)?;
                let rows = self.critic.counterfactual(states.view(), i, &ep.actions)?;
                let mut weights = Vec::with_capacity(t_len);
                for t in 0..t_len {
                    let a = coma_advantage(rows.row(t).as_slice().expect("standard layout"), pis.row(t).as_slice().expect("standard layout"), ep.actions[t][i])?;
                    weights.push(a / total as f64);
                }
                let actions: Vec<usize> = ep.actions.iter().map(|a| a[i]).collect();
                grad.add_assign(&self.policies.log_prob_grad(i, x, &actions, &weights)?)?;
            }
        }
        debug_assert_eq!(grads.len(), n);
        for ((opt, actor), g) in self.actor_optims.iter_mut().zip(self.policies.actors_mut()).zip(&grads) {
            opt.ascend(actor, g)?;
        }
        self.version += 1;
        Ok(())
    }
}

impl Trainer for ComaTrainer {
    fn env_steps(&self) -> u64 {
        self.steps
    }

    fn iterate(&mut self) -> Result<IterationStats> {
        let mut stats = IterationStats::default();
        for _ in 0..self.cfg.episodes_per_iteration {
            let eps = self.cfg.epsilon.value(self.steps);
            let ep = run_episode(self.env.as_mut(), &self.policies, eps, self.version, &mut self.env_rng, &mut self.explore_rng)?;
            self.steps += ep.len() as u64;
            stats.train_return = Some(ep.total_return());
            self.buffer.push(ep);
        }
        let loss = self.critic_update()?;
        if !loss.is_finite() {
            return Err(DopError::Divergence { step: self.steps, detail: format!("critic loss {loss}") });
        }
        self.critic_updates += 1;
        if self.critic_updates % self.cfg.target_update_period == 0 {
            self.target = self.critic.clone();
        }
        self.actor_update()?;
        stats.loss_on = Some(loss);
        Ok(stats)
    }

    fn greedy_return(&mut self, episodes: usize) -> Result<f64> {
        greedy_discrete_return(self.eval_env.as_mut(), &self.policies, episodes, &mut self.eval_rng)
    }

    fn gradient_variance(&mut self, n_samples: usize) -> Result<Option<GradientVarianceReport>> {
        let inputs = self.policies.inputs_at(std::slice::from_ref(&self.probe.observations), 0);
        let n = self.policies.n_agents();
        let pis: Vec<Vec<f64>> = (0..n).map(|i| self.policies.probs_one(i, &inputs[i])).collect::<Result<_>>()?;
        let (critic, policies, state, na) = (&self.critic, &self.policies, &self.probe.state, self.n_actions);
        let report = gradient_variance(&pis, n_samples, self.steps, &mut self.analysis_rng, |i, joint| {
            let row = counterfactual_row(critic, state, joint, i, na)?;
            let adv = coma_advantage(&row, &pis[i], joint[i])?;
            let x = ArrayView2::from_shape((1, inputs[i].len()), &inputs[i]).map_err(|e| DopError::Shape(e.to_string()))?;
            Ok(policies.log_prob_grad(i, x, &[joint[i]], &[adv])?.flatten())
        })?;
        Ok(Some(report))
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

/// Mean return of greedy episodes for a softmax policy set.
pub(crate) fn greedy_discrete_return(env: &mut dyn Environment, policies: &StochasticPolicySet, episodes: usize, rng: &mut SeedRng) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..episodes {
        let first = env.reset(rng);
        let mut ep: Episode = Episode::new(first, 0);
        loop {
            let inputs = policies.inputs_at(&ep.observations, ep.len());
            let actions = policies.greedy(&inputs)?;
            let result = env.step(&JointAction::Discrete(actions.clone()))?;
            let done = result.done();
            ep.push(actions, Vec::new(), result);
            if done {
                break;
            }
        }
        total += ep.total_return();
    }
    Ok(total / episodes.max(1) as f64)
}
