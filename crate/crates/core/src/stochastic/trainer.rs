use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::actor::{actor_gradient, offpolicy_actor_gradient, ActorForm};
use super::policy::{argmax, LinearSchedule};
use super::targets::{batch_values, on_targets, require_behavior, tb_targets, TbConfig};
use super::{EpisodeBuffer, StochasticPolicySet};
use crate::analysis::{bias_report, decomposed_table, gradient_variance, GradientVarianceReport};
use crate::baselines::ExpectationMode;
use crate::critic::{CriticConfig, CriticGrad, CriticKind, CriticOptim, DecomposedCritic};
use crate::envs::{ActionSpace, Environment, Episode, JointAction, Observation};
use crate::error::{ensure, DopError, Result};
use crate::nn::{RmsProp, RmsPropConfig};
use crate::rng::{stream_rng, SeedRng, Stream};
use crate::trainer::{IterationStats, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StochasticConfig {
    pub tb: TbConfig,
    pub critic: CriticConfig,
    pub actor_hidden: Vec<usize>,
    /// Observations per actor input.
    pub window: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    pub epsilon: LinearSchedule,
    pub off_capacity: usize,
    pub on_capacity: usize,
    /// Most recent current-policy episodes used per actor update.
    pub actor_batch: usize,
    pub episodes_per_iteration: usize,
    pub actor_form: ActorForm,
    /// Train actors from the replay buffer with clipped importance ratios.
    pub offpolicy_actor: bool,
    pub ratio_clip: f64,
    /// Joint samples per expectation in the common tree-backup ablation.
    pub common_tb_samples: usize,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        Self {
            tb: TbConfig::default(),
            critic: CriticConfig::default(),
            actor_hidden: vec![64],
            window: 1,
            critic_lr: 1e-4,
            actor_lr: 5e-4,
            rms_alpha: 0.99,
            rms_eps: 1e-8,
            epsilon: LinearSchedule::default(),
            off_capacity: 5000,
            on_capacity: 32,
            actor_batch: 16,
            episodes_per_iteration: 1,
            actor_form: ActorForm::Plain,
            offpolicy_actor: false,
            ratio_clip: 10.0,
            common_tb_samples: 200,
        }
    }
}

impl StochasticConfig {
    pub fn validate(&self) -> Result<()> {
        self.tb.validate()?;
        ensure!(self.window >= 1, Config, "window must be at least 1");
        ensure!(self.critic_lr > 0.0 && self.actor_lr > 0.0, Config, "learning rates must be positive");
        ensure!((0.0..1.0).contains(&self.rms_alpha) && self.rms_eps > 0.0, Config, "bad RMSProp constants");
        ensure!(self.off_capacity >= 1 && self.on_capacity >= 1, Config, "buffer capacities must be positive");
        ensure!(self.actor_batch >= 1 && self.episodes_per_iteration >= 1, Config, "batch sizes must be positive");
        ensure!((0.0..=1.0).contains(&self.epsilon.start) && (0.0..=1.0).contains(&self.epsilon.end), Config, "epsilon outside [0, 1]");
        ensure!(self.ratio_clip > 0.0, Config, "ratio clip must be positive");
        ensure!(self.common_tb_samples >= 1, Config, "common tree backup needs at least one sample");
        Ok(())
    }
}

/// Variant of stochastic DOP selected by the algorithm tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StochasticMode {
    Dop,
    /// kappa forced to 0.
    OnPolicy,
    /// kappa forced to 1.
    OffPolicy,
    /// Expectations estimated from sampled joint actions.
    CommonTreeBackup,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub tb: Option<f64>,
    pub on: Option<f64>,
    pub total: f64,
    pub expectation_terms: usize,
}

struct Rows {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<usize>>,
    targets: Vec<f64>,
}

fn collect_rows(
    episodes: &[&Episode],
    critic: &DecomposedCritic,
    policies: &StochasticPolicySet,
    cfg: &TbConfig,
    gamma: f64,
    tree_backup: bool,
    rng: &mut SeedRng,
    terms: &mut usize,
) -> Result<Rows> {
    let mut rows = Rows { states: Vec::new(), actions: Vec::new(), targets: Vec::new() };
    let mode = if tree_backup { cfg.expectation } else { ExpectationMode::Decomposed };
    if tree_backup {
        for ep in episodes {
            require_behavior(ep)?;
        }
    }
    let values = batch_values(episodes, critic, policies, mode, rng)?;
    for (ep, values) in episodes.iter().zip(&values) {
        *terms += values.expectation_terms;
        let y = if tree_backup {
            tb_targets(values, &ep.rewards, gamma, cfg.tb_steps, cfg.lambda_tb)
        } else {
            on_targets(values, &ep.rewards, gamma, cfg.lambda_on)
        };
        rows.states.extend(ep.states[..ep.len()].iter().cloned());
        rows.actions.extend(ep.actions.iter().cloned());
        rows.targets.extend(y);
    }
    Ok(rows)
}

/// Mixed critic loss `kappa L_TB + (1 - kappa) L_On` and its gradient.
///
/// Targets come from the target critic and target policies and are constants.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss(
    critic: &DecomposedCritic,
    target_critic: &DecomposedCritic,
    target_policies: &StochasticPolicySet,
    off: &[&Episode],
    on: &[&Episode],
    cfg: &TbConfig,
    gamma: f64,
    rng: &mut SeedRng,
) -> Result<(LossComponents, CriticGrad)> {
    let use_tb = cfg.kappa > 0.0;
    let use_on = cfg.kappa < 1.0;
    ensure!(!use_tb || !off.is_empty(), State, "off-policy batch is empty");
    ensure!(!use_on || !on.is_empty(), State, "on-policy batch is empty");
    let mut terms = 0;
    let off_rows = if use_tb { collect_rows(off, target_critic, target_policies, cfg, gamma, true, rng, &mut terms)? } else { Rows { states: vec![], actions: vec![], targets: vec![] } };
    let on_rows = if use_on { collect_rows(on, target_critic, target_policies, cfg, gamma, false, rng, &mut terms)? } else { Rows { states: vec![], actions: vec![], targets: vec![] } };
    let n_off = off_rows.targets.len();
    let n_on = on_rows.targets.len();
    ensure!(n_off + n_on > 0, State, "critic batch has no transitions");

    let total_rows = n_off + n_on;
    let mut states = Array2::zeros((total_rows, critic.state_dim()));
    for (r, s) in off_rows.states.iter().chain(&on_rows.states).enumerate() {
        states.row_mut(r).assign(&ndarray::ArrayView1::from(s));
    }
    let actions: Vec<Vec<usize>> = off_rows.actions.into_iter().chain(on_rows.actions).collect();
    let targets: Vec<f64> = off_rows.targets.into_iter().chain(on_rows.targets).collect();
    let fwd = critic.forward(states.view(), None)?;
    let q = fwd.q_tot_discrete(&actions);

    let (mut sq_tb, mut sq_on) = (0.0, 0.0);
    let mut g = Array1::zeros(total_rows);
    for r in 0..total_rows {
        let err = q[r] - targets[r];
        if r < n_off {
            sq_tb += err * err;
            g[r] = 2.0 * cfg.kappa * err / n_off as f64;
        } else {
            sq_on += err * err;
            g[r] = 2.0 * (1.0 - cfg.kappa) * err / n_on as f64;
        }
    }
    let tb = (n_off > 0).then(|| sq_tb / n_off as f64);
    let on_loss = (n_on > 0).then(|| sq_on / n_on as f64);
    let total = cfg.kappa * tb.unwrap_or(0.0) + (1.0 - cfg.kappa) * on_loss.unwrap_or(0.0);

    let n = critic.n_agents();
    let mut dk = Array2::zeros((total_rows, n));
    let mut dq: Vec<Array2<f64>> = fwd.q.iter().map(|x| Array2::zeros(x.dim())).collect();
    for r in 0..total_rows {
        for i in 0..n {
            let a = actions[r][i];
            dk[[r, i]] = g[r] * fwd.q[i][[r, a]];
            dq[i][[r, a]] = g[r] * fwd.k[[r, i]];
        }
    }
    let (grad, _) = critic.backward(&fwd, dk.view(), g.view(), &dq)?;
    Ok((LossComponents { tb, on: on_loss, total, expectation_terms: terms }, grad))
}

#[allow(clippy::too_many_arguments)]
pub fn critic_loss_and_update(
    critic: &mut DecomposedCritic,
    optim: &mut CriticOptim,
    target_critic: &DecomposedCritic,
    target_policies: &StochasticPolicySet,
    off: &[&Episode],
    on: &[&Episode],
    cfg: &TbConfig,
    gamma: f64,
    rng: &mut SeedRng,
) -> Result<LossComponents> {
    let (loss, grad) = critic_loss(critic, target_critic, target_policies, off, on, cfg, gamma, rng)?;
    optim.step(critic, &grad)?;
    Ok(loss)
}

/// Runs one episode with the epsilon-mixture behavior policy.
pub fn run_episode(
    env: &mut dyn Environment,
    policies: &StochasticPolicySet,
    epsilon: f64,
    version: u64,
    env_rng: &mut SeedRng,
    explore_rng: &mut SeedRng,
) -> Result<Episode> {
    let first = env.reset(env_rng);
    let mut ep = Episode::new(first, version);
    loop {
        let inputs = policies.inputs_at(&ep.observations, ep.len());
        let (actions, probs) = policies.act(&inputs, epsilon, explore_rng)?;
        let result = env.step(&JointAction::Discrete(actions.clone()))?;
        let done = result.done();
        ep.push(actions, probs, result);
        if done {
            return Ok(ep);
        }
    }
}

pub struct StochasticTrainer {
    env: Box<dyn Environment>,
    eval_env: Box<dyn Environment>,
    cfg: StochasticConfig,
    gamma: f64,
    critic: DecomposedCritic,
    target_critic: DecomposedCritic,
    critic_optim: CriticOptim,
    policies: StochasticPolicySet,
    target_policies: StochasticPolicySet,
    actor_optims: Vec<RmsProp>,
    off_buffer: EpisodeBuffer,
    on_buffer: EpisodeBuffer,
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
    last_terms: usize,
}

impl StochasticTrainer {
    pub fn new(
        env: Box<dyn Environment>,
        eval_env: Box<dyn Environment>,
        mut cfg: StochasticConfig,
        mode: StochasticMode,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        match mode {
            StochasticMode::Dop => {}
            StochasticMode::OnPolicy => cfg.tb.kappa = 0.0,
            StochasticMode::OffPolicy => cfg.tb.kappa = 1.0,
            StochasticMode::CommonTreeBackup => {
                if cfg.tb.expectation == ExpectationMode::Decomposed {
                    cfg.tb.expectation = ExpectationMode::Sampled { samples: cfg.common_tb_samples };
                }
            }
        }
        let spec = env.spec().clone();
        let ActionSpace::Discrete(n_actions) = spec.action_space else {
            return Err(DopError::Config("stochastic DOP needs a discrete action space".into()));
        };
        let mut init = stream_rng(seed, Stream::Init);
        let critic = DecomposedCritic::new(spec.n_agents, spec.state_dim, CriticKind::Discrete { n_actions }, &cfg.critic, &mut init)?;
        let policies = StochasticPolicySet::new(spec.n_agents, spec.obs_dim, n_actions, cfg.window, &cfg.actor_hidden, &mut init)?;
        let critic_cfg = RmsPropConfig { lr: cfg.critic_lr, alpha: cfg.rms_alpha, eps: cfg.rms_eps };
        let actor_cfg = RmsPropConfig { lr: cfg.actor_lr, alpha: cfg.rms_alpha, eps: cfg.rms_eps };
        let critic_optim = CriticOptim::new(critic_cfg, &critic);
        let actor_optims = policies.actors().iter().map(|a| RmsProp::new(actor_cfg, a)).collect();
        let mut probe_env = eval_env;
        let probe = probe_env.reset(&mut stream_rng(seed, Stream::Analysis));
        Ok(Self {
            env,
            eval_env: probe_env,
            gamma: spec.gamma,
            target_critic: critic.clone(),
            critic,
            critic_optim,
            target_policies: policies.clone(),
            policies,
            actor_optims,
            off_buffer: EpisodeBuffer::new(cfg.off_capacity),
            on_buffer: EpisodeBuffer::new(cfg.on_capacity),
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
            last_terms: 0,
        })
    }

    pub fn critic(&self) -> &DecomposedCritic {
        &self.critic
    }

    pub fn policies(&self) -> &StochasticPolicySet {
        &self.policies
    }

    pub fn config(&self) -> &StochasticConfig {
        &self.cfg
    }

    /// Replay buffer of behavior episodes.
    pub fn replay(&self) -> &EpisodeBuffer {
        &self.off_buffer
    }

    /// Expectation summation terms spent by the last critic update.
    pub fn last_expectation_terms(&self) -> usize {
        self.last_terms
    }

    fn probe_inputs(&self) -> Vec<Vec<f64>> {
        self.policies.inputs_at(std::slice::from_ref(&self.probe.observations), 0)
    }

    fn actor_update(&mut self) -> Result<()> {
        let grads = if self.cfg.offpolicy_actor {
            let batch = self.off_buffer.sample(self.cfg.actor_batch, &mut self.buffer_rng);
            offpolicy_actor_gradient(&batch, &self.critic, &self.policies, self.cfg.actor_form, self.cfg.ratio_clip)?
        } else {
            let batch = self.on_buffer.current(self.version, self.cfg.actor_batch);
            actor_gradient(&batch, self.version, &self.critic, &self.policies, self.cfg.actor_form)?
        };
        for ((opt, actor), g) in self.actor_optims.iter_mut().zip(self.policies.actors_mut()).zip(&grads) {
            opt.ascend(actor, g)?;
        }
        self.version += 1;
        Ok(())
    }
}

impl Trainer for StochasticTrainer {
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
            self.off_buffer.push(ep.clone());
            self.on_buffer.push(ep);
        }
        self.actor_update()?;
        let off = self.off_buffer.sample(self.cfg.tb.off_batch, &mut self.buffer_rng);
        let on = self.on_buffer.sample(self.cfg.tb.on_batch, &mut self.buffer_rng);
        let loss = critic_loss_and_update(
            &mut self.critic,
            &mut self.critic_optim,
            &self.target_critic,
            &self.target_policies,
            &off,
            &on,
            &self.cfg.tb,
            self.gamma,
            &mut self.target_rng,
        )?;
        if !loss.total.is_finite() {
            return Err(DopError::Divergence { step: self.steps, detail: format!("critic loss {}", loss.total) });
        }
        self.last_terms = loss.expectation_terms;
        self.critic_updates += 1;
        if self.critic_updates % self.cfg.tb.target_update_period == 0 {
            self.target_critic = self.critic.clone();
            self.target_policies = self.policies.clone();
        }
        stats.loss_tb = loss.tb;
        stats.loss_on = loss.on;
        Ok(stats)
    }

    fn greedy_return(&mut self, episodes: usize) -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..episodes {
            let first = self.eval_env.reset(&mut self.eval_rng);
            let mut ep: Episode = Episode::new(first, self.version);
            loop {
                let inputs = self.policies.inputs_at(&ep.observations, ep.len());
                let actions = self.policies.greedy(&inputs)?;
                let result = self.eval_env.step(&JointAction::Discrete(actions.clone()))?;
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

    fn k_spread(&self) -> Result<Option<f64>> {
        let (_, k, _) = self.critic.local_values(&self.probe.state)?;
        let max = k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = k.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Some(max - min))
    }

    fn gradient_variance(&mut self, n_samples: usize) -> Result<Option<GradientVarianceReport>> {
        let inputs = self.probe_inputs();
        let n = self.policies.n_agents();
        let pis: Vec<Vec<f64>> = (0..n).map(|i| self.policies.probs_one(i, &inputs[i])).collect::<Result<_>>()?;
        let (q, k, _) = self.critic.local_values(&self.probe.state)?;
        let policies = &self.policies;
        let form = self.cfg.actor_form;
        let report = gradient_variance(&pis, n_samples, self.steps, &mut self.analysis_rng, |i, joint| {
            // Agent i's per-sample term reads only its own action.
            let a = joint[i];
            let credit = match form {
                ActorForm::Plain => k[i] * q[i][a],
                ActorForm::Advantage => super::aristocrat_utility(k[i], &q[i], &pis[i], a),
            };
            let x = ndarray::ArrayView2::from_shape((1, inputs[i].len()), &inputs[i]).map_err(|e| DopError::Shape(e.to_string()))?;
            Ok(policies.log_prob_grad(i, x, &[a], &[credit])?.flatten())
        })?;
        Ok(Some(report))
    }

    fn bias(&self) -> Result<Option<f64>> {
        let Some(truth) = self.env.true_q_table() else {
            return Ok(None);
        };
        let est = decomposed_table(&self.critic, &self.probe.state)?;
        Ok(Some(bias_report(&est, &truth)?.mean_abs_error))
    }

    fn argmax_actions(&self) -> Result<Option<Vec<usize>>> {
        let (q, _, _) = self.critic.local_values(&self.probe.state)?;
        Ok(Some(q.iter().map(|qi| argmax(qi)).collect()))
    }
}
