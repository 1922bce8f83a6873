use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::deterministic::ContinuousQ;
use crate::envs::{joint_count, joint_from_index};
use crate::error::{ensure, DopError, Result};
use crate::nn::{Mlp, OutputActivation, RmsProp, RmsPropConfig};
use crate::rng::SeedRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointMode {
    /// `Q(s, a_1..a_n)` as one scalar.
    Scalar,
    /// For a designated agent, `Q(s, (a_-i, x))` for every own action `x`,
    /// from the state, the agent id and the other agents' one-hot actions.
    Counterfactual,
}

/// Centralized critic over the joint action.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCritic {
    n_agents: usize,
    state_dim: usize,
    /// Width of one agent's action encoding (one-hot size for discrete actions).
    action_width: usize,
    mode: JointMode,
    net: Mlp,
}

pub fn one_hot(a: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[a] = 1.0;
    v
}

impl JointCritic {
    pub fn new(n_agents: usize, state_dim: usize, action_width: usize, mode: JointMode, hidden: &[usize], rng: &mut SeedRng) -> Result<Self> {
        ensure!(n_agents >= 1 && state_dim >= 1 && action_width >= 1, Config, "joint critic sizes must be positive");
        let (input, output) = match mode {
            JointMode::Scalar => (state_dim + n_agents * action_width, 1),
            JointMode::Counterfactual => (state_dim + n_agents + (n_agents - 1) * action_width, action_width),
        };
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        Ok(Self { n_agents, state_dim, action_width, mode, net: Mlp::new(&widths, OutputActivation::Identity, rng) })
    }

    pub fn mode(&self) -> JointMode {
        self.mode
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn make_rmsprop(&self, config: RmsPropConfig) -> RmsProp {
        RmsProp::new(config, &self.net)
    }

    /// Scalar-mode input rows: state followed by every agent's action block.
    pub fn scalar_input(&self, states: ArrayView2<f64>, actions: &[Array2<f64>]) -> Result<Array2<f64>> {
        ensure!(self.mode == JointMode::Scalar, Unsupported, "scalar input needs a scalar critic");
        ensure!(states.ncols() == self.state_dim, Shape, "state width {} != {}", states.ncols(), self.state_dim);
        ensure!(actions.len() == self.n_agents, Shape, "need {} action blocks", self.n_agents);
        let rows = states.nrows();
        let mut x = Array2::zeros((rows, self.state_dim + self.n_agents * self.action_width));
        x.slice_mut(s![.., ..self.state_dim]).assign(&states);
        for (i, a) in actions.iter().enumerate() {
            ensure!(a.dim() == (rows, self.action_width), Shape, "action block {i} has shape {:?}", a.dim());
            let start = self.state_dim + i * self.action_width;
            x.slice_mut(s![.., start..start + self.action_width]).assign(a);
        }
        Ok(x)
    }

    /// Counterfactual-mode input rows for `agent` given discrete joint actions.
    pub fn counterfactual_input(&self, states: ArrayView2<f64>, agent: usize, joint: &[Vec<usize>]) -> Result<Array2<f64>> {
        ensure!(self.mode == JointMode::Counterfactual, Unsupported, "counterfactual input needs a counterfactual critic");
        ensure!(states.ncols() == self.state_dim && states.nrows() == joint.len(), Shape, "states and actions disagree");
        ensure!(agent < self.n_agents, Input, "agent {agent} out of range");
        let mut x = Array2::zeros((joint.len(), self.state_dim + self.n_agents + (self.n_agents - 1) * self.action_width));
        x.slice_mut(s![.., ..self.state_dim]).assign(&states);
        for (r, a) in joint.iter().enumerate() {
            ensure!(a.len() == self.n_agents && a.iter().all(|&x| x < self.action_width), Input, "bad joint action {a:?}");
            x[[r, self.state_dim + agent]] = 1.0;
            let mut block = 0;
            for (j, &aj) in a.iter().enumerate() {
                if j == agent {
                    continue;
                }
                x[[r, self.state_dim + self.n_agents + block * self.action_width + aj]] = 1.0;
                block += 1;
            }
        }
        Ok(x)
    }

    /// `B x |A|` counterfactual values for `agent`; row `r` ignores `joint[r][agent]`.
    pub fn counterfactual(&self, states: ArrayView2<f64>, agent: usize, joint: &[Vec<usize>]) -> Result<Array2<f64>> {
        self.net.forward(self.counterfactual_input(states, agent, joint)?.view())
    }

    /// `Q_tot(s, a)` for discrete joint actions; counterfactual critics read agent 0's head.
    pub fn q_discrete(&self, states: ArrayView2<f64>, joint: &[Vec<usize>]) -> Result<Array1<f64>> {
        match self.mode {
            JointMode::Scalar => {
                let blocks: Vec<Array2<f64>> = (0..self.n_agents)
                    .map(|i| Array2::from_shape_fn((joint.len(), self.action_width), |(r, c)| if joint[r][i] == c { 1.0 } else { 0.0 }))
                    .collect();
                Ok(self.net.forward(self.scalar_input(states, &blocks)?.view())?.column(0).to_owned())
            }
            JointMode::Counterfactual => {
                let out = self.counterfactual(states, 0, joint)?;
                Ok(Array1::from_shape_fn(joint.len(), |r| out[[r, joint[r][0]]]))
            }
        }
    }

    /// `Q_tot` at every flat joint action of one state.
    pub fn q_table(&self, state: &[f64]) -> Result<Vec<f64>> {
        let total = joint_count(self.n_agents, self.action_width);
        let joint: Vec<Vec<usize>> = (0..total).map(|j| joint_from_index(j, self.n_agents, self.action_width)).collect();
        let states = Array2::from_shape_fn((total, self.state_dim), |(_, c)| state[c]);
        Ok(self.q_discrete(states.view(), &joint)?.to_vec())
    }

    /// One RMSProp step on `mean (target - out[r, col[r]])^2` for any mode.
    pub fn regression_step(&mut self, optim: &mut RmsProp, inputs: ArrayView2<f64>, cols: &[usize], targets: &[f64]) -> Result<f64> {
        ensure!(inputs.nrows() == targets.len() && cols.len() == targets.len() && !targets.is_empty(), Shape, "regression batch sizes disagree");
        let (out, cache) = self.net.forward_cached(inputs)?;
        let rows = targets.len() as f64;
        let mut upstream = Array2::zeros(out.dim());
        let mut loss = 0.0;
        for (r, (&c, &y)) in cols.iter().zip(targets).enumerate() {
            let err = out[[r, c]] - y;
            loss += err * err / rows;
            upstream[[r, c]] = 2.0 * err / rows;
        }
        let (grad, _) = self.net.backward(&cache, upstream.view())?;
        optim.step(&mut self.net, &grad)?;
        Ok(loss)
    }

    pub fn soft_update_net(&mut self, online: &JointCritic, alpha: f64) -> Result<()> {
        self.net.soft_update_from(&online.net, alpha)
    }

    /// `dQ/da_i` of a scalar critic at the given joint actions, rows independent.
    pub fn action_grad(&self, states: ArrayView2<f64>, actions: &[Array2<f64>], agent: usize) -> Result<Array2<f64>> {
        let x = self.scalar_input(states, actions)?;
        let (out, cache) = self.net.forward_cached(x.view())?;
        let (_, dx) = self.net.backward(&cache, Array2::ones(out.dim()).view())?;
        let start = self.state_dim + agent * self.action_width;
        Ok(dx.slice(s![.., start..start + self.action_width]).as_standard_layout().into_owned())
    }
}

impl ContinuousQ for JointCritic {
    type Optim = RmsProp;

    fn make_optim(&self, config: RmsPropConfig) -> RmsProp {
        self.make_rmsprop(config)
    }

    fn q_values(&self, states: ArrayView2<f64>, actions: &[Array2<f64>]) -> Result<Array1<f64>> {
        Ok(self.net.forward(self.scalar_input(states, actions)?.view())?.column(0).to_owned())
    }

    fn td_step(&mut self, optim: &mut RmsProp, states: ArrayView2<f64>, actions: &[Array2<f64>], targets: &Array1<f64>) -> Result<f64> {
        let x = self.scalar_input(states, actions)?;
        self.regression_step(optim, x.view(), &vec![0; targets.len()], targets.as_slice().ok_or_else(|| DopError::Shape("targets not contiguous".into()))?)
    }

    fn policy_action_grads(&self, states: ArrayView2<f64>, buffer_actions: &[Array2<f64>], policy_actions: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        (0..self.n_agents)
            .map(|i| {
                let mut joint = buffer_actions.to_vec();
                joint[i] = policy_actions[i].clone();
                self.action_grad(states, &joint, i)
            })
            .collect()
    }

    fn soft_update_from(&mut self, online: &Self, alpha: f64) -> Result<()> {
        self.soft_update_net(online, alpha)
    }
}
