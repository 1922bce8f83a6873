//! Linearly decomposed centralized critic.
//!
//! `Q_tot(s, a) = sum_i k_i(s) Q_i(s, a_i) + b(s)` with `k_i >= 0`. Utilities
//! read only the global state, the agent id and (for continuous control) the
//! agent's own action.

mod lsq;

pub use lsq::{fit_least_squares_tabular, LsqOptions, TabularFit};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::envs::JointAction;
use crate::error::{ensure, DopError, Result};
use crate::nn::{read_tensors, write_tensors, Activations, Grad, Mlp, NamedTensor, OutputActivation, RmsProp, RmsPropConfig};
use crate::rng::SeedRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    /// Hidden widths of the utility network(s).
    pub hidden: Vec<usize>,
    /// Hidden widths of the mixing networks; empty means linear in the state.
    pub mixer_hidden: Vec<usize>,
    /// One utility network with a one-hot agent id instead of n networks.
    pub shared_utility: bool,
    /// Divide `|k_i|` by their sum.
    pub normalize_weights: bool,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { hidden: vec![64], mixer_hidden: Vec::new(), shared_utility: true, normalize_weights: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticKind {
    /// Utilities output one value per action.
    Discrete { n_actions: usize },
    /// Utilities take the agent's action as input and output a scalar.
    Continuous { action_dim: usize },
}

/// One decomposed evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticEval {
    pub q_tot: f64,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedCritic {
    n_agents: usize,
    state_dim: usize,
    kind: CriticKind,
    normalize: bool,
    shared: bool,
    utility: Vec<Mlp>,
    mixer_k: Mlp,
    mixer_b: Mlp,
}

/// Batched forward pass. Rows of every array are batch entries.
#[derive(Debug, Clone)]
pub struct CriticForward {
    /// Mixing weights, `B x n`.
    pub k: Array2<f64>,
    pub b: Array1<f64>,
    /// Per-agent utilities: `B x |A|` (discrete) or `B x 1` (continuous).
    pub q: Vec<Array2<f64>>,
    raw_k: Array2<f64>,
    k_cache: Activations,
    b_cache: Activations,
    utility_cache: Vec<Activations>,
}

impl CriticForward {
    pub fn rows(&self) -> usize {
        self.b.len()
    }

    /// `Q_tot` at the given per-agent discrete actions for the first
    /// `actions.len()` rows.
    pub fn q_tot_discrete(&self, actions: &[Vec<usize>]) -> Array1<f64> {
        Array1::from_shape_fn(actions.len(), |r| {
            self.b[r] + (0..self.q.len()).map(|i| self.k[[r, i]] * self.q[i][[r, actions[r][i]]]).sum::<f64>()
        })
    }

    /// `Q_tot` for continuous critics.
    pub fn q_tot_continuous(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.rows(), |r| {
            self.b[r] + (0..self.q.len()).map(|i| self.k[[r, i]] * self.q[i][[r, 0]]).sum::<f64>()
        })
    }

    /// `sum_i k_i E_{pi_i}[Q_i] + b`, with `policies[i]` a `B x |A|` matrix.
    pub fn expected_q(&self, policies: &[Array2<f64>]) -> Array1<f64> {
        Array1::from_shape_fn(self.rows(), |r| {
            self.b[r]
                + (0..self.q.len())
                    .map(|i| self.k[[r, i]] * self.q[i].row(r).dot(&policies[i].row(r)))
                    .sum::<f64>()
        })
    }
}

/// Parameter gradient of a [`DecomposedCritic`].
#[derive(Debug, Clone, PartialEq)]
pub struct CriticGrad {
    pub utility: Vec<Grad>,
    pub k: Grad,
    pub b: Grad,
}

impl CriticGrad {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.utility {
            out.extend(g.flatten());
        }
        out.extend(self.k.flatten());
        out.extend(self.b.flatten());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.utility.iter().all(Grad::is_finite) && self.k.is_finite() && self.b.is_finite()
    }
}

impl DecomposedCritic {
    pub fn new(n_agents: usize, state_dim: usize, kind: CriticKind, config: &CriticConfig, rng: &mut SeedRng) -> Result<Self> {
        ensure!(n_agents >= 1, Config, "critic needs at least one agent");
        ensure!(state_dim >= 1, Config, "critic needs a non-empty state");
        let (extra, out) = match kind {
            CriticKind::Discrete { n_actions } => {
                ensure!(n_actions >= 1, Config, "empty action set");
                (0, n_actions)
            }
            CriticKind::Continuous { action_dim } => {
                ensure!(action_dim >= 1, Config, "empty action dimension");
                (action_dim, 1)
            }
        };
        let id = if config.shared_utility { n_agents } else { 0 };
        let widths = |input: usize, hidden: &[usize], out: usize| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(out);
            w
        };
        let u_widths = widths(state_dim + id + extra, &config.hidden, out);
        let count = if config.shared_utility { 1 } else { n_agents };
        let utility = (0..count).map(|_| Mlp::new(&u_widths, OutputActivation::Identity, rng)).collect();
        let mixer_k = Mlp::new(&widths(state_dim, &config.mixer_hidden, n_agents), OutputActivation::Absolute, rng);
        let mixer_b = Mlp::new(&widths(state_dim, &config.mixer_hidden, 1), OutputActivation::Identity, rng);
        Ok(Self { n_agents, state_dim, kind, normalize: config.normalize_weights, shared: config.shared_utility, utility, mixer_k, mixer_b })
    }

    /// Builds a critic from explicit networks; used by tests and checkpoints.
    pub fn from_parts(
        n_agents: usize,
        state_dim: usize,
        kind: CriticKind,
        normalize: bool,
        utility: Vec<Mlp>,
        mixer_k: Mlp,
        mixer_b: Mlp,
    ) -> Result<Self> {
        ensure!(utility.len() == 1 || utility.len() == n_agents, Config, "need 1 or {n_agents} utility networks");
        let extra = match kind {
            CriticKind::Discrete { .. } => 0,
            CriticKind::Continuous { action_dim } => action_dim,
        };
        // A single network is shared (and takes an agent id) when its input is wide enough.
        let shared = utility.len() == 1 && utility[0].input_dim() == state_dim + n_agents + extra;
        let expected_in = state_dim + if shared { n_agents } else { 0 } + extra;
        for u in &utility {
            ensure!(u.input_dim() == expected_in, Shape, "utility input width {} != {expected_in}", u.input_dim());
            let out = match kind {
                CriticKind::Discrete { n_actions } => n_actions,
                CriticKind::Continuous { .. } => 1,
            };
            ensure!(u.output_dim() == out, Shape, "utility output width {} != {out}", u.output_dim());
        }
        ensure!(mixer_k.input_dim() == state_dim && mixer_k.output_dim() == n_agents, Shape, "mixer_k must map state to n weights");
        ensure!(mixer_k.output_activation() == OutputActivation::Absolute, Config, "mixer_k needs an absolute output");
        ensure!(mixer_b.input_dim() == state_dim && mixer_b.output_dim() == 1, Shape, "mixer_b must map state to a scalar");
        Ok(Self { n_agents, state_dim, kind, normalize, shared, utility, mixer_k, mixer_b })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn kind(&self) -> CriticKind {
        self.kind
    }

    pub fn utility_nets(&self) -> &[Mlp] {
        &self.utility
    }

    pub fn mixer_k(&self) -> &Mlp {
        &self.mixer_k
    }

    pub fn mixer_b(&self) -> &Mlp {
        &self.mixer_b
    }

    fn shared(&self) -> bool {
        self.shared
    }

    fn action_extra(&self) -> usize {
        match self.kind {
            CriticKind::Discrete { .. } => 0,
            CriticKind::Continuous { action_dim } => action_dim,
        }
    }

    fn utility_input(&self, states: ArrayView2<f64>, agent: usize, actions: Option<ArrayView2<f64>>) -> Array2<f64> {
        let id = if self.shared() { self.n_agents } else { 0 };
        let extra = self.action_extra();
        let mut x = Array2::zeros((states.nrows(), self.state_dim + id + extra));
        x.slice_mut(s![.., ..self.state_dim]).assign(&states);
        if id > 0 {
            x.column_mut(self.state_dim + agent).fill(1.0);
        }
        if let Some(a) = actions {
            x.slice_mut(s![.., self.state_dim + id..]).assign(&a);
        }
        x
    }

    fn net_for(&self, agent: usize) -> &Mlp {
        &self.utility[if self.utility.len() == 1 { 0 } else { agent }]
    }

    fn check_states(&self, states: &ArrayView2<f64>) -> Result<()> {
        ensure!(states.ncols() == self.state_dim, Shape, "state width {} != {}", states.ncols(), self.state_dim);
        Ok(())
    }

    /// Mixing weights for a batch of states, normalized unless disabled.
    pub fn weights(&self, states: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_states(&states)?;
        let raw = self.mixer_k.forward(states)?;
        let k = self.normalized(&raw);
        let b = self.mixer_b.forward(states)?.column(0).to_owned();
        Ok((k, b))
    }

    fn normalized(&self, raw: &Array2<f64>) -> Array2<f64> {
        if !self.normalize {
            return raw.clone();
        }
        let n = self.n_agents as f64;
        let mut k = raw.clone();
        for mut row in k.rows_mut() {
            let total = row.sum();
            if total > 0.0 {
                row.mapv_inplace(|v| v / total);
            } else {
                row.fill(1.0 / n);
            }
        }
        k
    }

    /// Batched forward pass. `actions` must be given (one `B x d` matrix per
    /// agent) for continuous critics and omitted for discrete ones.
    pub fn forward(&self, states: ArrayView2<f64>, actions: Option<&[ArrayView2<f64>]>) -> Result<CriticForward> {
        self.check_states(&states)?;
        match (self.kind, actions) {
            (CriticKind::Discrete { .. }, None) => {}
            (CriticKind::Continuous { action_dim }, Some(a)) => {
                ensure!(a.len() == self.n_agents, Shape, "expected {} action blocks, got {}", self.n_agents, a.len());
                for ai in a {
                    ensure!(ai.dim() == (states.nrows(), action_dim), Shape, "action block shape {:?}", ai.dim());
                }
            }
            (CriticKind::Discrete { .. }, Some(_)) => {
                return Err(DopError::Shape("discrete critics index utilities by action instead of taking action inputs".into()))
            }
            (CriticKind::Continuous { .. }, None) => return Err(DopError::Shape("continuous critic needs action inputs".into())),
        }
        let (raw_k, k_cache) = self.mixer_k.forward_cached(states)?;
        let k = self.normalized(&raw_k);
        let (b, b_cache) = self.mixer_b.forward_cached(states)?;
        let mut q = Vec::with_capacity(self.n_agents);
        let mut utility_cache = Vec::with_capacity(self.n_agents);
        for i in 0..self.n_agents {
            let x = self.utility_input(states, i, actions.map(|a| a[i]));
            let (qi, cache) = self.net_for(i).forward_cached(x.view())?;
            q.push(qi);
            utility_cache.push(cache);
        }
        Ok(CriticForward { k, b: b.column(0).to_owned(), q, raw_k, k_cache, b_cache, utility_cache })
    }

    /// Backpropagates upstream gradients on the decomposition components.
    ///
    /// `dk` is `B x n` on the normalized weights, `db` has length `B`, `dq[i]`
    /// matches `fwd.q[i]`. Returns the parameter gradient and, for continuous
    /// critics, the gradient with respect to every agent's action input.
    pub fn backward(
        &self,
        fwd: &CriticForward,
        dk: ArrayView2<f64>,
        db: ArrayView1<f64>,
        dq: &[Array2<f64>],
    ) -> Result<(CriticGrad, Vec<Array2<f64>>)> {
        let rows = fwd.rows();
        ensure!(dk.dim() == (rows, self.n_agents) && db.len() == rows && dq.len() == self.n_agents, Shape, "upstream shapes do not match the forward pass");
        let draw = if self.normalize {
            let mut d = Array2::zeros((rows, self.n_agents));
            for r in 0..rows {
                let total = fwd.raw_k.row(r).sum();
                if total > 0.0 {
                    let centered = dk.row(r).dot(&fwd.k.row(r));
                    for j in 0..self.n_agents {
                        d[[r, j]] = (dk[[r, j]] - centered) / total;
                    }
                }
            }
            d
        } else {
            dk.to_owned()
        };
        let (k_grad, _) = self.mixer_k.backward(&fwd.k_cache, draw.view())?;
        let (b_grad, _) = self.mixer_b.backward(&fwd.b_cache, db.insert_axis(Axis(1)))?;
        let mut utility: Vec<Grad> = self.utility.iter().map(Grad::zeros_like).collect();
        let mut action_grads = Vec::new();
        let offset = self.state_dim + if self.shared() { self.n_agents } else { 0 };
        for i in 0..self.n_agents {
            ensure!(dq[i].dim() == fwd.q[i].dim(), Shape, "dq[{i}] shape mismatch");
            let net = if self.utility.len() == 1 { 0 } else { i };
            let (g, dx) = self.utility[net].backward(&fwd.utility_cache[i], dq[i].view())?;
            utility[net].add_assign(&g)?;
            if let CriticKind::Continuous { .. } = self.kind {
                action_grads.push(dx.slice(s![.., offset..]).to_owned());
            }
        }
        Ok((CriticGrad { utility, k: k_grad, b: b_grad }, action_grads))
    }

    fn state_row<'a>(&self, state: &'a [f64]) -> Result<ArrayView2<'a, f64>> {
        ensure!(state.len() == self.state_dim, Shape, "state length {} != {}", state.len(), self.state_dim);
        ArrayView2::from_shape((1, state.len()), state).map_err(|e| DopError::Shape(e.to_string()))
    }

    pub fn eval(&self, state: &[f64], action: &JointAction) -> Result<CriticEval> {
        ensure!(action.len() == self.n_agents, Shape, "joint action has {} entries for {} agents", action.len(), self.n_agents);
        let s = self.state_row(state)?;
        let (fwd, picks) = match (self.kind, action) {
            (CriticKind::Discrete { n_actions }, JointAction::Discrete(a)) => {
                ensure!(a.iter().all(|&x| x < n_actions), Input, "action out of range: {a:?}");
                (self.forward(s, None)?, a.clone())
            }
            (CriticKind::Continuous { action_dim }, JointAction::Continuous(a)) => {
                ensure!(a.iter().all(|x| x.len() == action_dim), Shape, "action dimension mismatch");
                let blocks: Vec<ArrayView2<f64>> = a.iter().map(|x| ArrayView2::from_shape((1, action_dim), x).unwrap()).collect();
                (self.forward(s, Some(&blocks))?, vec![0; self.n_agents])
            }
            _ => return Err(DopError::Shape("joint action kind does not match the critic".into())),
        };
        let q: Vec<f64> = picks.iter().enumerate().map(|(i, &a)| fwd.q[i][[0, a]]).collect();
        let k = fwd.k.row(0).to_vec();
        let b = fwd.b[0];
        let q_tot = k.iter().zip(&q).map(|(k, q)| k * q).sum::<f64>() + b;
        Ok(CriticEval { q_tot, q, k, b })
    }

    /// All local values of a discrete critic at one state, `n x |A|`.
    pub fn local_values(&self, state: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>, f64)> {
        let CriticKind::Discrete { .. } = self.kind else {
            return Err(DopError::Unsupported("local value tables need discrete actions".into()));
        };
        let fwd = self.forward(self.state_row(state)?, None)?;
        Ok((fwd.q.iter().map(|q| q.row(0).to_vec()).collect(), fwd.k.row(0).to_vec(), fwd.b[0]))
    }

    /// `E_pi[Q_tot(s, .)]` through the decomposition.
    pub fn expected_q(&self, state: &[f64], policies: &[Vec<f64>]) -> Result<f64> {
        self.expected_q_counted(state, policies).map(|(v, _)| v)
    }

    /// [`DecomposedCritic::expected_q`] plus the number of local values read.
    pub fn expected_q_counted(&self, state: &[f64], policies: &[Vec<f64>]) -> Result<(f64, usize)> {
        let CriticKind::Discrete { n_actions } = self.kind else {
            return Err(DopError::Unsupported("expected_q needs a discrete action space".into()));
        };
        ensure!(policies.len() == self.n_agents, Shape, "need {} policies", self.n_agents);
        ensure!(policies.iter().all(|p| p.len() == n_actions), Shape, "policy width must be {n_actions}");
        let (q, k, b) = self.local_values(state)?;
        let mut reads = 0;
        let mut total = b;
        for i in 0..self.n_agents {
            let mut e = 0.0;
            for a in 0..n_actions {
                e += policies[i][a] * q[i][a];
                reads += 1;
            }
            total += k[i] * e;
        }
        Ok((total, reads))
    }

    /// `k_i(s) dQ_i(s, a_i)/da_i` for a continuous critic.
    pub fn grad_wrt_action(&self, state: &[f64], action: &JointAction, agent: usize) -> Result<Vec<f64>> {
        let CriticKind::Continuous { action_dim } = self.kind else {
            return Err(DopError::Unsupported("action gradients need a continuous action space".into()));
        };
        let JointAction::Continuous(a) = action else {
            return Err(DopError::Shape("expected a continuous joint action".into()));
        };
        ensure!(agent < self.n_agents && a.len() == self.n_agents, Shape, "bad agent index or arity");
        let ai = &a[agent];
        ensure!(ai.len() == action_dim, Shape, "action dimension mismatch");
        let s = self.state_row(state)?;
        let ki = self.normalized(&self.mixer_k.forward(s)?)[[0, agent]];
        let x = self.utility_input(s, agent, Some(ArrayView2::from_shape((1, action_dim), ai).unwrap()));
        let net = self.net_for(agent);
        let (_, cache) = net.forward_cached(x.view())?;
        let (_, dx) = net.backward(&cache, Array2::from_elem((1, 1), ki).view())?;
        let offset = x.ncols() - action_dim;
        Ok(dx.row(0).slice(s![offset..]).to_vec())
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for u in &self.utility {
            out.extend(u.params_flat());
        }
        out.extend(self.mixer_k.params_flat());
        out.extend(self.mixer_b.params_flat());
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure!(flat.len() == self.params_flat().len(), Shape, "parameter count mismatch");
        let mut at = 0;
        for net in self.utility.iter_mut().chain([&mut self.mixer_k, &mut self.mixer_b]) {
            let n = net.num_params();
            net.set_params_flat(&flat[at..at + n])?;
            at += n;
        }
        Ok(())
    }

    pub fn apply(&mut self, grad: &CriticGrad, scale: f64) -> Result<()> {
        for (u, g) in self.utility.iter_mut().zip(&grad.utility) {
            u.apply(g, scale)?;
        }
        self.mixer_k.apply(&grad.k, scale)?;
        self.mixer_b.apply(&grad.b, scale)
    }

    pub fn soft_update_from(&mut self, online: &DecomposedCritic, alpha: f64) -> Result<()> {
        ensure!(self.utility.len() == online.utility.len(), Shape, "critic architectures differ");
        for (t, o) in self.utility.iter_mut().zip(&online.utility) {
            t.soft_update_from(o, alpha)?;
        }
        self.mixer_k.soft_update_from(&online.mixer_k, alpha)?;
        self.mixer_b.soft_update_from(&online.mixer_b, alpha)
    }

    /// Names of the component networks, in checkpoint order.
    pub fn manifest(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.utility.len()).map(|i| format!("utility{i}")).collect();
        names.push("mixer_k".into());
        names.push("mixer_b".into());
        names
    }

    pub fn save<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut tensors = Vec::new();
        let nets = self.utility.iter().chain([&self.mixer_k, &self.mixer_b]);
        for (name, net) in self.manifest().into_iter().zip(nets) {
            tensors.extend(mlp_tensors(&name, net));
        }
        write_tensors(out, &tensors)
    }

    /// Loads parameters saved by [`DecomposedCritic::save`] into a critic of
    /// the same architecture.
    pub fn load<R: std::io::BufRead>(&mut self, input: R) -> Result<()> {
        let tensors = read_tensors(input)?;
        let names = self.manifest();
        let nets = self.utility.iter_mut().chain([&mut self.mixer_k, &mut self.mixer_b]);
        for (name, net) in names.iter().zip(nets) {
            load_mlp(name, net, &tensors)?;
        }
        Ok(())
    }
}

pub(crate) fn mlp_tensors(prefix: &str, net: &Mlp) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        out.push(NamedTensor {
            name: format!("{prefix}.{l}.w"),
            rows: layer.w.nrows(),
            cols: layer.w.ncols(),
            data: layer.w.iter().copied().collect(),
        });
        out.push(NamedTensor { name: format!("{prefix}.{l}.b"), rows: 1, cols: layer.b.len(), data: layer.b.to_vec() });
    }
    out
}

pub(crate) fn load_mlp(prefix: &str, net: &mut Mlp, tensors: &[NamedTensor]) -> Result<()> {
    for (l, layer) in net.layers_mut().iter_mut().enumerate() {
        for (suffix, rows, cols) in [("w", layer.w.nrows(), layer.w.ncols()), ("b", 1, layer.b.len())] {
            let name = format!("{prefix}.{l}.{suffix}");
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| DopError::Data(format!("checkpoint is missing {name}")))?;
            ensure!(t.rows == rows && t.cols == cols, Data, "{name} has shape {}x{}, expected {rows}x{cols}", t.rows, t.cols);
            if suffix == "w" {
                layer.w.iter_mut().zip(&t.data).for_each(|(p, v)| *p = *v);
            } else {
                layer.b.iter_mut().zip(&t.data).for_each(|(p, v)| *p = *v);
            }
        }
    }
    Ok(())
}

/// RMSProp state for every network of a critic.
#[derive(Debug, Clone)]
pub struct CriticOptim {
    utility: Vec<RmsProp>,
    k: RmsProp,
    b: RmsProp,
}

impl CriticOptim {
    pub fn new(config: RmsPropConfig, critic: &DecomposedCritic) -> Self {
        Self {
            utility: critic.utility.iter().map(|u| RmsProp::new(config, u)).collect(),
            k: RmsProp::new(config, &critic.mixer_k),
            b: RmsProp::new(config, &critic.mixer_b),
        }
    }

    pub fn step(&mut self, critic: &mut DecomposedCritic, grad: &CriticGrad) -> Result<()> {
        ensure!(grad.is_finite(), Training, "non-finite critic gradient");
        for ((opt, net), g) in self.utility.iter_mut().zip(&mut critic.utility).zip(&grad.utility) {
            opt.step(net, g)?;
        }
        self.k.step(&mut critic.mixer_k, &grad.k)?;
        self.b.step(&mut critic.mixer_b, &grad.b)
    }
}

#[cfg(test)]
mod tests;
