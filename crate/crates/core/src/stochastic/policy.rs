use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Episode;
use crate::error::{ensure, DopError, Result};
use crate::nn::{softmax, Grad, Mlp, OutputActivation};
use crate::rng::SeedRng;

/// Concatenation of agent `agent`'s last `window` observations up to step `t`,
/// oldest first, zero-padded before the episode start.
pub fn window_input(observations: &[Vec<Vec<f64>>], t: usize, agent: usize, window: usize) -> Vec<f64> {
    let dim = observations[0][agent].len();
    let mut out = Vec::with_capacity(dim * window);
    for back in (0..window).rev() {
        if back > t {
            out.extend(std::iter::repeat_n(0.0, dim));
        } else {
            out.extend_from_slice(&observations[t - back][agent]);
        }
    }
    out
}

/// Linear interpolation from `start` to `end` over `steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub steps: u64,
}

impl LinearSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.steps == 0 || step >= self.steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.steps as f64
    }
}

impl Default for LinearSchedule {
    fn default() -> Self {
        Self { start: 1.0, end: 0.05, steps: 500_000 }
    }
}

/// Categorical actors, one network per agent, each producing logits over the
/// agent's actions from a window of its own observations.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicySet {
    actors: Vec<Mlp>,
    n_actions: usize,
    obs_dim: usize,
    window: usize,
}

impl StochasticPolicySet {
    pub fn new(n_agents: usize, obs_dim: usize, n_actions: usize, window: usize, hidden: &[usize], rng: &mut SeedRng) -> Result<Self> {
        ensure!(window >= 1, Config, "observation window must be at least 1");
        ensure!(n_actions >= 1 && obs_dim >= 1 && n_agents >= 1, Config, "empty policy dimensions");
        let mut widths = vec![obs_dim * window];
        widths.extend_from_slice(hidden);
        widths.push(n_actions);
        let actors = (0..n_agents).map(|_| Mlp::new(&widths, OutputActivation::Identity, rng)).collect();
        Ok(Self { actors, n_actions, obs_dim, window })
    }

    pub fn from_actors(actors: Vec<Mlp>, obs_dim: usize, window: usize) -> Result<Self> {
        ensure!(!actors.is_empty(), Config, "need at least one actor");
        let n_actions = actors[0].output_dim();
        for a in &actors {
            ensure!(a.input_dim() == obs_dim * window && a.output_dim() == n_actions, Shape, "actor shapes disagree");
        }
        Ok(Self { actors, n_actions, obs_dim, window })
    }

    pub fn n_agents(&self) -> usize {
        self.actors.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn actors(&self) -> &[Mlp] {
        &self.actors
    }

    pub fn actors_mut(&mut self) -> &mut [Mlp] {
        &mut self.actors
    }

    /// Actor inputs for every agent at step `t` of an observation history.
    pub fn inputs_at(&self, observations: &[Vec<Vec<f64>>], t: usize) -> Vec<Vec<f64>> {
        (0..self.n_agents()).map(|i| window_input(observations, t, i, self.window)).collect()
    }

    /// `(T + 1) x input` matrix of agent inputs over a whole episode.
    pub fn episode_inputs<A>(&self, episode: &Episode<A>, agent: usize) -> Array2<f64> {
        let rows = episode.observations.len();
        let width = self.obs_dim * self.window;
        let mut x = Array2::zeros((rows, width));
        for t in 0..rows {
            let w = window_input(&episode.observations, t, agent, self.window);
            x.row_mut(t).assign(&ndarray::ArrayView1::from(&w));
        }
        x
    }

    /// Row-wise action probabilities.
    pub fn probs(&self, agent: usize, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut logits = self.actors[agent].forward(inputs)?;
        for mut row in logits.rows_mut() {
            let p = softmax(row.as_slice().expect("standard layout"));
            row.assign(&ndarray::ArrayView1::from(&p));
        }
        Ok(logits)
    }

    pub fn probs_one(&self, agent: usize, input: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.actors[agent].forward_one(input)?))
    }

    /// Samples every agent from `(1 - epsilon) pi_i + epsilon / |A|` and
    /// records the mixture probability of the sampled action.
    pub fn act(&self, inputs: &[Vec<f64>], epsilon: f64, rng: &mut SeedRng) -> Result<(Vec<usize>, Vec<f64>)> {
        ensure!((0.0..=1.0).contains(&epsilon), Input, "epsilon {epsilon} outside [0, 1]");
        ensure!(inputs.len() == self.n_agents(), Shape, "expected {} agent inputs", self.n_agents());
        let uniform = 1.0 / self.n_actions as f64;
        let mut actions = Vec::with_capacity(inputs.len());
        let mut probs = Vec::with_capacity(inputs.len());
        for (i, x) in inputs.iter().enumerate() {
            let pi = self.probs_one(i, x)?;
            let mix: Vec<f64> = pi.iter().map(|p| (1.0 - epsilon) * p + epsilon * uniform).collect();
            let a = sample_categorical(&mix, rng);
            actions.push(a);
            probs.push(mix[a]);
        }
        Ok((actions, probs))
    }

    pub fn greedy(&self, inputs: &[Vec<f64>]) -> Result<Vec<usize>> {
        (0..self.n_agents()).map(|i| Ok(argmax(&self.probs_one(i, &inputs[i])?))).collect()
    }

    /// Gradient of `sum_r weights[r] log pi_i(actions[r] | inputs[r])`.
    pub fn log_prob_grad(&self, agent: usize, inputs: ArrayView2<f64>, actions: &[usize], weights: &[f64]) -> Result<Grad> {
        ensure!(actions.len() == inputs.nrows() && weights.len() == inputs.nrows(), Shape, "batch lengths disagree");
        let net = &self.actors[agent];
        let (logits, cache) = net.forward_cached(inputs)?;
        let mut upstream = Array2::zeros(logits.dim());
        for (r, row) in logits.rows().into_iter().enumerate() {
            ensure!(actions[r] < self.n_actions, Input, "action {} out of range", actions[r]);
            let p = softmax(row.as_slice().expect("standard layout"));
            for (j, pj) in p.iter().enumerate() {
                let indicator = if j == actions[r] { 1.0 } else { 0.0 };
                upstream[[r, j]] = weights[r] * (indicator - pj);
            }
        }
        Ok(net.backward(&cache, upstream.view())?.0)
    }
}

pub fn sample_categorical(probs: &[f64], rng: &mut SeedRng) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave u just above the final partial sum.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// First index of the largest entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn stale_error(found: u64, current: u64) -> DopError {
    DopError::Data(format!("episode from policy version {found} used with current version {current}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn policy(seed: u64) -> StochasticPolicySet {
        StochasticPolicySet::new(2, 3, 4, 2, &[8], &mut seeded(seed)).unwrap()
    }

    #[test]
    fn windows_pad_with_zeros() {
        let obs = vec![vec![vec![1.0], vec![2.0]], vec![vec![3.0], vec![4.0]]];
        assert_eq!(window_input(&obs, 0, 1, 3), vec![0.0, 0.0, 2.0]);
        assert_eq!(window_input(&obs, 1, 0, 2), vec![1.0, 3.0]);
    }

    #[test]
    fn schedule_anneals_linearly() {
        let s = LinearSchedule::default();
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(250_000) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(10_000_000), 0.05);
    }

    #[test]
    fn epsilon_extremes() {
        let p = policy(1);
        let x = vec![vec![0.1, 0.2, 0.3, 0.0, 0.5, 0.6]; 2];
        let mut rng = seeded(2);
        for _ in 0..50 {
            let (a, b) = p.act(&x, 1.0, &mut rng).unwrap();
            assert!(a.iter().all(|&x| x < 4));
            assert!(b.iter().all(|&x| (x - 0.25).abs() < 1e-15));
            let (a, b) = p.act(&x, 0.0, &mut rng).unwrap();
            for i in 0..2 {
                assert_eq!(b[i], p.probs_one(i, &x[i]).unwrap()[a[i]]);
            }
        }
    }

    #[test]
    fn mixture_frequencies() {
        let p = policy(3);
        let x = vec![vec![0.5; 6]; 2];
        let mut rng = seeded(4);
        let eps = 0.3;
        let pi = p.probs_one(0, &x[0]).unwrap();
        let mut counts = [0usize; 4];
        let draws = 40_000;
        for _ in 0..draws {
            counts[p.act(&x, eps, &mut rng).unwrap().0[0]] += 1;
        }
        for j in 0..4 {
            let expected = (1.0 - eps) * pi[j] + eps / 4.0;
            let freq = counts[j] as f64 / draws as f64;
            let se = (expected * (1.0 - expected) / draws as f64).sqrt();
            assert!((freq - expected).abs() < 5.0 * se, "{j}: {freq} vs {expected}");
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let p = policy(5);
        let x = Array2::from_shape_fn((7, 6), |(r, c)| (r as f64 - c as f64) * 0.3);
        for row in p.probs(1, x.view()).unwrap().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let p = policy(seed);
            let mut rng = seeded(seed + 100);
            let x = Array2::from_shape_simple_fn((5, 6), || rng.random_range(-1.0..1.0));
            let actions: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
            let w: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = p.log_prob_grad(0, x.view(), &actions, &w).unwrap();
            // Central differences of the same objective.
            let objective = |net: &Mlp| -> f64 {
                let logits = net.forward(x.view()).unwrap();
                (0..5).map(|r| w[r] * softmax(logits.row(r).as_slice().unwrap())[actions[r]].ln()).sum()
            };
            let base = p.actors()[0].params_flat();
            let analytic = g.flatten();
            let mut probe = p.actors()[0].clone();
            let mut worst = 0.0f64;
            for k in 0..base.len() {
                let mut v = base.clone();
                v[k] += 1e-5;
                probe.set_params_flat(&v).unwrap();
                let plus = objective(&probe);
                v[k] -= 2e-5;
                probe.set_params_flat(&v).unwrap();
                let minus = objective(&probe);
                let fd = (plus - minus) / 2e-5;
                worst = worst.max((fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6));
            }
            assert!(worst < 1e-4, "seed {seed}: {worst}");
        }
    }
}
