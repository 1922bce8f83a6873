use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, DopError, Result};
use crate::nn::{Activations, Grad, Mlp, OutputActivation};
use crate::rng::SeedRng;

/// One deterministic actor per agent, `tanh` output rescaled to the action box.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicPolicySet {
    actors: Vec<Mlp>,
    low: Vec<f64>,
    high: Vec<f64>,
}

impl DeterministicPolicySet {
    pub fn new(n_agents: usize, obs_dim: usize, low: &[f64], high: &[f64], hidden: &[usize], rng: &mut SeedRng) -> Result<Self> {
        ensure!(n_agents >= 1 && obs_dim >= 1, Config, "need agents and observations");
        let mut widths = vec![obs_dim];
        widths.extend_from_slice(hidden);
        widths.push(low.len());
        let actors = (0..n_agents).map(|_| Mlp::new(&widths, OutputActivation::Tanh, rng)).collect();
        Self::from_actors(actors, low, high)
    }

    pub fn from_actors(actors: Vec<Mlp>, low: &[f64], high: &[f64]) -> Result<Self> {
        ensure!(!actors.is_empty(), Config, "need at least one actor");
        ensure!(!low.is_empty() && low.len() == high.len(), Config, "bad action bounds");
        ensure!(low.iter().zip(high).all(|(l, h)| l < h), Config, "action bounds need low < high");
        for a in &actors {
            ensure!(a.output_activation() == OutputActivation::Tanh, Config, "deterministic actors need a tanh output");
            ensure!(a.output_dim() == low.len(), Shape, "actor output width {} != action dim {}", a.output_dim(), low.len());
        }
        Ok(Self { actors, low: low.to_vec(), high: high.to_vec() })
    }

    pub fn n_agents(&self) -> usize {
        self.actors.len()
    }

    pub fn action_dim(&self) -> usize {
        self.low.len()
    }

    pub fn actors(&self) -> &[Mlp] {
        &self.actors
    }

    pub fn actors_mut(&mut self) -> &mut [Mlp] {
        &mut self.actors
    }

    fn half_range(&self, d: usize) -> f64 {
        0.5 * (self.high[d] - self.low[d])
    }

    fn squash(&self, mut y: Array2<f64>) -> Array2<f64> {
        for mut row in y.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = self.low[d] + (*v + 1.0) * self.half_range(d);
            }
        }
        y
    }

    /// `B x d` actions of one agent for a batch of observations.
    pub fn actions(&self, agent: usize, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.squash(self.actors[agent].forward(obs)?))
    }

    /// Like [`DeterministicPolicySet::actions`], keeping the cache for [`DeterministicPolicySet::backward`].
    pub fn actions_cached(&self, agent: usize, obs: ArrayView2<f64>) -> Result<(Array2<f64>, Activations)> {
        let (y, cache) = self.actors[agent].forward_cached(obs)?;
        Ok((self.squash(y), cache))
    }

    /// Parameter gradient of `sum(upstream * actions)`, through the box rescaling.
    pub fn backward(&self, agent: usize, cache: &Activations, upstream: ArrayView2<f64>) -> Result<Grad> {
        let mut scaled = upstream.to_owned();
        for mut row in scaled.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                *v *= self.half_range(d);
            }
        }
        Ok(self.actors[agent].backward(cache, scaled.view())?.0)
    }

    /// Greedy joint action for per-agent observations.
    pub fn act(&self, observations: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        ensure!(observations.len() == self.n_agents(), Shape, "expected {} observations", self.n_agents());
        observations
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let x = ArrayView2::from_shape((1, o.len()), o).map_err(|e| DopError::Shape(e.to_string()))?;
                Ok(self.actions(i, x)?.row(0).to_vec())
            })
            .collect()
    }

    /// Greedy action plus Gaussian noise of `sigma` half-ranges, clipped to the box.
    pub fn explore(&self, observations: &[Vec<f64>], sigma: f64, rng: &mut SeedRng) -> Result<Vec<Vec<f64>>> {
        let mut a = self.act(observations)?;
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).map_err(|e| DopError::Config(e.to_string()))?;
            for ai in &mut a {
                for (d, v) in ai.iter_mut().enumerate() {
                    *v = (*v + normal.sample(rng) * self.half_range(d)).clamp(self.low[d], self.high[d]);
                }
            }
        }
        Ok(a)
    }

    pub fn soft_update_from(&mut self, online: &DeterministicPolicySet, alpha: f64) -> Result<()> {
        ensure!(online.n_agents() == self.n_agents(), Shape, "policy sets differ in size");
        for (t, o) in self.actors.iter_mut().zip(&online.actors) {
            t.soft_update_from(o, alpha)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::Array2;

    #[test]
    fn outputs_stay_in_box() {
        let mut rng = seeded(0);
        let p = DeterministicPolicySet::new(3, 2, &[-2.0, 0.0], &[1.0, 5.0], &[8], &mut rng).unwrap();
        for _ in 0..50 {
            let obs: Vec<Vec<f64>> = (0..3).map(|_| vec![rand::Rng::random_range(&mut rng, -50.0..50.0); 2]).collect();
            for a in p.explore(&obs, 0.5, &mut rng).unwrap().into_iter().chain(p.act(&obs).unwrap()) {
                assert!((-2.0..=1.0).contains(&a[0]) && (0.0..=5.0).contains(&a[1]));
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded(3);
        let p = DeterministicPolicySet::new(1, 3, &[-1.0, 0.0], &[3.0, 1.0], &[5], &mut rng).unwrap();
        let x = Array2::from_shape_fn((4, 3), |(r, c)| (r as f64 - c as f64) * 0.3);
        let (_, cache) = p.actions_cached(0, x.view()).unwrap();
        let upstream = Array2::from_shape_fn((4, 2), |(r, c)| (r * 7 + c * 3 + 1) as f64 * 0.1);
        let g = p.backward(0, &cache, upstream.view()).unwrap();
        // Finite differences on the rescaled output.
        let base = p.actors()[0].params_flat();
        let f = |flat: &[f64]| {
            let mut q = p.clone();
            q.actors_mut()[0].set_params_flat(flat).unwrap();
            (q.actions(0, x.view()).unwrap() * &upstream).sum()
        };
        let analytic = g.flatten();
        for idx in 0..base.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[idx] += 1e-6;
            minus[idx] -= 1e-6;
            let fd = (f(&plus) - f(&minus)) / 2e-6;
            assert!((fd - analytic[idx]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {idx}: {fd} vs {}", analytic[idx]);
        }
    }
}
