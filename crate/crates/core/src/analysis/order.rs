use rand::Rng;

use super::exact::{exact_policy_value, local_q_values, TabularPolicy};
use crate::critic::{fit_least_squares_tabular, LsqOptions};
use crate::envs::random_tabular;
use crate::error::Result;
use crate::rng::{seeded, SeedRng};

/// Differences smaller than this count as ties and are not compared.
pub const TIE_TOL: f64 = 1e-9;

/// Counts `(i, a, a')` pairs whose order differs between `fitted[i][a]` and
/// `truth[i][a]`, skipping pairs tied in the truth.
pub fn order_violations(fitted: &[Vec<f64>], truth: &[Vec<f64>]) -> usize {
    let mut count = 0;
    for (f, t) in fitted.iter().zip(truth) {
        for a in 0..t.len() {
            for b in a + 1..t.len() {
                let dt = t[a] - t[b];
                if dt.abs() <= TIE_TOL {
                    continue;
                }
                let df = f[a] - f[b];
                if df.signum() != dt.signum() || df == 0.0 {
                    count += 1;
                }
            }
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderSweep {
    pub instances: usize,
    pub pairs_checked: usize,
    pub violations: usize,
}

pub(crate) fn random_policy(rng: &mut SeedRng, n_agents: usize, n_states: usize, n_actions: usize) -> TabularPolicy {
    (0..n_agents)
        .map(|_| {
            (0..n_states)
                .map(|_| {
                    let raw: Vec<f64> = (0..n_actions).map(|_| 0.05 + rng.random::<f64>()).collect();
                    let total: f64 = raw.iter().sum();
                    raw.into_iter().map(|x| x / total).collect()
                })
                .collect()
        })
        .collect()
}

/// Random tabular instances with random policies and random strictly positive
/// mixing weights: fits the decomposed critic to the exact `Q_tot` state by
/// state and compares local orders with the exact `Q_i^pi`.
pub fn order_preservation_sweep(instances: usize, seed: u64) -> Result<OrderSweep> {
    let mut rng = seeded(seed);
    let mut out = OrderSweep { instances, pairs_checked: 0, violations: 0 };
    for _ in 0..instances {
        let n_states = rng.random_range(1..=4);
        let n_agents = rng.random_range(2..=3);
        let n_actions = rng.random_range(2..=3);
        let mdp = random_tabular(rng.random(), n_states, n_agents, n_actions)?;
        let policy = random_policy(&mut rng, n_agents, n_states, n_actions);
        let exact = exact_policy_value(&mdp, &policy)?;
        let truth = local_q_values(&mdp, &policy, &exact.q_tot);
        for s in 0..n_states {
            let k: Vec<f64> = (0..n_agents).map(|_| rng.random_range(0.1..2.0)).collect();
            let pis: Vec<Vec<f64>> = policy.iter().map(|p| p[s].clone()).collect();
            let fit = fit_least_squares_tabular(&exact.q_tot[s], &pis, &k, LsqOptions::default())?;
            let t: Vec<Vec<f64>> = truth.iter().map(|q| q[s].clone()).collect();
            out.violations += order_violations(&fit.q, &t);
            out.pairs_checked += n_agents * n_actions * (n_actions - 1) / 2;
        }
    }
    Ok(out)
}
