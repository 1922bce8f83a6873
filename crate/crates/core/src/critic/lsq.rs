use crate::envs::joint_from_index;
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqOptions {
    pub max_sweeps: usize,
    /// Stop once the weighted residual changes by less than this.
    pub tol: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self { max_sweeps: 200, tol: 1e-12 }
    }
}

/// Decomposed least-squares fit to one table of joint-action targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularFit {
    pub k: Vec<f64>,
    pub b: f64,
    /// `q[i][a_i]`
    pub q: Vec<Vec<f64>>,
    /// Weighted mean squared error `sum_a pi(a) (target - fit)^2`.
    pub residual: f64,
    pub sweeps: usize,
}

impl TabularFit {
    pub fn predict(&self, actions: &[usize]) -> f64 {
        self.b + actions.iter().enumerate().map(|(i, &a)| self.k[i] * self.q[i][a]).sum::<f64>()
    }
}

/// Minimizes `sum_a pi(a) (target(a) - sum_i k_i Q_i(a_i) - b)^2` over the
/// local tables and `b`, with `k` held fixed, by exact block-coordinate
/// descent. `targets` is indexed by flat joint action (agent 0 outermost),
/// `pi(a) = prod_i policies[i][a_i]`.
pub fn fit_least_squares_tabular(
    targets: &[f64],
    policies: &[Vec<f64>],
    k: &[f64],
    opts: LsqOptions,
) -> Result<TabularFit> {
    let n = policies.len();
    ensure!(n >= 1, Input, "need at least one agent");
    let n_actions = policies[0].len();
    ensure!(n_actions >= 1 && policies.iter().all(|p| p.len() == n_actions), Input, "policies must share one action count");
    ensure!(policies.iter().flatten().all(|&p| p >= 0.0), Input, "negative policy probability");
    let joint = n_actions.checked_pow(n as u32).filter(|&j| j <= 100_000);
    ensure!(joint == Some(targets.len()), Input, "expected {n_actions}^{n} <= 1e5 targets, got {}", targets.len());
    ensure!(k.len() == n, Input, "need {n} mixing weights");
    ensure!(k.iter().any(|&x| x != 0.0), Input, "mixing weights are all zero");
    ensure!(k.iter().all(|&x| x > 0.0), Input, "mixing weights must be strictly positive");

    let actions: Vec<Vec<usize>> = (0..targets.len()).map(|j| joint_from_index(j, n, n_actions)).collect();
    let weight: Vec<f64> = actions.iter().map(|a| a.iter().enumerate().map(|(i, &x)| policies[i][x]).product()).collect();
    let mut fit = TabularFit { k: k.to_vec(), b: 0.0, q: vec![vec![0.0; n_actions]; n], residual: 0.0, sweeps: 0 };
    let residual = |fit: &TabularFit| -> f64 {
        actions.iter().zip(targets).zip(&weight).map(|((a, t), w)| w * (t - fit.predict(a)).powi(2)).sum()
    };
    fit.residual = residual(&fit);
    for sweep in 1..=opts.max_sweeps {
        for i in 0..n {
            // Conditional expectation over the other agents given a_i.
            let mut num = vec![0.0; n_actions];
            let mut den = vec![0.0; n_actions];
            for ((a, t), _) in actions.iter().zip(targets).zip(&weight) {
                let w_others: f64 = a.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, &x)| policies[j][x]).product();
                let rest = fit.predict(a) - fit.k[i] * fit.q[i][a[i]];
                num[a[i]] += w_others * (t - rest);
                den[a[i]] += w_others;
            }
            for x in 0..n_actions {
                if den[x] > 0.0 {
                    fit.q[i][x] = num[x] / den[x] / fit.k[i];
                }
            }
        }
        let total: f64 = weight.iter().sum();
        if total > 0.0 {
            let shift: f64 = actions.iter().zip(targets).zip(&weight).map(|((a, t), w)| w * (t - fit.predict(a))).sum::<f64>() / total;
            fit.b += shift;
        }
        let r = residual(&fit);
        let change = (fit.residual - r).abs();
        fit.residual = r;
        fit.sweeps = sweep;
        if change < opts.tol {
            break;
        }
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{joint_count, joint_index};

    fn uniform(n: usize, a: usize) -> Vec<Vec<f64>> {
        vec![vec![1.0 / a as f64; a]; n]
    }

    #[test]
    fn realizable_targets_are_recovered() {
        let q = [vec![1.0, -2.0, 0.5], vec![3.0, 0.0, -1.0]];
        let k = [0.3, 0.7];
        let targets: Vec<f64> = (0..9).map(|j| 0.25 + k[0] * q[0][j / 3] + k[1] * q[1][j % 3]).collect();
        let pi = vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]];
        let fit = fit_least_squares_tabular(&targets, &pi, &k, LsqOptions::default()).unwrap();
        assert!(fit.residual < 1e-9, "{}", fit.residual);
        for (j, t) in targets.iter().enumerate() {
            assert!((fit.predict(&[j / 3, j % 3]) - t).abs() < 1e-6);
        }
    }

    #[test]
    fn xor_game_is_inexact_but_ordered() {
        // Payoff 1 when the two actions differ; agent 0 slightly prefers action 1.
        let targets = vec![0.0, 1.0, 1.2, 0.0];
        let pi = vec![vec![0.5, 0.5], vec![0.3, 0.7]];
        let fit = fit_least_squares_tabular(&targets, &pi, &[0.5, 0.5], LsqOptions::default()).unwrap();
        assert!(fit.residual > 1e-3);
        // Q_0^pi(a) = sum_b pi_1(b) target(a, b)
        let q0 = [0.7, 1.2 * 0.3];
        let q1 = [0.5 * 1.2, 0.5];
        assert_eq!(q0[0] > q0[1], fit.q[0][0] > fit.q[0][1]);
        assert_eq!(q1[0] > q1[1], fit.q[1][0] > fit.q[1][1]);
    }

    #[test]
    fn degenerate_weights_are_rejected() {
        let err = fit_least_squares_tabular(&[0.0; 4], &uniform(2, 2), &[0.0, 0.0], LsqOptions::default()).unwrap_err();
        assert!(matches!(err, crate::DopError::Input(_)));
    }

    #[test]
    fn stops_early_when_converged() {
        let n = 3;
        let targets: Vec<f64> = (0..joint_count(n, 2)).map(|j| j as f64).collect();
        let fit = fit_least_squares_tabular(&targets, &uniform(n, 2), &[1.0, 1.0, 1.0], LsqOptions::default()).unwrap();
        assert!(fit.sweeps < 200);
        // j = 4 a0 + 2 a1 + a2 is exactly decomposable.
        assert!((fit.predict(&[1, 0, 1]) - joint_index(&[1, 0, 1], 2) as f64).abs() < 1e-9);
    }
}
