use nalgebra::{DMatrix, DVector};

use crate::envs::{joint_from_index, TabularDecMDP};
use crate::error::{ensure, DopError, Result};

/// Per-agent, per-state action distributions: `policy[i][s][a]`.
pub type TabularPolicy = Vec<Vec<Vec<f64>>>;

/// Exact values of a joint policy on a tabular instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactValues {
    pub v: Vec<f64>,
    /// `q_tot[s][joint]`
    pub q_tot: Vec<Vec<f64>>,
    /// Expected discounted return from the initial distribution.
    pub j: f64,
}

fn check_policy(mdp: &TabularDecMDP, policy: &TabularPolicy) -> Result<()> {
    mdp.validate()?;
    ensure!(policy.len() == mdp.n_agents, Shape, "policy has {} agents, instance has {}", policy.len(), mdp.n_agents);
    for (i, per_state) in policy.iter().enumerate() {
        ensure!(per_state.len() == mdp.n_states, Shape, "agent {i} policy has wrong state count");
        for row in per_state {
            ensure!(row.len() == mdp.n_actions, Shape, "agent {i} policy row has wrong width");
            ensure!(row.iter().all(|&p| p >= 0.0), Input, "negative policy probability");
            ensure!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9, Input, "policy row does not sum to 1");
        }
    }
    Ok(())
}

/// `pi(joint | s)` for every state and flat joint action.
pub fn joint_policy(mdp: &TabularDecMDP, policy: &TabularPolicy) -> Vec<Vec<f64>> {
    (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_joint())
                .map(|j| {
                    joint_from_index(j, mdp.n_agents, mdp.n_actions)
                        .iter()
                        .enumerate()
                        .map(|(i, &a)| policy[i][s][a])
                        .product()
                })
                .collect()
        })
        .collect()
}

/// State-to-state transition matrix and expected reward under the policy.
fn induced_chain(mdp: &TabularDecMDP, pi: &[Vec<f64>]) -> (DMatrix<f64>, DVector<f64>) {
    let ns = mdp.n_states;
    let mut p = DMatrix::zeros(ns, ns);
    let mut r = DVector::zeros(ns);
    for s in 0..ns {
        for (j, &w) in pi[s].iter().enumerate() {
            r[s] += w * mdp.rewards[s][j];
            for s2 in 0..ns {
                p[(s, s2)] += w * mdp.transitions[s][j][s2];
            }
        }
    }
    (p, r)
}

fn values_from_v(mdp: &TabularDecMDP, v: Vec<f64>) -> ExactValues {
    let q_tot = (0..mdp.n_states)
        .map(|s| {
            (0..mdp.n_joint())
                .map(|j| mdp.rewards[s][j] + mdp.gamma * mdp.transitions[s][j].iter().zip(&v).map(|(p, x)| p * x).sum::<f64>())
                .collect()
        })
        .collect();
    let j = mdp.initial.iter().zip(&v).map(|(p, x)| p * x).sum();
    ExactValues { v, q_tot, j }
}

/// Solves `(I - gamma P_pi) V = r_pi` directly.
pub fn exact_policy_value(mdp: &TabularDecMDP, policy: &TabularPolicy) -> Result<ExactValues> {
    check_policy(mdp, policy)?;
    let (p, r) = induced_chain(mdp, &joint_policy(mdp, policy));
    let ns = mdp.n_states;
    let a = DMatrix::identity(ns, ns) - p * mdp.gamma;
    let v = a.lu().solve(&r).ok_or_else(|| DopError::Training("singular Bellman system".into()))?;
    Ok(values_from_v(mdp, v.iter().copied().collect()))
}

/// Iterates the Bellman operator until successive values differ by less than `tol`.
pub fn value_iteration(mdp: &TabularDecMDP, policy: &TabularPolicy, tol: f64, max_iters: usize) -> Result<ExactValues> {
    check_policy(mdp, policy)?;
    let (p, r) = induced_chain(mdp, &joint_policy(mdp, policy));
    let mut v = DVector::zeros(mdp.n_states);
    for _ in 0..max_iters {
        let next = &r + (&p * &v) * mdp.gamma;
        let diff = (&next - &v).amax();
        v = next;
        if diff < tol {
            return Ok(values_from_v(mdp, v.iter().copied().collect()));
        }
    }
    Err(DopError::Training(format!("value iteration did not reach {tol} in {max_iters} sweeps")))
}

/// Largest `|V(s) - (r_pi(s) + gamma sum_s' P_pi(s, s') V(s'))|`.
pub fn bellman_residual(mdp: &TabularDecMDP, policy: &TabularPolicy, values: &ExactValues) -> Result<f64> {
    check_policy(mdp, policy)?;
    let (p, r) = induced_chain(mdp, &joint_policy(mdp, policy));
    let v = DVector::from_vec(values.v.clone());
    Ok((&r + (&p * &v) * mdp.gamma - &v).amax())
}

/// Discounted state occupancy `d(s) = sum_t gamma^t Pr(s_t = s)` from the
/// initial distribution.
pub fn occupancy(mdp: &TabularDecMDP, policy: &TabularPolicy) -> Result<Vec<f64>> {
    check_policy(mdp, policy)?;
    let (p, _) = induced_chain(mdp, &joint_policy(mdp, policy));
    let ns = mdp.n_states;
    let a = DMatrix::identity(ns, ns) - p.transpose() * mdp.gamma;
    let mu = DVector::from_vec(mdp.initial.clone());
    let d = a.lu().solve(&mu).ok_or_else(|| DopError::Training("singular occupancy system".into()))?;
    Ok(d.iter().copied().collect())
}

/// `Q_i^pi(s, a_i) = sum_{a_-i} pi_-i(a_-i | s) Q_tot(s, (a_i, a_-i))`, as `[i][s][a_i]`.
pub fn local_q_values(mdp: &TabularDecMDP, policy: &TabularPolicy, q_tot: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let (n, na) = (mdp.n_agents, mdp.n_actions);
    let mut out = vec![vec![vec![0.0; na]; mdp.n_states]; n];
    for s in 0..mdp.n_states {
        for j in 0..mdp.n_joint() {
            let joint = joint_from_index(j, n, na);
            for i in 0..n {
                let w: f64 = (0..n).filter(|&x| x != i).map(|x| policy[x][s][joint[x]]).product();
                out[i][s][joint[i]] += w * q_tot[s][j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random_tabular;

    fn uniform(mdp: &TabularDecMDP) -> TabularPolicy {
        vec![vec![vec![1.0 / mdp.n_actions as f64; mdp.n_actions]; mdp.n_states]; mdp.n_agents]
    }

    #[test]
    fn zero_reward_has_zero_value() {
        let mut mdp = random_tabular(1, 3, 2, 2).unwrap();
        for row in &mut mdp.rewards {
            row.fill(0.0);
        }
        let ex = exact_policy_value(&mdp, &uniform(&mdp)).unwrap();
        assert_eq!(ex.j, 0.0);
    }

    #[test]
    fn myopic_single_state_is_reward_table() {
        let mut mdp = random_tabular(2, 1, 2, 3).unwrap();
        mdp.gamma = 0.0;
        let ex = exact_policy_value(&mdp, &uniform(&mdp)).unwrap();
        assert_eq!(ex.q_tot[0], mdp.rewards[0]);
    }

    #[test]
    fn solvers_agree_and_satisfy_bellman() {
        for seed in 0..20 {
            let mdp = random_tabular(seed, 4, 2, 3).unwrap();
            let mut policy = uniform(&mdp);
            policy[0][1] = vec![0.7, 0.2, 0.1];
            let direct = exact_policy_value(&mdp, &policy).unwrap();
            let iterated = value_iteration(&mdp, &policy, 1e-13, 10_000).unwrap();
            for (a, b) in direct.v.iter().zip(&iterated.v) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
            assert!(bellman_residual(&mdp, &policy, &direct).unwrap() < 1e-10);
        }
    }

    #[test]
    fn occupancy_sums_to_horizon() {
        let mdp = random_tabular(5, 4, 2, 2).unwrap();
        let d = occupancy(&mdp, &uniform(&mdp)).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0 / (1.0 - mdp.gamma)).abs() < 1e-10);
        assert!(d.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn local_values_average_to_state_value() {
        let mdp = random_tabular(9, 3, 3, 2).unwrap();
        let policy = uniform(&mdp);
        let ex = exact_policy_value(&mdp, &policy).unwrap();
        let qi = local_q_values(&mdp, &policy, &ex.q_tot);
        for i in 0..3 {
            for s in 0..3 {
                let avg: f64 = qi[i][s].iter().zip(&policy[i][s]).map(|(q, p)| q * p).sum();
                assert!((avg - ex.v[s]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn malformed_policy_is_rejected() {
        let mdp = random_tabular(0, 2, 2, 2).unwrap();
        let mut policy = uniform(&mdp);
        policy[1][0] = vec![0.9, 0.9];
        assert!(exact_policy_value(&mdp, &policy).is_err());
    }
}
