use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::*;
use crate::analysis::gradient_variance;
use crate::deterministic::{det_actor_gradient, Batch, ContinuousQ, DeterministicConfig, DeterministicPolicySet, Transition};
use crate::envs::{joint_count, joint_from_index, Aggregation, MatrixGame};
use crate::error::DopError;
use crate::nn::Grad;
use crate::rng::seeded;
use crate::stochastic::StochasticPolicySet;
use crate::trainer::Trainer;

const NA: usize = 14;

fn uniform() -> Vec<f64> {
    vec![1.0 / NA as f64; NA]
}

fn row_from_table(table: &dyn Fn(&[usize]) -> f64, joint: &[usize], agent: usize) -> Vec<f64> {
    (0..NA)
        .map(|x| {
            let mut a = joint.to_vec();
            a[agent] = x;
            table(&a)
        })
        .collect()
}

#[test]
fn matrix_game_advantage_at_optimum() {
    let row = row_from_table(&MatrixGame::payoff, &[1, 5, 9], 0);
    let a = coma_advantage(&row, &uniform(), 1).unwrap();
    assert!((a - 130.0 / 7.0).abs() < 1e-12, "{a}");
}

#[test]
fn constant_critic_gives_zero_advantage() {
    let row = vec![3.25; NA];
    for a in 0..NA {
        assert!(coma_advantage(&row, &uniform(), a).unwrap().abs() < 1e-12);
    }
}

#[test]
fn advantage_is_centered_under_the_policy() {
    let mut rng = seeded(3);
    for _ in 0..50 {
        let row: Vec<f64> = (0..NA).map(|_| rng.random_range(-5.0..5.0)).collect();
        let w: Vec<f64> = (0..NA).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = w.iter().sum();
        let pi: Vec<f64> = w.iter().map(|x| x / total).collect();
        let mean: f64 = (0..NA).map(|a| pi[a] * coma_advantage(&row, &pi, a).unwrap()).sum();
        assert!(mean.abs() < 1e-12);
    }
}

#[test]
fn advantage_row_size_is_checked() {
    assert!(matches!(coma_advantage(&[1.0, 2.0], &[1.0], 0), Err(DopError::Shape(_))));
}

fn probe_policies(seed: u64) -> (StochasticPolicySet, Vec<f64>, Vec<Vec<f64>>) {
    let mut rng = seeded(seed);
    let set = StochasticPolicySet::new(3, 1, NA, 1, &[16], &mut rng).unwrap();
    let input = vec![0.0];
    let pis = (0..3).map(|i| set.probs_one(i, &input).unwrap()).collect();
    (set, input, pis)
}

fn expected_gradient(set: &StochasticPolicySet, input: &[f64], pis: &[Vec<f64>], agent: usize, credit: impl Fn(&[usize]) -> f64) -> Grad {
    // Per own action: sum over the others of pi(a) * credit(a).
    let mut weights = vec![0.0; NA];
    for j in 0..joint_count(3, NA) {
        let a = joint_from_index(j, 3, NA);
        let p: f64 = (0..3).map(|i| pis[i][a[i]]).product();
        weights[a[agent]] += p * credit(&a);
    }
    let x = Array2::from_shape_fn((NA, input.len()), |(_, c)| input[c]);
    let actions: Vec<usize> = (0..NA).collect();
    set.log_prob_grad(agent, x.view(), &actions, &weights).unwrap()
}

#[test]
fn counterfactual_baseline_keeps_expected_gradient() {
    let (set, input, pis) = probe_policies(11);
    for agent in 0..3 {
        let plain = expected_gradient(&set, &input, &pis, agent, MatrixGame::payoff);
        let with_baseline = expected_gradient(&set, &input, &pis, agent, |a| {
            coma_advantage(&row_from_table(&MatrixGame::payoff, a, agent), &pis[agent], a[agent]).unwrap()
        });
        for (x, y) in plain.flatten().iter().zip(with_baseline.flatten()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn sampled_coma_variance_matches_enumeration() {
    let (set, input, pis) = probe_policies(5);
    let mut rng = seeded(6);
    let table: Vec<f64> = (0..joint_count(3, NA)).map(|_| rng.random_range(-10.0..10.0)).collect();
    let q = |a: &[usize]| table[crate::envs::joint_index(a, NA)];
    let x = ArrayView2::from_shape((1, 1), &input).unwrap();
    let grad_norm_sq = |i: usize, a: usize| set.log_prob_grad(i, x, &[a], &[1.0]).unwrap().norm_sq();

    // Exact: sum_{a_i} pi_i(a_i) Var_{a_-i}[A_i] |grad log pi_i(a_i)|^2.
    let mut exact = vec![0.0; 3];
    for i in 0..3 {
        for a_i in 0..NA {
            let (mut m1, mut m2) = (0.0, 0.0);
            for j in 0..joint_count(3, NA) {
                let a = joint_from_index(j, 3, NA);
                if a[i] != a_i {
                    continue;
                }
                let p: f64 = (0..3).filter(|&k| k != i).map(|k| pis[k][a[k]]).product();
                let adv = coma_advantage(&row_from_table(&q, &a, i), &pis[i], a_i).unwrap();
                m1 += p * adv;
                m2 += p * adv * adv;
            }
            exact[i] += pis[i][a_i] * (m2 - m1 * m1) * grad_norm_sq(i, a_i);
        }
    }

    let report = gradient_variance(&pis, 3000, 0, &mut seeded(7), |i, joint| {
        let adv = coma_advantage(&row_from_table(&q, joint, i), &pis[i], joint[i])?;
        Ok(set.log_prob_grad(i, x, &[joint[i]], &[adv])?.flatten())
    })
    .unwrap();
    for i in 0..3 {
        let rel = (report.per_agent[i] - exact[i]).abs() / exact[i];
        assert!(rel < 0.1, "agent {i}: sampled {} exact {} ", report.per_agent[i], exact[i]);
    }
}

#[test]
fn constant_critic_has_zero_coma_variance() {
    let (set, input, pis) = probe_policies(8);
    let x = ArrayView2::from_shape((1, 1), &input).unwrap();
    let report = gradient_variance(&pis, 40, 0, &mut seeded(1), |i, joint| {
        let adv = coma_advantage(&vec![2.0; NA], &pis[i], joint[i])?;
        Ok(set.log_prob_grad(i, x, &[joint[i]], &[adv])?.flatten())
    })
    .unwrap();
    assert_eq!(report.mean, 0.0);
}

#[test]
fn scalar_and_counterfactual_rows_agree_in_shape() {
    let mut rng = seeded(2);
    let c = JointCritic::new(3, 1, NA, JointMode::Scalar, &[8], &mut rng).unwrap();
    let row = counterfactual_row(&c, &[0.0], &[1, 5, 9], 2, NA).unwrap();
    let table = c.q_table(&[0.0]).unwrap();
    for (x, v) in row.iter().enumerate() {
        assert!((v - table[crate::envs::joint_index(&[1, 5, x], NA)]).abs() < 1e-12);
    }
}

fn matrix() -> (Box<dyn crate::envs::Environment>, Box<dyn crate::envs::Environment>) {
    (Box::new(MatrixGame::new()), Box::new(MatrixGame::new()))
}

fn small_coma() -> ComaConfig {
    ComaConfig { critic_hidden: vec![16], actor_hidden: vec![16], ..ComaConfig::default() }
}

fn small_maddpg() -> DeterministicConfig {
    DeterministicConfig { joint_hidden: vec![16], actor_hidden: vec![16], batch_size: 8, warmup: 10, ..DeterministicConfig::default() }
}

fn trace(t: &mut dyn Trainer, iters: usize) -> Vec<(Option<f64>, Option<f64>, Option<f64>)> {
    (0..iters)
        .map(|_| {
            let s = t.iterate().unwrap();
            (s.train_return, s.loss_on, s.loss_td)
        })
        .collect()
}

#[test]
fn coma_is_seeded() {
    let (e, v) = matrix();
    let mut a = ComaTrainer::new(e, v, small_coma(), 4).unwrap();
    let (e, v) = matrix();
    let mut b = ComaTrainer::new(e, v, small_coma(), 4).unwrap();
    assert_eq!(trace(&mut a, 60), trace(&mut b, 60));
    assert_eq!(a.policies(), b.policies());
    let (e, v) = matrix();
    let mut c = ComaTrainer::new(e, v, small_coma(), 5).unwrap();
    assert_ne!(trace(&mut a, 5), trace(&mut c, 5));
}

#[test]
fn coma_rejects_continuous_actions() {
    let env = Box::new(Aggregation::new());
    let eval = Box::new(Aggregation::new());
    assert!(matches!(ComaTrainer::new(env, eval, ComaConfig::default(), 0), Err(DopError::Config(_))));
}

#[test]
fn coma_reports_variance_bias_and_actions() {
    let (e, v) = matrix();
    let mut t = ComaTrainer::new(e, v, small_coma(), 1).unwrap();
    trace(&mut t, 20);
    let report = t.gradient_variance(30).unwrap().unwrap();
    assert!(report.mean > 0.0 && report.reportable());
    assert!(t.bias().unwrap().unwrap() > 0.0);
    assert_eq!(t.argmax_actions().unwrap().unwrap().len(), 3);
    assert_eq!(t.k_spread().unwrap(), None);
}

#[test]
fn gumbel_max_frequencies_follow_softmax() {
    let logits = [0.5, -1.0, 1.5, 0.0];
    let probs = crate::nn::softmax(&logits);
    let mut rng = seeded(12);
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        let y = gumbel_softmax(&logits, &gumbel_noise(4, &mut rng), 1.0);
        counts[crate::stochastic::argmax(&y)] += 1;
    }
    let chi2: f64 = counts.iter().zip(&probs).map(|(&c, p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p)).sum();
    // 99.9th percentile of chi-square with 3 degrees of freedom.
    assert!(chi2 < 16.27, "chi2 {chi2}");
}

#[test]
fn high_temperature_relaxation_is_uniform() {
    let logits = [2.0, -1.0, 0.3];
    let mut rng = seeded(13);
    let n = 100_000;
    let mut mean = [0.0; 3];
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let y = gumbel_softmax(&logits, &gumbel_noise(3, &mut rng), 1e4);
        for k in 0..3 {
            mean[k] += y[k] / n as f64;
            worst = worst.max((y[k] - 1.0 / 3.0).abs());
        }
    }
    assert!(worst < 0.01, "{worst}");
    for m in mean {
        assert!((m - 1.0 / 3.0).abs() < 1e-3);
    }
}

#[test]
fn relaxation_backward_matches_finite_differences() {
    let logits = [0.2, -0.7, 1.1, 0.4];
    let noise = gumbel_noise(4, &mut seeded(14));
    let dy = [0.3, -1.2, 0.5, 2.0];
    for temp in [0.5, 1.0, 3.0] {
        let y = gumbel_softmax(&logits, &noise, temp);
        let g = gumbel_softmax_backward(&y, &dy, temp);
        for k in 0..4 {
            let f = |d: f64| {
                let mut l = logits;
                l[k] += d;
                gumbel_softmax(&l, &noise, temp).iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
            };
            let fd = (f(1e-6) - f(-1e-6)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }
}

#[test]
fn single_agent_joint_critic_gives_deterministic_policy_gradient() {
    let mut rng = seeded(21);
    let critic = JointCritic::new(1, 2, 1, JointMode::Scalar, &[8], &mut rng).unwrap();
    let actors = DeterministicPolicySet::new(1, 2, &[-1.0], &[1.0], &[6], &mut rng).unwrap();
    let items: Vec<Transition> = (0..4)
        .map(|r| Transition {
            state: vec![r as f64 * 0.3, -0.2],
            observations: vec![vec![r as f64 * 0.3, -0.2]],
            actions: vec![vec![0.1 * r as f64]],
            reward: 0.0,
            next_state: vec![0.0, 0.0],
            next_observations: vec![vec![0.0, 0.0]],
            terminated: true,
        })
        .collect();
    let refs: Vec<&Transition> = items.iter().collect();
    let batch = Batch::from_transitions(&refs).unwrap();
    let grad = det_actor_gradient(&critic, &actors, &batch).unwrap().remove(0).flatten();
    let objective = |a: &DeterministicPolicySet| {
        let mu = a.actions(0, batch.observations[0].view()).unwrap();
        critic.q_values(batch.states.view(), &[mu]).unwrap().mean().unwrap()
    };
    let flat = actors.actors()[0].params_flat();
    for p in (0..flat.len()).step_by(5) {
        let mut plus = actors.clone();
        let mut minus = actors.clone();
        let mut f = flat.clone();
        f[p] += 1e-6;
        plus.actors_mut()[0].set_params_flat(&f).unwrap();
        f[p] -= 2e-6;
        minus.actors_mut()[0].set_params_flat(&f).unwrap();
        let fd = (objective(&plus) - objective(&minus)) / 2e-6;
        assert!((fd - grad[p]).abs() < 1e-7, "param {p}: {fd} vs {}", grad[p]);
    }
}

#[test]
fn maddpg_checks_action_spaces() {
    let (e, v) = matrix();
    assert!(matches!(maddpg_continuous(e, v, DeterministicConfig::default(), 0), Err(DopError::Config(_))));
    let r = MaddpgDiscreteTrainer::new(Box::new(Aggregation::new()), Box::new(Aggregation::new()), DeterministicConfig::default(), RelaxationConfig::default(), 0);
    assert!(matches!(r, Err(DopError::Config(_))));
}

#[test]
fn maddpg_discrete_is_seeded_and_measurable() {
    let (e, v) = matrix();
    let mut a = MaddpgDiscreteTrainer::new(e, v, small_maddpg(), RelaxationConfig::default(), 2).unwrap();
    let (e, v) = matrix();
    let mut b = MaddpgDiscreteTrainer::new(e, v, small_maddpg(), RelaxationConfig::default(), 2).unwrap();
    let ta = trace(&mut a, 40);
    assert_eq!(ta, trace(&mut b, 40));
    assert!(ta.iter().any(|x| x.2.is_some()));
    let report = a.gradient_variance(30).unwrap().unwrap();
    assert!(report.per_agent.iter().all(|&v| v > 0.0));
    assert!(a.bias().unwrap().unwrap() > 0.0);
}

#[test]
fn maddpg_continuous_runs_on_aggregation() {
    let cfg = DeterministicConfig { joint_hidden: vec![16], actor_hidden: vec![16], batch_size: 8, warmup: 5, ..DeterministicConfig::default() };
    let mut t = maddpg_continuous(Box::new(Aggregation::new()), Box::new(Aggregation::new()), cfg, 3).unwrap();
    for _ in 0..30 {
        t.iterate().unwrap();
    }
    assert_eq!(t.env_steps(), 30);
    assert_eq!(t.k_spread().unwrap(), None);
    assert!(t.greedy_return(1).unwrap().is_finite());
}

#[test]
fn straight_through_feeds_one_hots() {
    let (e, v) = matrix();
    let relax = RelaxationConfig { straight_through: true, ..RelaxationConfig::default() };
    let mut t = MaddpgDiscreteTrainer::new(e, v, small_maddpg(), relax, 9).unwrap();
    for _ in 0..20 {
        t.iterate().unwrap();
    }
    assert!(t.gradient_variance(30).unwrap().is_some());
}
