use super::*;
use crate::envs::{joint_count, joint_from_index};
use crate::nn::Layer;
use crate::rng::seeded;
use ndarray::{array, Array1};
use proptest::prelude::*;
use rand::Rng;

fn discrete(seed: u64, n: usize, a: usize, state_dim: usize) -> DecomposedCritic {
    let cfg = CriticConfig { hidden: vec![8], mixer_hidden: vec![4], ..Default::default() };
    DecomposedCritic::new(n, state_dim, CriticKind::Discrete { n_actions: a }, &cfg, &mut seeded(seed)).unwrap()
}

fn continuous(seed: u64, n: usize, d: usize, state_dim: usize) -> DecomposedCritic {
    let cfg = CriticConfig { hidden: vec![8], mixer_hidden: vec![4], ..Default::default() };
    DecomposedCritic::new(n, state_dim, CriticKind::Continuous { action_dim: d }, &cfg, &mut seeded(seed)).unwrap()
}

fn random_policy(rng: &mut SeedRng, a: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..a).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Sum over every joint action of `pi(a) Q_tot(s, a)`, evaluated one joint
/// action at a time.
fn brute_force_expectation(critic: &DecomposedCritic, state: &[f64], policies: &[Vec<f64>]) -> (f64, usize) {
    let n = policies.len();
    let a = policies[0].len();
    let mut total = 0.0;
    let mut evaluations = 0;
    for j in 0..joint_count(n, a) {
        let joint = joint_from_index(j, n, a);
        let p: f64 = joint.iter().enumerate().map(|(i, &x)| policies[i][x]).product();
        total += p * critic.eval(state, &JointAction::Discrete(joint)).unwrap().q_tot;
        evaluations += 1;
    }
    (total, evaluations)
}

fn zero_critic(n: usize, a: usize) -> DecomposedCritic {
    DecomposedCritic::from_parts(
        n,
        1,
        CriticKind::Discrete { n_actions: a },
        true,
        vec![Mlp::zeros(&[1 + n, 4, a], OutputActivation::Identity)],
        Mlp::zeros(&[1, n], OutputActivation::Absolute),
        Mlp::zeros(&[1, 1], OutputActivation::Identity),
    )
    .unwrap()
}

#[test]
fn zero_networks_give_zero_values() {
    let c = zero_critic(3, 4);
    let e = c.eval(&[0.3], &JointAction::Discrete(vec![0, 1, 3])).unwrap();
    assert_eq!(e.q_tot, 0.0);
    assert!(e.q.iter().all(|&q| q == 0.0));
    // Raw weights sum to 0, so the fallback is uniform.
    assert!(e.k.iter().all(|&k| (k - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn equal_raw_weights_normalize_to_half() {
    let mixer_k = Mlp::from_layers(vec![Layer { w: array![[0.0, 0.0]], b: array![2.0, -2.0] }], OutputActivation::Absolute).unwrap();
    let c = DecomposedCritic::from_parts(
        2,
        1,
        CriticKind::Discrete { n_actions: 2 },
        true,
        vec![Mlp::zeros(&[3, 2], OutputActivation::Identity)],
        mixer_k.clone(),
        Mlp::zeros(&[1, 1], OutputActivation::Identity),
    )
    .unwrap();
    assert_eq!(c.eval(&[1.0], &JointAction::Discrete(vec![0, 0])).unwrap().k, vec![0.5, 0.5]);

    let raw = DecomposedCritic::from_parts(
        2,
        1,
        CriticKind::Discrete { n_actions: 2 },
        false,
        vec![Mlp::zeros(&[3, 2], OutputActivation::Identity)],
        mixer_k,
        Mlp::zeros(&[1, 1], OutputActivation::Identity),
    )
    .unwrap();
    assert_eq!(raw.eval(&[1.0], &JointAction::Discrete(vec![0, 0])).unwrap().k, vec![2.0, 2.0]);
}

#[test]
fn eval_components_are_consistent() {
    let c = discrete(1, 3, 5, 2);
    let s = [0.2, -0.7];
    let base = c.eval(&s, &JointAction::Discrete(vec![1, 2, 3])).unwrap();
    let sum: f64 = base.k.iter().zip(&base.q).map(|(k, q)| k * q).sum::<f64>() + base.b;
    assert!((base.q_tot - sum).abs() < 1e-12);
    assert!((base.k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(base.k.iter().all(|&k| k >= 0.0));

    let moved = c.eval(&s, &JointAction::Discrete(vec![1, 4, 3])).unwrap();
    assert!((moved.q_tot - base.q_tot - base.k[1] * (moved.q[1] - base.q[1])).abs() < 1e-12);
    assert_eq!(moved.q[0].to_bits(), base.q[0].to_bits());
    assert_eq!(moved.q[2].to_bits(), base.q[2].to_bits());
}

#[test]
fn arity_mismatch_is_shape_error() {
    let c = discrete(1, 3, 5, 2);
    let err = c.eval(&[0.0, 0.0], &JointAction::Discrete(vec![0, 1])).unwrap_err();
    assert!(matches!(err, DopError::Shape(_)));
}

#[test]
fn one_hot_policies_reduce_to_eval() {
    let c = discrete(2, 3, 4, 1);
    let a = [2, 0, 3];
    let policies: Vec<Vec<f64>> = a.iter().map(|&x| (0..4).map(|y| if x == y { 1.0 } else { 0.0 }).collect()).collect();
    let e = c.expected_q(&[0.5], &policies).unwrap();
    let direct = c.eval(&[0.5], &JointAction::Discrete(a.to_vec())).unwrap().q_tot;
    assert!((e - direct).abs() < 1e-12);
}

#[test]
fn hand_set_tables_uniform_two_by_two() {
    // Q_1 = (1, 3), Q_2 = (-2, 4); k = (0.5, 0.5) from equal raw weights; b = 1.
    let util = Mlp::from_layers(
        vec![Layer { w: array![[0.0, 0.0], [1.0, 3.0], [-2.0, 4.0]], b: array![0.0, 0.0] }],
        OutputActivation::Identity,
    )
    .unwrap();
    let c = DecomposedCritic::from_parts(
        2,
        1,
        CriticKind::Discrete { n_actions: 2 },
        true,
        vec![util],
        Mlp::from_layers(vec![Layer { w: array![[0.0, 0.0]], b: array![1.0, 1.0] }], OutputActivation::Absolute).unwrap(),
        Mlp::from_layers(vec![Layer { w: array![[0.0]], b: array![1.0] }], OutputActivation::Identity).unwrap(),
    )
    .unwrap();
    let pi = vec![vec![0.5, 0.5]; 2];
    // Joint values 1 + 0.5 (q1 + q2): (1-2), (1+4), (3-2), (3+4) -> 0.5, 3.5, 1.5, 4.5.
    let mean = (0.5 + 3.5 + 1.5 + 4.5) / 4.0;
    assert!((c.expected_q(&[0.0], &pi).unwrap() - mean).abs() < 1e-12);
    assert!((brute_force_expectation(&c, &[0.0], &pi).0 - mean).abs() < 1e-12);
}

#[test]
fn matrix_game_sized_expectation_matches_brute_force() {
    let c = discrete(3, 3, 14, 1);
    let mut rng = seeded(4);
    let pi: Vec<Vec<f64>> = (0..3).map(|_| random_policy(&mut rng, 14)).collect();
    let (fast, reads) = c.expected_q_counted(&[0.0], &pi).unwrap();
    let (slow, evaluations) = brute_force_expectation(&c, &[0.0], &pi);
    assert!((fast - slow).abs() < 1e-9);
    assert_eq!(reads, 42);
    assert_eq!(evaluations, 2744);
}

#[test]
fn continuous_expectation_is_unsupported() {
    let c = continuous(1, 2, 1, 2);
    let err = c.expected_q(&[0.0, 0.0], &[vec![1.0], vec![1.0]]).unwrap_err();
    assert!(matches!(err, DopError::Unsupported(_)));
    let d = discrete(1, 2, 2, 2);
    let err = d.grad_wrt_action(&[0.0, 0.0], &JointAction::Discrete(vec![0, 0]), 0).unwrap_err();
    assert!(matches!(err, DopError::Unsupported(_)));
}

#[test]
fn action_gradient_zero_net() {
    let c = DecomposedCritic::from_parts(
        2,
        1,
        CriticKind::Continuous { action_dim: 2 },
        true,
        vec![Mlp::zeros(&[5, 4, 1], OutputActivation::Identity)],
        Mlp::zeros(&[1, 2], OutputActivation::Absolute),
        Mlp::zeros(&[1, 1], OutputActivation::Identity),
    )
    .unwrap();
    let a = JointAction::Continuous(vec![vec![0.1, 0.2], vec![-0.3, 0.4]]);
    assert_eq!(c.grad_wrt_action(&[0.0], &a, 1).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn action_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let c = continuous(seed, 3, 2, 2);
        let mut rng = seeded(100 + seed);
        let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let a: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        for i in 0..3 {
            let g = c.grad_wrt_action(&s, &JointAction::Continuous(a.clone()), i).unwrap();
            for d in 0..2 {
                let h = 1e-5;
                let mut plus = a.clone();
                plus[i][d] += h;
                let mut minus = a.clone();
                minus[i][d] -= h;
                let fd = (c.eval(&s, &JointAction::Continuous(plus)).unwrap().q_tot
                    - c.eval(&s, &JointAction::Continuous(minus)).unwrap().q_tot)
                    / (2.0 * h);
                let rel = (fd - g[d]).abs() / fd.abs().max(g[d].abs()).max(1e-6);
                assert!(rel < 1e-4, "seed {seed} agent {i} dim {d}: {fd} vs {}", g[d]);
            }
        }
    }
}

#[test]
fn action_gradient_ignores_other_agents() {
    let c = continuous(7, 3, 1, 2);
    let s = [0.1, 0.9];
    let a = vec![vec![0.2], vec![-0.4], vec![0.8]];
    let mut b = a.clone();
    b[0][0] = -0.9;
    b[2][0] = 0.05;
    let ga = c.grad_wrt_action(&s, &JointAction::Continuous(a), 1).unwrap();
    let gb = c.grad_wrt_action(&s, &JointAction::Continuous(b), 1).unwrap();
    assert_eq!(ga[0].to_bits(), gb[0].to_bits());
}

/// Loss `sum_r u_r Q_tot(s_r, a_r)` through the batched forward/backward.
fn surrogate_grad(c: &DecomposedCritic, states: &Array2<f64>, actions: &[Vec<usize>], u: &Array1<f64>) -> Vec<f64> {
    let fwd = c.forward(states.view(), None).unwrap();
    let n = c.n_agents();
    let mut dk = Array2::zeros((states.nrows(), n));
    let mut dq: Vec<Array2<f64>> = fwd.q.iter().map(|q| Array2::zeros(q.dim())).collect();
    for r in 0..states.nrows() {
        for i in 0..n {
            dk[[r, i]] = u[r] * fwd.q[i][[r, actions[r][i]]];
            dq[i][[r, actions[r][i]]] = u[r] * fwd.k[[r, i]];
        }
    }
    c.backward(&fwd, dk.view(), u.view(), &dq).unwrap().0.flatten()
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for seed in 0..20 {
        for shared in [true, false] {
            let cfg = CriticConfig { hidden: vec![6], mixer_hidden: vec![3], shared_utility: shared, normalize_weights: true };
            let c = DecomposedCritic::new(3, 2, CriticKind::Discrete { n_actions: 3 }, &cfg, &mut seeded(seed)).unwrap();
            let mut rng = seeded(500 + seed);
            let states = Array2::from_shape_simple_fn((4, 2), || rng.random_range(-1.0..1.0));
            let actions: Vec<Vec<usize>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(0..3)).collect()).collect();
            let u = Array1::from_shape_simple_fn(4, || rng.random_range(-1.0..1.0));
            let analytic = surrogate_grad(&c, &states, &actions, &u);
            let objective = |c: &DecomposedCritic| c.forward(states.view(), None).unwrap().q_tot_discrete(&actions).dot(&u);
            let base = c.params_flat();
            let mut probe = c.clone();
            let mut worst = 0.0f64;
            for p in 0..base.len() {
                let mut x = base.clone();
                x[p] += 1e-5;
                probe.set_params_flat(&x).unwrap();
                let plus = objective(&probe);
                x[p] -= 2e-5;
                probe.set_params_flat(&x).unwrap();
                let minus = objective(&probe);
                let fd = (plus - minus) / 2e-5;
                worst = worst.max((fd - analytic[p]).abs() / fd.abs().max(analytic[p].abs()).max(1e-6));
            }
            assert!(worst < 1e-4, "seed {seed} shared {shared}: {worst}");
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let c = discrete(9, 2, 3, 2);
    let mut buf = Vec::new();
    c.save(&mut buf).unwrap();
    let mut other = discrete(10, 2, 3, 2);
    assert_ne!(other, c);
    other.load(buf.as_slice()).unwrap();
    assert_eq!(other, c);
    assert_eq!(c.manifest(), vec!["utility0", "mixer_k", "mixer_b"]);
}

#[test]
fn soft_update_full_rate_copies() {
    let online = discrete(1, 2, 3, 1);
    let mut target = discrete(2, 2, 3, 1);
    target.soft_update_from(&online, 1.0).unwrap();
    assert_eq!(target, online);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decomposed_expectation_equals_brute_force(seed in 0u64..10_000, n in 2usize..=4, a in 2usize..=6) {
        let c = discrete(seed, n, a, 2);
        let mut rng = seeded(seed ^ 0xabcdef);
        let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let pi: Vec<Vec<f64>> = (0..n).map(|_| random_policy(&mut rng, a)).collect();
        let (fast, reads) = c.expected_q_counted(&s, &pi).unwrap();
        let (slow, _) = brute_force_expectation(&c, &s, &pi);
        prop_assert!((fast - slow).abs() < 1e-9);
        prop_assert_eq!(reads, n * a);
    }

    #[test]
    fn weights_are_normalized(seed in 0u64..10_000) {
        let c = discrete(seed, 4, 2, 3);
        let mut rng = seeded(seed);
        let states = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-2.0..2.0));
        let (k, _) = c.weights(states.view()).unwrap();
        for row in k.rows() {
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn local_reads_ignore_other_agents(seed in 0u64..10_000, a0 in 0usize..4, a1 in 0usize..4, b1 in 0usize..4) {
        let c = discrete(seed, 2, 4, 1);
        let x = c.eval(&[0.4], &JointAction::Discrete(vec![a0, a1])).unwrap();
        let y = c.eval(&[0.4], &JointAction::Discrete(vec![a0, b1])).unwrap();
        prop_assert_eq!((x.k[0] * x.q[0]).to_bits(), (y.k[0] * y.q[0]).to_bits());
    }
}
