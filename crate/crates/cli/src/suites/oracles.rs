use std::time::{Duration, Instant};

use dop::analysis::oracle::{brute_force_expected_q, brute_force_on_target, brute_force_tb_target};
use dop::analysis::{decomposed_fit_error, Quadratic};
use dop::baselines::{expectation, ExpectationMode, JointCritic, JointMode, LocalTables};
use dop::critic::{CriticConfig, CriticKind, DecomposedCritic};
use dop::envs::{random_tabular, Environment, JointAction, MatrixGame, TabularEnv};
use dop::experiment::run_seed;
use dop::nn::{grad_check, softmax, Mlp, OutputActivation};
use dop::rng::{seeded, SeedRng};
use dop::stochastic::{on_target, run_episode, tb_target, StochasticPolicySet, TbConfig};
use dop::{Algorithm, Result, RunConfig};
use ndarray::{Array1, Array2};
use rand::Rng;

use super::{sci, Check};
use crate::runner::write_csv;

pub const EXPECTATION_TOL: f64 = 1e-9;
pub const EXPECTATION_BUDGET: Duration = Duration::from_secs(10);
pub const TB_TOL: f64 = 1e-9;
pub const GRAD_TOL: f64 = 1e-4;
/// Central-difference step and the magnitude floor of the relative error.
pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-6;
pub const GRAD_SEEDS: u64 = 20;
pub const SCALING_RATIO: f64 = 3.0;

fn random_simplex(rng: &mut SeedRng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn uniform(rng: &mut SeedRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst relative error between `analytic` and central differences of
/// `objective` around `base`.
fn fd_worst(base: &[f64], analytic: &[f64], mut objective: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut x = base.to_vec();
    let mut worst = 0.0f64;
    for p in 0..base.len() {
        x[p] = base[p] + FD_STEP;
        let plus = objective(&x);
        x[p] = base[p] - FD_STEP;
        let minus = objective(&x);
        x[p] = base[p];
        worst = worst.max(rel_error(analytic[p], (plus - minus) / (2.0 * FD_STEP)));
    }
    worst
}

/// Decomposed expectation against joint enumeration on random critics.
pub fn criterion_1() -> Result<Check> {
    let start = Instant::now();
    let mut rng = seeded(0xC1);
    let mut worst = 0.0f64;
    let pairs = 1000;
    for _ in 0..pairs {
        let n = rng.random_range(2..=4);
        let a = rng.random_range(2..=6);
        let cfg = CriticConfig { hidden: vec![8], mixer_hidden: vec![4], shared_utility: rng.random(), normalize_weights: true };
        let critic = DecomposedCritic::new(n, 3, CriticKind::Discrete { n_actions: a }, &cfg, &mut rng)?;
        let state = uniform(&mut rng, 3);
        let pis: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(&mut rng, a)).collect();
        let fast = critic.expected_q(&state, &pis)?;
        let slow = brute_force_expected_q(&critic, &state, &pis)?;
        worst = worst.max((fast - slow).abs());
    }
    let elapsed = start.elapsed();
    Ok(Check::new(
        1,
        "expectation decomposition",
        format!("max |err| {} over {pairs} pairs in {:.2}s", sci(worst), elapsed.as_secs_f64()),
        format!("< {} within {}s", sci(EXPECTATION_TOL), EXPECTATION_BUDGET.as_secs()),
        worst < EXPECTATION_TOL && elapsed < EXPECTATION_BUDGET,
        start,
    ))
}

/// Local value reads of one expectation on the matrix game.
pub fn criterion_2() -> Result<Check> {
    let start = Instant::now();
    let game = MatrixGame::new();
    let spec = game.spec().clone();
    let n = spec.n_agents;
    let a = spec.action_space.size();
    let mut rng = seeded(0xC2);
    let critic = DecomposedCritic::new(n, spec.state_dim, CriticKind::Discrete { n_actions: a }, &CriticConfig::default(), &mut rng)?;
    let state = vec![0.0; spec.state_dim];
    let pis: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(&mut rng, a)).collect();
    let (_, decomposed) = critic.expected_q_counted(&state, &pis)?;
    let (q, k, b) = critic.local_values(&state)?;
    let (_, exhaustive) = expectation(LocalTables { q: &q, k: &k, b }, &pis, ExpectationMode::Exhaustive, &mut rng);
    let (want_fast, want_slow) = (n * a, a.pow(n as u32));
    Ok(Check::new(
        2,
        "expectation cost",
        format!("{decomposed} local reads vs {exhaustive} joint terms"),
        format!("exactly {want_fast} vs {want_slow}"),
        decomposed == want_fast && exhaustive == want_slow,
        start,
    ))
}

/// Tree-backup and on-policy targets against term-by-term reimplementations.
pub fn criterion_6() -> Result<Check> {
    let start = Instant::now();
    let mut rng = seeded(0xC6);
    let episodes = 1000;
    let (mut worst_tb, mut worst_on, mut targets) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..episodes {
        let n_states = rng.random_range(1..=3);
        let mdp = random_tabular(rng.random(), n_states, 2, 2)?;
        let limit = rng.random_range(1..=8);
        let mut env = TabularEnv::new(mdp, limit)?;
        let spec = env.spec().clone();
        let policies = StochasticPolicySet::new(2, spec.obs_dim, 2, 1, &[6], &mut rng)?;
        let cfg = CriticConfig { hidden: vec![6], mixer_hidden: vec![3], ..Default::default() };
        let critic = DecomposedCritic::new(2, spec.state_dim, CriticKind::Discrete { n_actions: 2 }, &cfg, &mut rng)?;
        let tb = TbConfig { tb_steps: rng.random_range(1..=6), lambda_tb: rng.random(), ..Default::default() };
        let lambda_on: f64 = rng.random();
        let mut env_rng = seeded(rng.random());
        let mut explore_rng = seeded(rng.random());
        let ep = run_episode(&mut env, &policies, 0.2, 0, &mut env_rng, &mut explore_rng)?;
        for t in 0..ep.len() {
            let fast = tb_target(&ep, t, &critic, &policies, &tb, spec.gamma, &mut rng)?;
            let slow = brute_force_tb_target(&ep, t, &critic, &policies, tb.tb_steps, tb.lambda_tb, spec.gamma)?;
            worst_tb = worst_tb.max((fast - slow).abs());
            let fast = on_target(&ep, t, &critic, &policies, lambda_on, spec.gamma)?;
            let slow = brute_force_on_target(&ep, t, &critic, &policies, lambda_on, spec.gamma)?;
            worst_on = worst_on.max((fast - slow).abs());
            targets += 1;
        }
    }
    Ok(Check::new(
        6,
        "tree-backup target oracle",
        format!("max |err| tb {} / on-policy {} over {episodes} episodes, {targets} targets", sci(worst_tb), sci(worst_on)),
        format!("< {}", sci(TB_TOL)),
        worst_tb < TB_TOL && worst_on < TB_TOL,
        start,
    ))
}

fn actor_log_prob_error(seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let policies = StochasticPolicySet::new(2, 3, 4, 2, &[8], &mut rng)?;
    let rows = 5;
    let inputs = Array2::from_shape_simple_fn((rows, 6), || rng.random_range(-1.0..1.0));
    let actions: Vec<usize> = (0..rows).map(|_| rng.random_range(0..4)).collect();
    let weights = uniform(&mut rng, rows);
    let mut worst = 0.0f64;
    for agent in 0..2 {
        let analytic = policies.log_prob_grad(agent, inputs.view(), &actions, &weights)?.flatten();
        let mut net = policies.actors()[agent].clone();
        let base = net.params_flat();
        worst = worst.max(fd_worst(&base, &analytic, |x| {
            net.set_params_flat(x).expect("same shape");
            let logits = net.forward(inputs.view()).expect("same shape");
            (0..rows).map(|r| weights[r] * softmax(&logits.row(r).to_vec())[actions[r]].ln()).sum()
        }));
    }
    Ok(worst)
}

/// Gradient of `sum_r u_r Q_tot(s_r, a_r)` through the decomposed backward pass.
fn critic_surrogate(critic: &DecomposedCritic, states: &Array2<f64>, discrete: Option<&[Vec<usize>]>, blocks: &[Array2<f64>], u: &Array1<f64>) -> Result<Vec<f64>> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let fwd = critic.forward(states.view(), if discrete.is_some() { None } else { Some(&views) })?;
    let n = critic.n_agents();
    let mut dk = Array2::zeros((states.nrows(), n));
    let mut dq: Vec<Array2<f64>> = fwd.q.iter().map(|q| Array2::zeros(q.dim())).collect();
    for r in 0..states.nrows() {
        for i in 0..n {
            let col = discrete.map_or(0, |a| a[r][i]);
            dk[[r, i]] = u[r] * fwd.q[i][[r, col]];
            dq[i][[r, col]] = u[r] * fwd.k[[r, i]];
        }
    }
    Ok(critic.backward(&fwd, dk.view(), u.view(), &dq)?.0.flatten())
}

fn critic_parameter_error(seed: u64, continuous: bool) -> Result<f64> {
    let mut rng = seeded(seed);
    let (n, rows, state_dim) = (3, 4, 2);
    let cfg = CriticConfig { hidden: vec![6], mixer_hidden: vec![3], shared_utility: seed % 2 == 0, normalize_weights: true };
    let kind = if continuous { CriticKind::Continuous { action_dim: 2 } } else { CriticKind::Discrete { n_actions: 3 } };
    let critic = DecomposedCritic::new(n, state_dim, kind, &cfg, &mut rng)?;
    let states = Array2::from_shape_simple_fn((rows, state_dim), || rng.random_range(-1.0..1.0));
    let actions: Vec<Vec<usize>> = (0..rows).map(|_| (0..n).map(|_| rng.random_range(0..3)).collect()).collect();
    let blocks: Vec<Array2<f64>> = (0..n).map(|_| Array2::from_shape_simple_fn((rows, 2), || rng.random_range(-1.0..1.0))).collect();
    let u = Array1::from_shape_simple_fn(rows, || rng.random_range(-1.0..1.0));
    let discrete = (!continuous).then_some(actions.as_slice());
    let analytic = critic_surrogate(&critic, &states, discrete, &blocks, &u)?;
    let mut probe = critic.clone();
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    Ok(fd_worst(&critic.params_flat(), &analytic, |x| {
        probe.set_params_flat(x).expect("same shape");
        let q = if continuous {
            probe.forward(states.view(), Some(&views)).expect("same shape").q_tot_continuous()
        } else {
            probe.forward(states.view(), None).expect("same shape").q_tot_discrete(&actions)
        };
        q.dot(&u)
    }))
}

/// `dQ_tot/da_i` of a continuous decomposed critic and of a scalar joint critic.
fn action_input_error(seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let (n, d) = (3, 2);
    let cfg = CriticConfig { hidden: vec![8], mixer_hidden: vec![4], shared_utility: seed % 2 == 1, normalize_weights: true };
    let critic = DecomposedCritic::new(n, 2, CriticKind::Continuous { action_dim: d }, &cfg, &mut rng)?;
    let joint = JointCritic::new(n, 2, d, JointMode::Scalar, &[8], &mut rng)?;
    let state = uniform(&mut rng, 2);
    let a: Vec<Vec<f64>> = (0..n).map(|_| uniform(&mut rng, d)).collect();
    let s = Array2::from_shape_vec((1, 2), state.clone()).expect("one row");
    let mut worst = 0.0f64;
    for i in 0..n {
        let analytic = critic.grad_wrt_action(&state, &JointAction::Continuous(a.clone()), i)?;
        worst = worst.max(fd_worst(&a[i], &analytic, |x| {
            let mut b = a.clone();
            b[i] = x.to_vec();
            critic.eval(&state, &JointAction::Continuous(b)).expect("valid action").q_tot
        }));
        let blocks: Vec<Array2<f64>> = a.iter().map(|x| Array2::from_shape_vec((1, d), x.clone()).expect("one row")).collect();
        let analytic = joint.action_grad(s.view(), &blocks, i)?.row(0).to_vec();
        worst = worst.max(fd_worst(&a[i], &analytic, |x| {
            let mut b = blocks.clone();
            b[i] = Array2::from_shape_vec((1, d), x.to_vec()).expect("one row");
            let input = joint.scalar_input(s.view(), &b).expect("valid blocks");
            joint.net().forward(input.view()).expect("valid input")[[0, 0]]
        }));
    }
    Ok(worst)
}

fn mlp_error(seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for output in [OutputActivation::Identity, OutputActivation::Absolute, OutputActivation::Softmax, OutputActivation::Tanh] {
        let net = Mlp::new(&[4, 7, 5, 3], output, &mut rng);
        let input = Array2::from_shape_simple_fn((3, 4), || rng.random_range(-1.0..1.0));
        worst = worst.max(grad_check(&net, input.view(), GRAD_TOL)?.max_rel_error);
    }
    Ok(worst)
}

/// Every analytic gradient against central differences.
pub fn criterion_7() -> Result<Check> {
    let start = Instant::now();
    let families: [(&str, fn(u64) -> Result<f64>); 5] = [
        ("actor", actor_log_prob_error),
        ("critic", |s| critic_parameter_error(s, false)),
        ("critic-cont", |s| critic_parameter_error(s, true)),
        ("action", action_input_error),
        ("mlp", mlp_error),
    ];
    let mut parts = Vec::new();
    let mut overall = 0.0f64;
    for (name, f) in families {
        let mut worst = 0.0f64;
        for seed in 0..GRAD_SEEDS {
            worst = worst.max(f(0xC7_00 + seed)?);
        }
        overall = overall.max(worst);
        parts.push(format!("{name} {}", sci(worst)));
    }
    Ok(Check::new(
        7,
        "gradients vs finite differences",
        format!("max rel err {} ({} seeds each)", parts.join(", "), GRAD_SEEDS),
        format!("< {}", sci(GRAD_TOL)),
        overall < GRAD_TOL,
        start,
    ))
}

/// Decomposed least-squares error on shrinking balls around a point.
pub fn criterion_10() -> Result<Check> {
    let start = Instant::now();
    let deltas = [0.2, 0.1, 0.05];
    let mut min_ratio = f64::INFINITY;
    for seed in 0..10u64 {
        let n = 2 + (seed % 3) as usize;
        let q = Quadratic::random(n, 0xC10 + seed);
        let center = uniform(&mut seeded(seed), n);
        let errors: Vec<f64> = deltas.iter().map(|&d| decomposed_fit_error(&q, &center, d, 5)).collect::<Result<_>>()?;
        for w in errors.windows(2) {
            min_ratio = min_ratio.min(w[0] / w[1]);
        }
    }
    Ok(Check::new(
        10,
        "decomposed fit error scaling",
        format!("min error ratio per halving {min_ratio:.3} over 10 quadratics"),
        format!(">= {SCALING_RATIO}"),
        min_ratio >= SCALING_RATIO,
        start,
    ))
}

fn csv_bytes(cfg: &RunConfig, seed: u64) -> Result<Vec<u8>> {
    let rows = run_seed(cfg, seed)?;
    let mut out = Vec::new();
    write_csv(&mut out, &rows).map_err(|e| dop::DopError::Data(e.to_string()))?;
    Ok(out)
}

/// Small configs of every algorithm, each run twice per seed.
pub fn criterion_11() -> Result<Check> {
    let start = Instant::now();
    let cases = [
        (Algorithm::StochasticDop, dop::envs::EnvConfig::MatrixGame),
        (Algorithm::CommonTbDop, dop::envs::EnvConfig::RandomTabular { seed: 4, n_states: 3, n_agents: 2, n_actions: 3, episode_limit: 6 }),
        (Algorithm::Coma, dop::envs::EnvConfig::MatrixGame),
        (Algorithm::Maddpg, dop::envs::EnvConfig::MatrixGame),
        (Algorithm::DeterministicDop, dop::envs::EnvConfig::Mill),
        (Algorithm::Maddpg, dop::envs::EnvConfig::Aggregation),
    ];
    let (mut pairs, mut identical, mut bytes) = (0, 0, 0);
    for (algorithm, env) in cases {
        let mut cfg = RunConfig::new(algorithm, env, 300);
        cfg.metric_period = 50;
        cfg.stochastic.actor_hidden = vec![16];
        cfg.stochastic.critic.hidden = vec![16];
        cfg.coma.critic_hidden = vec![16];
        cfg.coma.actor_hidden = vec![16];
        cfg.deterministic.critic.hidden = vec![16];
        cfg.deterministic.actor_hidden = vec![16];
        cfg.deterministic.joint_hidden = vec![16];
        cfg.deterministic.batch_size = 16;
        cfg.deterministic.warmup = 50;
        cfg.relaxation = Some(Default::default());
        for seed in [0, 7] {
            let first = csv_bytes(&cfg, seed)?;
            let second = csv_bytes(&cfg, seed)?;
            pairs += 1;
            bytes += first.len();
            identical += usize::from(first == second);
        }
    }
    Ok(Check::new(
        11,
        "bit-identical reruns",
        format!("{identical}/{pairs} (config, seed) pairs identical, {bytes} CSV bytes"),
        format!("{pairs}/{pairs}"),
        identical == pairs,
        start,
    ))
}
