use std::time::{Duration, Instant};

use dop::baselines::{JointCritic, JointMode};
use dop::envs::{joint_count, joint_from_index, EnvConfig, MatrixGame, MATRIX_ACTIONS, MATRIX_AGENTS, MATRIX_OPTIMUM};
use dop::experiment::{build_trainer, run_seed_with};
use dop::nn::RmsPropConfig;
use dop::rng::{stream_rng, Stream};
use dop::stochastic::{ActorForm, EpisodeBuffer, LinearSchedule, StochasticMode, StochasticTrainer};
use dop::trainer::Trainer;
use dop::{Algorithm, MetricRecord, Result, RunConfig};
use ndarray::Array2;
use rand::Rng;

use super::Check;

pub const STEPS: u64 = 10_000;
pub const SEEDS: u64 = 12;
pub const MIN_CONVERGED: usize = 10;
pub const OPTIMUM_RETURN: f64 = 10.0;
/// DOP's variance must sit below both baselines by at least this factor.
pub const VARIANCE_FACTOR: f64 = 2.0;
/// Checkpoints at or before this step are not compared.
pub const VARIANCE_FROM: u64 = 1000;
pub const BUDGET: Duration = Duration::from_secs(15 * 60);

const JOINT_FIT_STEPS: usize = 4000;
const JOINT_FIT_BATCH: usize = 64;
const JOINT_FIT_LR: f64 = 1e-3;

/// Shared settings of the three matrix-game learners.
pub fn matrix_config(algorithm: Algorithm) -> RunConfig {
    let mut cfg = RunConfig::new(algorithm, EnvConfig::MatrixGame, STEPS);
    cfg.seeds = (0..SEEDS).collect();
    let epsilon = LinearSchedule { start: 1.0, end: 0.05, steps: 5000 };
    cfg.stochastic.critic_lr = 1e-2;
    cfg.stochastic.actor_lr = 3e-4;
    cfg.stochastic.epsilon = epsilon;
    cfg.stochastic.actor_form = ActorForm::Advantage;
    cfg.coma.critic_lr = 1e-2;
    cfg.coma.actor_lr = 3e-4;
    cfg.coma.epsilon = epsilon;
    cfg.deterministic.batch_size = 32;
    cfg.deterministic.warmup = 1000;
    cfg.deterministic.joint_hidden = vec![64];
    cfg.relaxation = Some(Default::default());
    cfg
}

/// Metric rows of every learner and seed plus the joint-critic comparison.
#[derive(Debug, Clone)]
pub struct MatrixGameStudy {
    pub dop: Vec<Vec<MetricRecord>>,
    pub coma: Vec<Vec<MetricRecord>>,
    pub maddpg: Vec<Vec<MetricRecord>>,
    /// Mean absolute error of a capacity-matched joint critic fit to each DOP replay buffer.
    pub joint_bias: Vec<f64>,
    pub joint_hidden: usize,
}

fn collect(cfg: &RunConfig, seed: u64, trainer: &mut dyn Trainer) -> Result<Vec<MetricRecord>> {
    let mut rows = Vec::new();
    run_seed_with(cfg, seed, trainer, |r| {
        rows.push(r);
        Ok(())
    })?;
    Ok(rows)
}

fn truth_table() -> Vec<f64> {
    let (n, a) = (MATRIX_AGENTS, MATRIX_ACTIONS);
    (0..joint_count(n, a)).map(|j| MatrixGame::payoff(&joint_from_index(j, n, a))).collect()
}

/// Fits a scalar joint critic with about as many parameters as the DOP critic
/// to the discounted returns in `replay` and reports its error on the full
/// payoff table.
fn joint_fit_bias(replay: &EpisodeBuffer, dop_params: usize, gamma: f64, seed: u64) -> Result<(f64, usize)> {
    let (n, a) = (MATRIX_AGENTS, MATRIX_ACTIONS);
    let state_dim = 1;
    let input = state_dim + n * a;
    let hidden = ((dop_params - 1) as f64 / (input + 2) as f64).round().max(1.0) as usize;
    let mut rng = stream_rng(seed, Stream::Analysis);
    let mut critic = JointCritic::new(n, state_dim, a, JointMode::Scalar, &[hidden], &mut rng)?;
    let mut optim = critic.make_rmsprop(RmsPropConfig::with_lr(JOINT_FIT_LR));

    let (mut states, mut actions, mut targets) = (Vec::new(), Vec::new(), Vec::new());
    for ep in replay.iter() {
        let mut ret = 0.0;
        let mut returns = vec![0.0; ep.len()];
        for t in (0..ep.len()).rev() {
            ret = ep.rewards[t] + gamma * ret;
            returns[t] = ret;
        }
        for t in 0..ep.len() {
            states.push(ep.states[t].clone());
            actions.push(ep.actions[t].clone());
            targets.push(returns[t]);
        }
    }
    for _ in 0..JOINT_FIT_STEPS {
        let idx: Vec<usize> = (0..JOINT_FIT_BATCH).map(|_| rng.random_range(0..targets.len())).collect();
        let s = Array2::from_shape_fn((idx.len(), state_dim), |(r, c)| states[idx[r]][c]);
        let blocks: Vec<Array2<f64>> =
            (0..n).map(|i| Array2::from_shape_fn((idx.len(), a), |(r, c)| f64::from(u8::from(actions[idx[r]][i] == c)))).collect();
        let x = critic.scalar_input(s.view(), &blocks)?;
        let y: Vec<f64> = idx.iter().map(|&k| targets[k]).collect();
        critic.regression_step(&mut optim, x.view(), &vec![0; idx.len()], &y)?;
    }
    let table = critic.q_table(&[0.0])?;
    let truth = truth_table();
    let mae = table.iter().zip(&truth).map(|(q, t)| (q - t).abs()).sum::<f64>() / truth.len() as f64;
    Ok((mae, hidden))
}

pub fn matrix_game_study(seeds: &[u64]) -> Result<MatrixGameStudy> {
    let dop_cfg = matrix_config(Algorithm::StochasticDop);
    let coma_cfg = matrix_config(Algorithm::Coma);
    let maddpg_cfg = matrix_config(Algorithm::Maddpg);
    let mut study = MatrixGameStudy { dop: Vec::new(), coma: Vec::new(), maddpg: Vec::new(), joint_bias: Vec::new(), joint_hidden: 0 };
    for &seed in seeds {
        let env = dop_cfg.env.build(None)?;
        let eval = dop_cfg.env.build(None)?;
        let gamma = env.spec().gamma;
        let mut dop = StochasticTrainer::new(env, eval, dop_cfg.stochastic.clone(), StochasticMode::Dop, seed)?;
        study.dop.push(collect(&dop_cfg, seed, &mut dop)?);
        let (bias, hidden) = joint_fit_bias(dop.replay(), dop.critic().params_flat().len(), gamma, seed)?;
        study.joint_bias.push(bias);
        study.joint_hidden = hidden;
        study.coma.push(collect(&coma_cfg, seed, build_trainer(&coma_cfg, seed)?.as_mut())?);
        study.maddpg.push(collect(&maddpg_cfg, seed, build_trainer(&maddpg_cfg, seed)?.as_mut())?);
    }
    Ok(study)
}

/// Seed-mean variance at each checkpoint after [`VARIANCE_FROM`].
fn mean_variance(runs: &[Vec<MetricRecord>]) -> Vec<(u64, f64)> {
    runs[0]
        .iter()
        .enumerate()
        .filter(|(_, r)| r.step > VARIANCE_FROM)
        .map(|(k, r)| {
            let total: f64 = runs.iter().map(|run| run.get(k).and_then(|x| x.grad_variance).unwrap_or(f64::NAN)).sum();
            (r.step, total / runs.len() as f64)
        })
        .collect()
}

fn below(dop: f64, other: f64) -> bool {
    dop < other && dop * VARIANCE_FACTOR <= other
}

impl MatrixGameStudy {
    pub fn converged(&self) -> Vec<bool> {
        self.dop.iter().map(|rows| rows.last().and_then(|r| r.eval_return) == Some(OPTIMUM_RETURN)).collect()
    }

    /// Checkpoints where the seed-mean comparison holds, out of those compared.
    pub fn variance_ordering(&self) -> (usize, usize, f64, f64) {
        let dop = mean_variance(&self.dop);
        let coma = mean_variance(&self.coma);
        let maddpg = mean_variance(&self.maddpg);
        let mut ok = 0;
        let compared = dop.len().max(coma.len()).max(maddpg.len());
        for ((d, c), m) in dop.iter().zip(&coma).zip(&maddpg) {
            if d.0 == c.0 && d.0 == m.0 && below(d.1, c.1) && below(d.1, m.1) {
                ok += 1;
            }
        }
        let min_coma = coma.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let min_maddpg = maddpg.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        (ok, compared, min_coma, min_maddpg)
    }

    /// Per (seed, checkpoint) cells where DOP is below both baselines by the factor.
    pub fn per_seed_variance_ordering(&self) -> (usize, usize) {
        let (mut ok, mut total) = (0, 0);
        for ((d, c), m) in self.dop.iter().zip(&self.coma).zip(&self.maddpg) {
            for ((d, c), m) in d.iter().zip(c).zip(m).filter(|((d, _), _)| d.step > VARIANCE_FROM) {
                total += 1;
                if let (Some(d), Some(c), Some(m)) = (d.grad_variance, c.grad_variance, m.grad_variance) {
                    ok += usize::from(below(d, c) && below(d, m));
                }
            }
        }
        (ok, total)
    }

    pub fn dop_bias(&self) -> Vec<f64> {
        self.dop.iter().map(|rows| rows.last().and_then(|r| r.bias).unwrap_or(f64::NAN)).collect()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Convergence, variance ordering, local argmax and bias on the matrix game.
pub fn criterion_5() -> Result<Check> {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..SEEDS).collect();
    let study = matrix_game_study(&seeds)?;
    let elapsed = start.elapsed();

    let converged = study.converged();
    let n_converged = converged.iter().filter(|&&c| c).count();
    let pass_a = n_converged >= MIN_CONVERGED;

    let (var_ok, var_total, min_coma, min_maddpg) = study.variance_ordering();
    let (cell_ok, cell_total) = study.per_seed_variance_ordering();
    let max_dop = mean_variance(&study.dop).iter().map(|c| c.1).fold(0.0, f64::max);
    let pass_b = var_total > 0 && var_ok == var_total;

    let argmax_ok = study
        .dop
        .iter()
        .zip(&converged)
        .filter(|(_, &c)| c)
        .filter(|(rows, _)| rows.last().and_then(|r| r.argmax()).as_deref() == Some(&MATRIX_OPTIMUM[..]))
        .count();
    let pass_c = n_converged > 0 && argmax_ok == n_converged;

    let dop_bias = study.dop_bias();
    let positive = dop_bias.iter().filter(|&&b| b > 0.0).count();
    let joint_wins = dop_bias.iter().zip(&study.joint_bias).filter(|(d, j)| j < d).count();
    let pass_d = positive == dop_bias.len() && mean(&study.joint_bias) < mean(&dop_bias);

    let measured = format!(
        "(a) {n_converged}/{SEEDS} seeds return {OPTIMUM_RETURN}; \
         (b) seed-mean ordering at {var_ok}/{var_total} checkpoints, DOP max {max_dop:.2e}, COMA min {min_coma:.2e}, MADDPG min {min_maddpg:.2e}, per-seed cells {cell_ok}/{cell_total}; \
         (c) argmax {:?} in {argmax_ok}/{n_converged} converged seeds; \
         (d) DOP bias > 0 in {positive}/{}, mean {:.3} vs joint critic (h={}) {:.3}, joint lower in {joint_wins}/{}; {:.0}s",
        MATRIX_OPTIMUM,
        dop_bias.len(),
        mean(&dop_bias),
        study.joint_hidden,
        mean(&study.joint_bias),
        dop_bias.len(),
        elapsed.as_secs_f64()
    );
    Ok(Check::new(
        5,
        "matrix game",
        measured,
        format!(
            "(a) >= {MIN_CONVERGED}/{SEEDS}; (b) every checkpoint after step {VARIANCE_FROM}, factor >= {VARIANCE_FACTOR}; (c) all converged; (d) all > 0 and joint mean lower; within {}s",
            BUDGET.as_secs()
        ),
        pass_a && pass_b && pass_c && pass_d && elapsed < BUDGET,
        start,
    ))
}
