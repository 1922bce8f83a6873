use rand::Rng;

use super::{expect_continuous, ActionSpace, EnvSpec, Environment, JointAction, Observation, StepResult};
use crate::error::Result;
use crate::rng::SeedRng;

pub const AGGREGATION_AGENTS: usize = 5;
const SPEED: f64 = 0.2;
const RADIUS: f64 = 0.1;
const LIMIT: usize = 25;

/// Point-mass navigation: five agents must all stand within 0.1 of the
/// landmark at the origin. Success pays +10 and ends the episode; failing to
/// gather within 25 steps pays -10.
#[derive(Debug, Clone)]
pub struct Aggregation {
    spec: EnvSpec,
    positions: Vec<[f64; 2]>,
    t: usize,
}

impl Default for Aggregation {
    fn default() -> Self {
        Self::new()
    }
}

impl Aggregation {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                n_agents: AGGREGATION_AGENTS,
                action_space: ActionSpace::Continuous { low: vec![-1.0; 2], high: vec![1.0; 2] },
                obs_dim: 4,
                state_dim: 2 * AGGREGATION_AGENTS,
                episode_limit: LIMIT,
                gamma: 0.99,
            },
            positions: vec![[0.0; 2]; AGGREGATION_AGENTS],
            t: 0,
        }
    }

    /// Places agents explicitly and rewinds the clock to `t`.
    pub fn set_positions(&mut self, positions: &[[f64; 2]], t: usize) {
        assert_eq!(positions.len(), AGGREGATION_AGENTS);
        self.positions = positions.to_vec();
        self.t = t;
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    fn observe(&self) -> Observation {
        let observations = self.positions.iter().map(|p| vec![p[0], p[1], p[0], p[1]]).collect();
        let state = self.positions.iter().flat_map(|p| p.iter().copied()).collect();
        Observation { observations, state }
    }

    pub fn gathered(&self) -> bool {
        self.positions.iter().all(|p| p[0].hypot(p[1]) <= RADIUS)
    }
}

impl Environment for Aggregation {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut SeedRng) -> Observation {
        for p in &mut self.positions {
            *p = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        }
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        let actions = expect_continuous(action, AGGREGATION_AGENTS, 2)?;
        for (p, a) in self.positions.iter_mut().zip(actions) {
            for d in 0..2 {
                p[d] = (p[d] + SPEED * a[d].clamp(-1.0, 1.0)).clamp(-1.0, 1.0);
            }
        }
        self.t += 1;
        let (reward, terminated, truncated) = if self.gathered() {
            (10.0, true, false)
        } else if self.t >= LIMIT {
            (-10.0, false, true)
        } else {
            (0.0, false, false)
        };
        let obs = self.observe();
        Ok(StepResult { observations: obs.observations, state: obs.state, reward, terminated, truncated })
    }
}
