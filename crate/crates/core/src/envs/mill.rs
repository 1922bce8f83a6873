use super::{expect_continuous, ActionSpace, EnvSpec, Environment, JointAction, Observation, StepResult};
use crate::error::Result;
use crate::rng::SeedRng;

pub const MILL_AGENTS: usize = 10;
const FORCE: f64 = 1.5;
const LIMIT: usize = 10;

/// Ten agents push a millstone. Positive actions push clockwise. The team
/// earns 3 per step while the angular velocity exceeds 30, and at step 10
/// gets +10 if it reached at least 100, -10 otherwise.
#[derive(Debug, Clone)]
pub struct Mill {
    spec: EnvSpec,
    omega: f64,
    t: usize,
}

impl Default for Mill {
    fn default() -> Self {
        Self::new()
    }
}

impl Mill {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                n_agents: MILL_AGENTS,
                action_space: ActionSpace::Continuous { low: vec![-1.0], high: vec![1.0] },
                obs_dim: 2,
                state_dim: 2,
                episode_limit: LIMIT,
                gamma: 0.99,
            },
            omega: 0.0,
            t: 0,
        }
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Overrides the angular velocity and the step counter.
    pub fn set(&mut self, omega: f64, t: usize) {
        self.omega = omega;
        self.t = t;
    }

    fn observe(&self) -> Observation {
        let o = vec![self.omega / 100.0, self.t as f64 / LIMIT as f64];
        Observation { observations: vec![o.clone(); MILL_AGENTS], state: o }
    }
}

impl Environment for Mill {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _rng: &mut SeedRng) -> Observation {
        self.omega = 0.0;
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        let actions = expect_continuous(action, MILL_AGENTS, 1)?;
        self.omega += FORCE * actions.iter().map(|a| a[0].clamp(-1.0, 1.0)).sum::<f64>();
        self.t += 1;
        let mut reward = if self.omega > 30.0 { 3.0 } else { 0.0 };
        let (mut terminated, mut truncated) = (false, false);
        if self.t >= LIMIT {
            if self.omega >= 100.0 {
                reward += 10.0;
                terminated = true;
            } else {
                reward -= 10.0;
                truncated = true;
            }
        }
        let obs = self.observe();
        Ok(StepResult { observations: obs.observations, state: obs.state, reward, terminated, truncated })
    }
}
