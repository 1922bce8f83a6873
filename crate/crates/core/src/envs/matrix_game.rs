use super::{joint_count, joint_from_index, ActionSpace, EnvSpec, Environment, JointAction, Observation, StepResult};
use crate::error::{ensure, DopError, Result};
use crate::rng::SeedRng;

pub const MATRIX_AGENTS: usize = 3;
pub const MATRIX_ACTIONS: usize = 14;
pub const MATRIX_OPTIMUM: [usize; 3] = [1, 5, 9];

/// Stateless three-agent coordination game: +10 for the joint action
/// (1, 5, 9), -10 for everything else. Every episode is a single step.
#[derive(Debug, Clone)]
pub struct MatrixGame {
    spec: EnvSpec,
}

impl Default for MatrixGame {
    fn default() -> Self {
        Self::new()
    }
}

impl MatrixGame {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                n_agents: MATRIX_AGENTS,
                action_space: ActionSpace::Discrete(MATRIX_ACTIONS),
                obs_dim: 1,
                state_dim: 1,
                episode_limit: 1,
                gamma: 0.99,
            },
        }
    }

    pub fn payoff(actions: &[usize]) -> f64 {
        if actions == MATRIX_OPTIMUM {
            10.0
        } else {
            -10.0
        }
    }

    fn blank(&self) -> Observation {
        Observation { observations: vec![vec![0.0]; MATRIX_AGENTS], state: vec![0.0] }
    }
}

impl Environment for MatrixGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _rng: &mut SeedRng) -> Observation {
        self.blank()
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        let JointAction::Discrete(a) = action else {
            return Err(DopError::Input("matrix game takes discrete actions".into()));
        };
        ensure!(a.len() == MATRIX_AGENTS, Input, "matrix game needs exactly 3 agents, got {}", a.len());
        ensure!(
            a.iter().all(|&x| x < MATRIX_ACTIONS),
            Input,
            "action index out of range [0, 13]: {a:?}"
        );
        let blank = self.blank();
        Ok(StepResult {
            observations: blank.observations,
            state: blank.state,
            reward: Self::payoff(a),
            terminated: true,
            truncated: false,
        })
    }

    fn true_q_table(&self) -> Option<Vec<f64>> {
        Some(
            (0..joint_count(MATRIX_AGENTS, MATRIX_ACTIONS))
                .map(|idx| Self::payoff(&joint_from_index(idx, MATRIX_AGENTS, MATRIX_ACTIONS)))
                .collect(),
        )
    }
}
