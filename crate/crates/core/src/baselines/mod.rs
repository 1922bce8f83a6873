//! Joint-critic comparators and ablations.

mod coma;
mod common_tb;
mod joint;
mod maddpg;

pub use coma::{coma_advantage, counterfactual_row, ComaConfig, ComaTrainer};
pub use common_tb::{expectation, ExpectationMode, LocalTables};
pub use joint::{one_hot, JointCritic, JointMode};
pub use maddpg::{
    gumbel_noise, gumbel_softmax, gumbel_softmax_backward, maddpg_continuous, MaddpgDiscreteTrainer, MaddpgTrainer, RelaxationConfig,
};

#[cfg(test)]
mod tests;
