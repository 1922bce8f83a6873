//! Deterministic DOP for continuous actions: transition replay, a TD(0)
//! critic loss, decomposed deterministic actor gradients, soft target
//! updates and delayed policy updates.

mod buffer;
mod policy;
mod trainer;

pub use buffer::{Transition, TransitionBuffer};
pub use policy::DeterministicPolicySet;
pub use trainer::{
    det_actor_gradient, det_critic_update, td_targets, Batch, ContinuousQ, DeterministicConfig, DeterministicTrainer, OffPolicyTrainer,
};
pub(crate) use trainer::continuous_bounds;
