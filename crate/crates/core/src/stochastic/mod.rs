//! Stochastic decomposed off-policy actor-critic.

mod actor;
mod buffers;
mod policy;
mod targets;
mod trainer;

pub use actor::{actor_gradient, aristocrat_utility, offpolicy_actor_gradient, ActorForm};
pub use buffers::EpisodeBuffer;
pub use policy::{argmax, sample_categorical, window_input, LinearSchedule, StochasticPolicySet};
pub use targets::{batch_values, episode_values, on_target, on_targets, tb_target, tb_targets, EpisodeValues, TbConfig};
pub use trainer::{
    critic_loss, critic_loss_and_update, run_episode, LossComponents, StochasticConfig, StochasticMode, StochasticTrainer,
};
