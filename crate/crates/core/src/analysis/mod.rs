//! Measurements and exact oracles.

mod bias;
mod exact;
mod improvement;
pub mod oracle;
mod order;
mod scaling;
mod variance;

pub use bias::{bias_report, decomposed_table, BiasReport};
pub use exact::{bellman_residual, exact_policy_value, joint_policy, local_q_values, occupancy, value_iteration, ExactValues, TabularPolicy};
pub use improvement::{improvement_step, improvement_sweep, ImprovementOutcome, ImprovementSweep};
pub use order::{order_preservation_sweep, order_violations, OrderSweep, TIE_TOL};
pub use scaling::{decomposed_fit_error, Quadratic};
pub use variance::{gradient_variance, variance_trace, GradientVarianceReport};
