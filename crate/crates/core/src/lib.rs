pub mod analysis;
pub mod baselines;
pub mod config;
pub mod critic;
pub mod deterministic;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod stochastic;
pub mod trainer;

pub use config::{Algorithm, RunConfig};
pub use error::{DopError, Result};
pub use metrics::MetricRecord;
