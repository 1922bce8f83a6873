//! Interface shared by every training algorithm.

use crate::analysis::GradientVarianceReport;
use crate::error::Result;

/// What one training iteration produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationStats {
    /// Undiscounted return of the last episode finished during the iteration.
    pub train_return: Option<f64>,
    pub loss_tb: Option<f64>,
    pub loss_on: Option<f64>,
    pub loss_td: Option<f64>,
}

pub trait Trainer: Send {
    /// Environment steps taken so far.
    fn env_steps(&self) -> u64;

    /// Collects data and performs the algorithm's updates.
    fn iterate(&mut self) -> Result<IterationStats>;

    /// Mean undiscounted return of greedy episodes on a dedicated environment.
    fn greedy_return(&mut self, episodes: usize) -> Result<f64>;

    /// `max_i k_i - min_i k_i` at the probe state, for decomposed critics.
    fn k_spread(&self) -> Result<Option<f64>> {
        Ok(None)
    }

    fn gradient_variance(&mut self, _n_samples: usize) -> Result<Option<GradientVarianceReport>> {
        Ok(None)
    }

    /// Mean absolute error of the critic against exact values, when known.
    fn bias(&self) -> Result<Option<f64>> {
        Ok(None)
    }

    /// Per-agent greedy action at the probe state.
    fn argmax_actions(&self) -> Result<Option<Vec<usize>>> {
        Ok(None)
    }
}
