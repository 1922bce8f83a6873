use crate::critic::DecomposedCritic;
use crate::envs::{joint_count, joint_from_index};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    /// Mean `|Q_est(a) - Q_true(a)|` over all joint actions.
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
    pub count: usize,
}

pub fn bias_report(estimates: &[f64], truth: &[f64]) -> Result<BiasReport> {
    ensure!(!truth.is_empty() && estimates.len() == truth.len(), Shape, "estimate and truth tables differ in size");
    let errors: Vec<f64> = estimates.iter().zip(truth).map(|(e, t)| (e - t).abs()).collect();
    Ok(BiasReport {
        mean_abs_error: errors.iter().sum::<f64>() / errors.len() as f64,
        max_abs_error: errors.iter().copied().fold(0.0, f64::max),
        count: errors.len(),
    })
}

/// `Q_tot` of a discrete decomposed critic at every flat joint action.
pub fn decomposed_table(critic: &DecomposedCritic, state: &[f64]) -> Result<Vec<f64>> {
    let (q, k, b) = critic.local_values(state)?;
    let n = q.len();
    let a = q[0].len();
    Ok((0..joint_count(n, a))
        .map(|j| b + joint_from_index(j, n, a).iter().enumerate().map(|(i, &x)| k[i] * q[i][x]).sum::<f64>())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_tables_have_zero_bias() {
        let t = vec![1.0, -2.0, 3.5];
        assert_eq!(bias_report(&t, &t).unwrap().mean_abs_error, 0.0);
    }

    #[test]
    fn mean_and_max() {
        let r = bias_report(&[1.0, 0.0], &[0.0, 0.5]).unwrap();
        assert!((r.mean_abs_error - 0.75).abs() < 1e-15);
        assert_eq!(r.max_abs_error, 1.0);
    }
}
