use crate::error::{ensure, Result};
use crate::rng::SeedRng;
use crate::stochastic::sample_categorical;

/// Spread of one agent's per-sample policy gradient caused by the other
/// agents' actions.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVarianceReport {
    /// Per agent: `sum_{a_i} pi_i(a_i) tr Cov_{a_-i}[g_i(a_i, a_-i)]`.
    pub per_agent: Vec<f64>,
    pub mean: f64,
    pub n_samples: usize,
    pub step: u64,
}

impl GradientVarianceReport {
    /// Sample counts below 30 are too noisy to log.
    pub fn reportable(&self) -> bool {
        self.n_samples >= 30
    }
}

/// Trace of the unbiased sample covariance of equally sized vectors.
///
/// Samples are shifted by the first one before accumulating, so identical
/// samples give exactly zero.
pub fn variance_trace(samples: &[Vec<f64>]) -> Result<f64> {
    ensure!(samples.len() >= 2, Input, "need at least 2 samples, got {}", samples.len());
    let dim = samples[0].len();
    ensure!(samples.iter().all(|s| s.len() == dim), Shape, "gradient samples differ in length");
    let n = samples.len() as f64;
    let mut total = 0.0;
    for p in 0..dim {
        let origin = samples[0][p];
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for s in samples {
            let d = s[p] - origin;
            sum += d;
            sum_sq += d * d;
        }
        total += ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0);
    }
    Ok(total)
}

/// Holds each agent's action fixed, resamples the others from `policies`
/// `n_samples` times and measures the spread of `per_sample(agent, joint)`.
pub fn gradient_variance<F>(policies: &[Vec<f64>], n_samples: usize, step: u64, rng: &mut SeedRng, mut per_sample: F) -> Result<GradientVarianceReport>
where
    F: FnMut(usize, &[usize]) -> Result<Vec<f64>>,
{
    ensure!(n_samples >= 2, Input, "gradient variance needs at least 2 samples");
    let n = policies.len();
    let mut per_agent = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = 0.0;
        for (a_i, &w) in policies[i].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let mut samples = Vec::with_capacity(n_samples);
            for _ in 0..n_samples {
                let joint: Vec<usize> =
                    (0..n).map(|j| if j == i { a_i } else { sample_categorical(&policies[j], rng) }).collect();
                samples.push(per_sample(i, &joint)?);
            }
            acc += w * variance_trace(&samples)?;
        }
        per_agent.push(acc);
    }
    let mean = per_agent.iter().sum::<f64>() / n as f64;
    Ok(GradientVarianceReport { per_agent, mean, n_samples, step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn identical_samples_have_zero_variance() {
        let s = vec![vec![0.1, 0.2, 1.0 / 3.0]; 50];
        assert_eq!(variance_trace(&s).unwrap(), 0.0);
    }

    #[test]
    fn two_point_variance() {
        let s = vec![vec![1.0, 0.0], vec![3.0, 0.0]];
        assert!((variance_trace(&s).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_samples() {
        assert!(variance_trace(&[vec![1.0]]).is_err());
        let pi = vec![vec![0.5, 0.5]; 2];
        assert!(gradient_variance(&pi, 1, 0, &mut seeded(0), |_, _| Ok(vec![0.0])).is_err());
    }

    #[test]
    fn local_estimator_has_zero_variance() {
        let pi = vec![vec![0.2, 0.8], vec![0.6, 0.4], vec![0.5, 0.5]];
        let r = gradient_variance(&pi, 40, 7, &mut seeded(1), |i, joint| Ok(vec![joint[i] as f64 * 0.3 + 0.1; 4])).unwrap();
        assert!(r.per_agent.iter().all(|&v| v == 0.0));
        assert!(r.reportable());
    }
}
