use ndarray::{Array2, ArrayView2};

use super::{Grad, Mlp};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Fixed, non-constant upstream pattern so softmax heads get a non-zero
/// gradient from the probe objective.
fn probe(rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(r, c)| ((r * 7 + c * 3 + 1) as f64).sin())
}

fn objective(net: &Mlp, input: ArrayView2<f64>, up: &Array2<f64>) -> Result<f64> {
    Ok((net.forward(input)? * up).sum())
}

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares a supplied gradient of `sum(probe * net(input))` against central
/// differences and returns the largest relative error.
pub fn grad_check_against(net: &Mlp, input: ArrayView2<f64>, analytic: &Grad) -> Result<f64> {
    let up = probe(input.nrows(), net.output_dim());
    let base = net.params_flat();
    let analytic = analytic.flatten();
    let mut probe_net = net.clone();
    let mut params = base.clone();
    let mut worst = 0.0f64;
    for k in 0..base.len() {
        params[k] = base[k] + FD_STEP;
        probe_net.set_params_flat(&params)?;
        let plus = objective(&probe_net, input, &up)?;
        params[k] = base[k] - FD_STEP;
        probe_net.set_params_flat(&params)?;
        let minus = objective(&probe_net, input, &up)?;
        params[k] = base[k];
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(rel_error(analytic[k], numeric));
    }
    Ok(worst)
}

/// Backpropagation vs central differences, `h = 1e-5`.
pub fn grad_check(net: &Mlp, input: ArrayView2<f64>, tolerance: f64) -> Result<GradCheckReport> {
    let up = probe(input.nrows(), net.output_dim());
    let (_, cache) = net.forward_cached(input)?;
    let (grad, _) = net.backward(&cache, up.view())?;
    let max_rel_error = grad_check_against(net, input, &grad)?;
    Ok(GradCheckReport { max_rel_error, passed: max_rel_error < tolerance })
}

/// Input-gradient check for the same probe objective.
pub fn input_grad_check(net: &Mlp, input: ArrayView2<f64>) -> Result<f64> {
    let up = probe(input.nrows(), net.output_dim());
    let (_, cache) = net.forward_cached(input)?;
    let (_, dx) = net.backward(&cache, up.view())?;
    let mut x = input.to_owned();
    let mut worst = 0.0f64;
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = x[[r, c]];
        x[[r, c]] = orig + FD_STEP;
        let plus = objective(net, x.view(), &up)?;
        x[[r, c]] = orig - FD_STEP;
        let minus = objective(net, x.view(), &up)?;
        x[[r, c]] = orig;
        worst = worst.max(rel_error(dx[[r, c]], (plus - minus) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OutputActivation;
    use crate::rng::seeded;
    use rand::Rng;

    fn batch(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn fresh_nets_pass_for_every_head() {
        for (i, act) in [OutputActivation::Identity, OutputActivation::Absolute, OutputActivation::Softmax, OutputActivation::Tanh]
            .into_iter()
            .enumerate()
        {
            let net = Mlp::new(&[4, 16, 8, 3], act, &mut seeded(10 + i as u64));
            let report = grad_check(&net, batch(i as u64, 6, 4).view(), 1e-4).unwrap();
            assert!(report.passed, "{act:?}: {}", report.max_rel_error);
            assert!(input_grad_check(&net, batch(i as u64, 6, 4).view()).unwrap() < 1e-4);
        }
    }

    #[test]
    fn linear_net_is_nearly_exact() {
        let net = Mlp::new(&[5, 2], OutputActivation::Identity, &mut seeded(3));
        let report = grad_check(&net, batch(3, 4, 5).view(), 1e-7).unwrap();
        assert!(report.max_rel_error < 1e-7, "{}", report.max_rel_error);
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let net = Mlp::new(&[3, 8, 2], OutputActivation::Identity, &mut seeded(5));
        let x = batch(5, 4, 3);
        let up = probe(4, 2);
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let (mut grad, _) = net.backward(&cache, up.view()).unwrap();
        // Drop the ReLU mask contribution of the last layer's weights.
        grad.layers[1].0.mapv_inplace(|g| g * 1.1 + 0.05);
        assert!(grad_check_against(&net, x.view(), &grad).unwrap() > 1e-2);
    }
}
