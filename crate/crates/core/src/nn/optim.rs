use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Grad, Mlp};
use crate::error::{ensure, DopError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmsPropConfig {
    pub lr: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_alpha() -> f64 {
    0.99
}

fn default_eps() -> f64 {
    1e-8
}

impl RmsPropConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, alpha: default_alpha(), eps: default_eps() }
    }
}

/// RMSProp without momentum or weight decay:
/// `v <- alpha v + (1 - alpha) g^2`, `p <- p - lr g / (sqrt(v) + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    square_avg: Vec<(Array2<f64>, Array1<f64>)>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, net: &Mlp) -> Self {
        Self { config, square_avg: Grad::zeros_like(net).layers }
    }

    pub fn square_avg(&self) -> &[(Array2<f64>, Array1<f64>)] {
        &self.square_avg
    }

    /// Descent step.
    pub fn step(&mut self, net: &mut Mlp, grad: &Grad) -> Result<()> {
        self.update(net, grad, -1.0)
    }

    /// Ascent step, for maximizing objectives such as policy returns.
    pub fn ascend(&mut self, net: &mut Mlp, grad: &Grad) -> Result<()> {
        self.update(net, grad, 1.0)
    }

    fn update(&mut self, net: &mut Mlp, grad: &Grad, sign: f64) -> Result<()> {
        ensure!(grad.layers.len() == self.square_avg.len(), Shape, "gradient does not match optimizer state");
        for (l, ((dw, db), (vw, vb))) in grad.layers.iter().zip(&self.square_avg).enumerate() {
            ensure!(dw.dim() == vw.dim() && db.len() == vb.len(), Shape, "gradient shape mismatch in layer {l}");
        }
        if let Some((l, bad)) = grad
            .layers
            .iter()
            .enumerate()
            .find_map(|(l, (w, b))| w.iter().chain(b.iter()).find(|x| !x.is_finite()).map(|x| (l, *x)))
        {
            return Err(DopError::Training(format!("non-finite gradient component {bad} in layer {l}")));
        }
        let RmsPropConfig { lr, alpha, eps } = self.config;
        for (layer, ((dw, db), (vw, vb))) in net.layers_mut().iter_mut().zip(grad.layers.iter().zip(&mut self.square_avg)) {
            Zip::from(&mut layer.w).and(dw).and(vw).for_each(|p, &g, v| {
                *v = alpha * *v + (1.0 - alpha) * g * g;
                *p += sign * lr * g / (v.sqrt() + eps);
            });
            Zip::from(&mut layer.b).and(db).and(vb).for_each(|p, &g, v| {
                *v = alpha * *v + (1.0 - alpha) * g * g;
                *p += sign * lr * g / (v.sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OutputActivation;

    fn scalar_net(p: f64) -> Mlp {
        let mut net = Mlp::zeros(&[1, 1], OutputActivation::Identity);
        net.layers_mut()[0].w[[0, 0]] = p;
        net
    }

    fn scalar_grad(g: f64) -> Grad {
        let mut grad = Grad::zeros_like(&scalar_net(0.0));
        grad.layers[0].0[[0, 0]] = g;
        grad
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut net = scalar_net(1.0);
        let mut opt = RmsProp::new(RmsPropConfig::with_lr(0.1), &net);
        opt.step(&mut net, &scalar_grad(0.0)).unwrap();
        assert_eq!(net, scalar_net(1.0));
    }

    #[test]
    fn hand_evaluated_first_step() {
        let mut net = scalar_net(1.0);
        let cfg = RmsPropConfig { lr: 0.1, alpha: 0.99, eps: 1e-8 };
        let mut opt = RmsProp::new(cfg, &net);
        opt.step(&mut net, &scalar_grad(1.0)).unwrap();
        let v = opt.square_avg()[0].0[[0, 0]];
        assert!((v - 0.01).abs() < 1e-15);
        let expected = 1.0 - 0.1 * 1.0 / (0.01f64.sqrt() + 1e-8);
        assert!((net.layers()[0].w[[0, 0]] - expected).abs() < 1e-15);
        assert!(net.layers()[0].w[[0, 0]].abs() < 1e-6);
    }

    #[test]
    fn state_accumulates_between_calls() {
        let mut net = scalar_net(1.0);
        let mut opt = RmsProp::new(RmsPropConfig::with_lr(0.1), &net);
        opt.step(&mut net, &scalar_grad(1.0)).unwrap();
        let first = 1.0 - net.layers()[0].w[[0, 0]];
        let before = net.layers()[0].w[[0, 0]];
        opt.step(&mut net, &scalar_grad(1.0)).unwrap();
        let second = before - net.layers()[0].w[[0, 0]];
        assert!(first != second);
        assert!(opt.square_avg()[0].0.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn non_finite_gradient_is_training_error() {
        let mut net = scalar_net(1.0);
        let mut opt = RmsProp::new(RmsPropConfig::with_lr(0.1), &net);
        let err = opt.step(&mut net, &scalar_grad(f64::NAN)).unwrap_err();
        assert!(matches!(err, DopError::Training(_)));
        assert_eq!(net, scalar_net(1.0));
    }
}
