use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{ensure, DopError, Result};
use crate::rng::SeedRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    /// |x|, subgradient 0 at the origin.
    Absolute,
    /// Row-wise softmax.
    Softmax,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `in x out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Feed-forward network with ReLU hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    output: OutputActivation,
}

/// Values cached by [`Mlp::forward_cached`] for one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    /// Input to every layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Activations {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn rows(&self) -> usize {
        self.output.nrows()
    }
}

/// Parameter-shaped gradient of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grad {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Grad {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.raw_dim())))
                .collect(),
        }
    }

    fn check_compatible(&self, other: &Grad) -> Result<()> {
        ensure!(self.layers.len() == other.layers.len(), Shape, "gradient layer counts differ");
        for ((w1, b1), (w2, b2)) in self.layers.iter().zip(&other.layers) {
            ensure!(w1.dim() == w2.dim() && b1.len() == b2.len(), Shape, "gradient shapes differ");
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Grad) -> Result<()> {
        self.check_compatible(other)?;
        for ((w1, b1), (w2, b2)) in self.layers.iter_mut().zip(&other.layers) {
            *w1 += w2;
            *b1 += b2;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for (w, b) in &mut self.layers {
            w.mapv_inplace(|x| x * c);
            b.mapv_inplace(|x| x * c);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.iter().chain(b.iter()).all(|x| x.is_finite()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.layers.iter().map(|(w, b)| w.iter().chain(b.iter()).map(|x| x * x).sum::<f64>()).sum()
    }
}

impl Mlp {
    /// `widths` lists the input width, hidden widths and output width.
    /// Weights are uniform in +-1/sqrt(fan_in), biases likewise.
    pub fn new(widths: &[usize], output: OutputActivation, rng: &mut SeedRng) -> Self {
        assert!(widths.len() >= 2, "an Mlp needs input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0].max(1) as f64).sqrt();
                Layer {
                    w: Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..=bound)),
                    b: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..=bound)),
                }
            })
            .collect();
        Self { layers, output }
    }

    pub fn zeros(widths: &[usize], output: OutputActivation) -> Self {
        assert!(widths.len() >= 2, "an Mlp needs input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| Layer { w: Array2::zeros((w[0], w[1])), b: Array1::zeros(w[1]) })
            .collect();
        Self { layers, output }
    }

    pub fn from_layers(layers: Vec<Layer>, output: OutputActivation) -> Result<Self> {
        ensure!(!layers.is_empty(), Shape, "no layers");
        for pair in layers.windows(2) {
            ensure!(pair[0].w.ncols() == pair[1].w.nrows(), Shape, "layer widths do not chain");
        }
        for l in &layers {
            ensure!(l.w.ncols() == l.b.len(), Shape, "bias width mismatch");
        }
        Ok(Self { layers, output })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.w.ncols()));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].w.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        ensure!(
            x.ncols() == self.input_dim(),
            Shape,
            "input width {} does not match network input width {}",
            x.ncols(),
            self.input_dim()
        );
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w);
            z += &layer.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        Ok(self.activate(h))
    }

    /// Single-row convenience wrapper around [`Mlp::forward`].
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).map_err(|e| DopError::Shape(e.to_string()))?;
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Activations)> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w);
            z += &layer.b;
            inputs.push(h);
            h = if i < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
        }
        let output = self.activate(h);
        let cache = Activations { inputs, pre, output: output.clone() };
        Ok((output, cache))
    }

    fn activate(&self, mut z: Array2<f64>) -> Array2<f64> {
        match self.output {
            OutputActivation::Identity => {}
            OutputActivation::Absolute => z.mapv_inplace(f64::abs),
            OutputActivation::Tanh => z.mapv_inplace(f64::tanh),
            OutputActivation::Softmax => {
                for mut row in z.rows_mut() {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - m).exp());
                    let total = row.sum();
                    row.mapv_inplace(|v| v / total);
                }
            }
        }
        z
    }

    /// Gradient of `sum(upstream * output)` with respect to the parameters and
    /// to the input, using activations cached by [`Mlp::forward_cached`].
    pub fn backward(&self, cache: &Activations, upstream: ArrayView2<f64>) -> Result<(Grad, Array2<f64>)> {
        ensure!(
            cache.inputs.len() == self.layers.len() && cache.pre.len() == self.layers.len(),
            State,
            "backward called without a cached forward pass of this network"
        );
        for (layer, input) in self.layers.iter().zip(&cache.inputs) {
            ensure!(input.ncols() == layer.w.nrows(), State, "cached activations belong to a different network");
        }
        ensure!(
            upstream.dim() == cache.output.dim(),
            Shape,
            "upstream gradient {:?} does not match output {:?}",
            upstream.dim(),
            cache.output.dim()
        );
        let last = self.layers.len() - 1;
        let mut dz = match self.output {
            OutputActivation::Identity => upstream.to_owned(),
            OutputActivation::Absolute => {
                let mut d = upstream.to_owned();
                Zip::from(&mut d).and(&cache.pre[last]).for_each(|d, &z| {
                    *d *= if z > 0.0 {
                        1.0
                    } else if z < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                d
            }
            OutputActivation::Tanh => {
                let mut d = upstream.to_owned();
                Zip::from(&mut d).and(&cache.output).for_each(|d, &y| *d *= 1.0 - y * y);
                d
            }
            OutputActivation::Softmax => {
                let y = &cache.output;
                let mut d = upstream.to_owned();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = drow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                    Zip::from(&mut drow).and(&yrow).for_each(|d, &p| *d = p * (*d - dot));
                }
                d
            }
        };
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let dw = cache.inputs[i].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            let mut dh = dz.dot(&layer.w.t());
            grads.push((dw, db));
            if i > 0 {
                Zip::from(&mut dh).and(&cache.pre[i - 1]).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            dz = dh;
        }
        grads.reverse();
        Ok((Grad { layers: grads }, dz))
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure!(flat.len() == self.num_params(), Shape, "expected {} parameters, got {}", self.num_params(), flat.len());
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = it.next().unwrap_or_default();
            }
        }
        Ok(())
    }

    /// `self <- alpha * online + (1 - alpha) * self`, parameter-wise.
    pub fn soft_update_from(&mut self, online: &Mlp, alpha: f64) -> Result<()> {
        ensure!(alpha > 0.0 && alpha <= 1.0, Input, "soft update rate {alpha} outside (0, 1]");
        ensure!(self.widths() == online.widths(), Shape, "soft update between different architectures");
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.w).and(&o.w).for_each(|t, &o| *t = alpha * o + (1.0 - alpha) * *t);
            Zip::from(&mut t.b).and(&o.b).for_each(|t, &o| *t = alpha * o + (1.0 - alpha) * *t);
        }
        Ok(())
    }

    /// Adds `scale * grad` to the parameters.
    pub fn apply(&mut self, grad: &Grad, scale: f64) -> Result<()> {
        grad.check_compatible(&Grad::zeros_like(self))?;
        for (l, (dw, db)) in self.layers.iter_mut().zip(&grad.layers) {
            l.w.scaled_add(scale, dw);
            l.b.scaled_add(scale, db);
        }
        Ok(())
    }
}

/// Row-wise numerically stable softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], OutputActivation::Identity);
        let y = net.forward(Array2::from_elem((5, 3), 0.7).view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_batch_stays_empty() {
        let net = Mlp::new(&[3, 4, 2], OutputActivation::Identity, &mut seeded(0));
        let y = net.forward(Array2::zeros((0, 3)).view()).unwrap();
        assert_eq!(y.dim(), (0, 2));
    }

    #[test]
    fn softmax_head_on_equal_logits_is_uniform() {
        let net = Mlp::zeros(&[2, 3], OutputActivation::Softmax);
        let y = net.forward(array![[1.0, -2.0]].view()).unwrap();
        for v in y.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn absolute_head() {
        let mut net = Mlp::zeros(&[1, 1], OutputActivation::Absolute);
        net.layers_mut()[0].b[0] = -2.5;
        assert_eq!(net.forward_one(&[0.0]).unwrap(), vec![2.5]);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let net = Mlp::zeros(&[3, 2], OutputActivation::Identity);
        assert!(matches!(net.forward(Array2::zeros((1, 4)).view()), Err(DopError::Shape(_))));
    }

    #[test]
    fn backward_without_cache_is_state_error() {
        let net = Mlp::zeros(&[3, 2], OutputActivation::Identity);
        let err = net.backward(&Activations::default(), Array2::zeros((1, 2)).view());
        assert!(matches!(err, Err(DopError::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grad() {
        let net = Mlp::new(&[3, 5, 2], OutputActivation::Tanh, &mut seeded(4));
        let x = array![[0.3, -0.2, 0.9]];
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let (g, dx) = net.backward(&cache, Array2::zeros((1, 2)).view()).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_grad_is_outer_product() {
        let net = Mlp::new(&[3, 2], OutputActivation::Identity, &mut seeded(1));
        let x = array![[0.5, -1.0, 2.0]];
        let up = array![[1.5, -0.5]];
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let (g, _) = net.backward(&cache, up.view()).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(g.layers[0].0[[i, j]], x[[0, i]] * up[[0, j]]);
            }
        }
        assert_eq!(g.layers[0].1, array![1.5, -0.5]);
    }

    #[test]
    fn soft_update_rates() {
        let online = {
            let mut n = Mlp::zeros(&[1, 1], OutputActivation::Identity);
            n.layers_mut()[0].w[[0, 0]] = 2.0;
            n
        };
        let mut target = Mlp::zeros(&[1, 1], OutputActivation::Identity);
        target.soft_update_from(&online, 0.5).unwrap();
        assert_eq!(target.layers()[0].w[[0, 0]], 1.0);
        target.soft_update_from(&online, 1.0).unwrap();
        assert_eq!(target, online);
        let other = Mlp::zeros(&[2, 1], OutputActivation::Identity);
        assert!(matches!(target.soft_update_from(&other, 0.5), Err(DopError::Shape(_))));
    }

    #[test]
    fn softmax_is_translation_invariant() {
        let p = softmax(&[0.3, -1.2, 4.0]);
        let q = softmax(&[100.3, 98.8, 104.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
