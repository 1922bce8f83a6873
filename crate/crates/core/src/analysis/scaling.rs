use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{ensure, DopError, Result};
use crate::rng::seeded;

/// Smooth coupled quadratic `Q(a) = c + g.a + a^T H a / 2` over `n` scalar actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub c: f64,
    pub g: Vec<f64>,
    pub h: Vec<Vec<f64>>,
}

impl Quadratic {
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let g = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut h = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let x = rng.random_range(-2.0..2.0);
                h[i][j] = x;
                h[j][i] = x;
            }
        }
        Self { c: rng.random_range(-1.0..1.0), g, h }
    }

    pub fn eval(&self, a: &[f64]) -> f64 {
        let mut v = self.c;
        for i in 0..a.len() {
            v += self.g[i] * a[i];
            for j in 0..a.len() {
                v += 0.5 * self.h[i][j] * a[i] * a[j];
            }
        }
        v
    }
}

/// Least-squares fit of `b + sum_i Q_i(a_i)`, with each `Q_i` linear and
/// quadratic in its own offset from `center`, to `q` on a grid over the box of
/// half-width `delta`. Returns the largest absolute error on the grid.
pub fn decomposed_fit_error(q: &Quadratic, center: &[f64], delta: f64, per_dim: usize) -> Result<f64> {
    let n = center.len();
    ensure!(n == q.g.len(), Shape, "center has {n} entries, function takes {}", q.g.len());
    ensure!(delta > 0.0 && per_dim >= 3, Input, "need a positive radius and at least 3 grid points per axis");
    let points = per_dim.pow(n as u32);
    let cols = 1 + 2 * n;
    let mut x = DMatrix::zeros(points, cols);
    let mut y = DVector::zeros(points);
    for p in 0..points {
        let mut idx = p;
        let mut a = vec![0.0; n];
        x[(p, 0)] = 1.0;
        for i in 0..n {
            let step = idx % per_dim;
            idx /= per_dim;
            let off = delta * (2.0 * step as f64 / (per_dim - 1) as f64 - 1.0);
            a[i] = center[i] + off;
            x[(p, 1 + 2 * i)] = off;
            x[(p, 2 + 2 * i)] = off * off;
        }
        y[p] = q.eval(&a);
    }
    let coef = x.clone().svd(true, true).solve(&y, 1e-14).map_err(|e| DopError::Training(e.to_string()))?;
    Ok((x * coef - y).amax())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_quadratic_is_fit_exactly() {
        let mut q = Quadratic::random(3, 1);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    q.h[i][j] = 0.0;
                }
            }
        }
        let e = decomposed_fit_error(&q, &[0.1, -0.2, 0.3], 0.2, 5).unwrap();
        assert!(e < 1e-9, "{e}");
    }

    #[test]
    fn error_shrinks_quadratically() {
        let q = Quadratic::random(3, 2);
        let center = [0.2, -0.1, 0.4];
        let e: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|&d| decomposed_fit_error(&q, &center, d, 5).unwrap()).collect();
        assert!((e[0] / e[1] - 4.0).abs() < 1e-6, "{e:?}");
        assert!((e[1] / e[2] - 4.0).abs() < 1e-6, "{e:?}");
    }
}
