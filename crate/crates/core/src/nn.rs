//! Dense layers and the small row kernels shared by the pose network and
//! the feature decoder.
//!
//! Weights are stored `fan_in × fan_out`, row-major, so a layer computes
//! `y = x·W + b` and the inner loop runs over contiguous output columns.

use rand::Rng;

use crate::error::{Error, Result};

/// Negative slope of the leaky ReLU used inside network branches.
pub const LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn leaky_relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub fn leaky_relu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weight: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    /// Weights and biases uniform in `±sqrt(1 / fan_in)`.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        let mut layer = Self::zeros(fan_in, fan_out);
        for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn check(&self, name: &str) -> Result<()> {
        if self.weight.len() != self.fan_in * self.fan_out || self.bias.len() != self.fan_out {
            return Err(Error::Shape(format!(
                "layer {name}: {} weights and {} biases for {}x{}",
                self.weight.len(),
                self.bias.len(),
                self.fan_in,
                self.fan_out
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weight[i * self.fan_out..(i + 1) * self.fan_out]
    }

    /// `out = x·W + b`.
    #[inline]
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.fan_in);
        out.copy_from_slice(&self.bias);
        for (i, &a) in x.iter().enumerate() {
            axpy(a, self.row(i), out);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.fan_out];
        self.forward_into(x, &mut out);
        out
    }

    /// Accumulates `dW += x ⊗ g`, `db += g` into `grad` and returns `W·g`.
    pub fn backward(&self, x: &[f64], g: &[f64], grad: &mut Dense) -> Vec<f64> {
        for (i, &a) in x.iter().enumerate() {
            axpy(a, g, &mut grad.weight[i * self.fan_out..(i + 1) * self.fan_out]);
        }
        for (b, v) in grad.bias.iter_mut().zip(g) {
            *b += v;
        }
        (0..self.fan_in).map(|i| dot(self.row(i), g)).collect()
    }

    /// [`Dense::backward`] for an upstream gradient that is zero outside
    /// the listed `(column, value)` entries.
    pub fn backward_sparse(&self, x: &[f64], g: &[(usize, f64)], grad: &mut Dense) -> Vec<f64> {
        let fo = self.fan_out;
        let mut gx = vec![0.0; self.fan_in];
        for &(c, v) in g {
            grad.bias[c] += v;
            for (i, &a) in x.iter().enumerate() {
                grad.weight[i * fo + c] += a * v;
                gx[i] += self.weight[i * fo + c] * v;
            }
        }
        gx
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weight);
        out.extend_from_slice(&self.bias);
    }

    /// Reads this layer's parameters from the front of `src`, returning the
    /// remainder.
    pub fn assign_from<'a>(&mut self, src: &'a [f64]) -> &'a [f64] {
        let (w, rest) = src.split_at(self.weight.len());
        let (b, rest) = rest.split_at(self.bias.len());
        self.weight.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        rest
    }
}

#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_matches_explicit_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Dense::init(5, 4, &mut rng);
        let x = [0.3, -1.2, 0.7, 2.0, -0.1];
        let y = layer.forward(&x);
        for o in 0..4 {
            let mut expected = layer.bias[o];
            for i in 0..5 {
                expected += x[i] * layer.weight[i * 4 + o];
            }
            assert!((y[o] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn init_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = Dense::init(16, 8, &mut rng);
        assert!(layer.weight.iter().chain(&layer.bias).all(|w| w.abs() <= 0.25));
    }

    #[test]
    fn backward_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Dense::init(3, 2, &mut rng);
        let mut grad = Dense::zeros(3, 2);
        let gx = layer.backward(&[1.0, 2.0, 3.0], &[0.5, -1.0], &mut grad);
        for i in 0..3 {
            assert!((gx[i] - (0.5 * layer.weight[i * 2] - layer.weight[i * 2 + 1])).abs() < 1e-15);
        }
        assert_eq!(grad.weight, vec![0.5, -1.0, 1.0, -2.0, 1.5, -3.0]);
        assert_eq!(grad.bias, vec![0.5, -1.0]);

        let mut sparse = Dense::zeros(3, 2);
        let gs = layer.backward_sparse(&[1.0, 2.0, 3.0], &[(0, 0.5), (1, -1.0)], &mut sparse);
        assert_eq!(sparse, grad);
        for (a, b) in gs.iter().zip(&gx) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
