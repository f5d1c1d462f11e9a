use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{Activation, Dense, DenseCache, Parameters};
use crate::error::Result;

/// A stack of dense layers applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Dense>,
}

impl Sequential {
    /// Tanh hidden layers of the given widths followed by a linear output layer.
    pub fn mlp(inputs: usize, hidden: &[usize], outputs: usize, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = inputs;
        for &h in hidden {
            layers.push(Dense::glorot(width, h, Activation::Tanh, rng));
            width = h;
        }
        layers.push(Dense::glorot(width, outputs, Activation::Linear, rng));
        Sequential { layers }
    }

    /// Hidden tanh layers only (no output layer).
    pub fn tanh_stack(inputs: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut width = inputs;
        let layers = hidden
            .iter()
            .map(|&h| {
                let l = Dense::glorot(width, h, Activation::Tanh, rng);
                width = h;
                l
            })
            .collect();
        Sequential { layers }
    }

    pub fn outputs(&self) -> Option<usize> {
        self.layers.last().map(Dense::outputs)
    }

    pub fn infer(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut y = x.to_owned();
        for l in &self.layers {
            y = l.infer(y.view())?;
        }
        Ok(y)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<DenseCache>)> {
        let mut y = x.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (out, cache) = l.forward(y.view())?;
            caches.push(cache);
            y = out;
        }
        Ok((y, caches))
    }

    /// Accumulates gradients into `grad`; returns `∂L/∂x` when `need_input_grad`.
    pub fn backward(
        &self,
        caches: &[DenseCache],
        dy: ArrayView2<f64>,
        grad: &mut Sequential,
        need_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let mut d = dy.to_owned();
        let n = self.layers.len();
        for (i, ((layer, cache), g)) in self.layers.iter().zip(caches).zip(grad.layers.iter_mut()).enumerate().rev() {
            if i == 0 && !need_input_grad {
                layer.backward_params(cache, d.view(), g);
                return None;
            }
            d = layer.backward(cache, d.view(), g);
        }
        debug_assert!(n == 0 || need_input_grad);
        Some(d)
    }
}

impl Parameters for Sequential {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.tensors()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.tensors_mut()
    }
    fn tensor_names(&self) -> Vec<String> {
        self.layers.tensor_names()
    }
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.tensor_shapes()
    }
}
