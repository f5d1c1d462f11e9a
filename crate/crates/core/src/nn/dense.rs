use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, slice, slice1, slice1_mut, slice_mut, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

/// Fully connected layer `y = act(x Wᵀ + b)` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Values saved by [`Dense::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Array2<f64>,
    output: Array2<f64>,
}

impl Dense {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::invalid(format!(
                "dense weight has {} rows but bias has {} entries",
                weight.nrows(),
                bias.len()
            )));
        }
        Ok(Dense { weight: weight.as_standard_layout().into_owned(), bias, activation })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense { weight: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs), activation }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        Dense { weight: glorot_uniform(outputs, inputs, rng), bias: Array1::zeros(outputs), activation }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.inputs() {
            return Err(Error::invalid(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Forward pass without keeping a cache.
    pub fn infer(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        if self.activation == Activation::Tanh {
            z.mapv_inplace(f64::tanh);
        }
        Ok(z)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, DenseCache)> {
        let y = self.infer(x)?;
        Ok((y.clone(), DenseCache { input: x.to_owned(), output: y }))
    }

    /// Single-sample convenience wrapper around [`Dense::forward`].
    pub fn forward_vec(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector shape");
        let (y, cache) = self.forward(view)?;
        Ok((y.into_raw_vec_and_offset().0, cache))
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, cache: &DenseCache, dy: ArrayView2<f64>, grad: &mut Dense) -> Array2<f64> {
        let dz = self.pre_activation_grad(cache, dy);
        accumulate_param_grads(&dz, &cache.input, grad);
        dz.dot(&self.weight)
    }

    /// Like [`Dense::backward`] but skips the input gradient.
    pub fn backward_params(&self, cache: &DenseCache, dy: ArrayView2<f64>, grad: &mut Dense) {
        let dz = self.pre_activation_grad(cache, dy);
        accumulate_param_grads(&dz, &cache.input, grad);
    }

    fn pre_activation_grad(&self, cache: &DenseCache, dy: ArrayView2<f64>) -> Array2<f64> {
        match self.activation {
            Activation::Linear => dy.to_owned(),
            Activation::Tanh => {
                let mut dz = dy.to_owned();
                dz.zip_mut_with(&cache.output, |g, &y| *g *= 1.0 - y * y);
                dz
            }
        }
    }
}

fn accumulate_param_grads(dz: &Array2<f64>, input: &Array2<f64>, grad: &mut Dense) {
    ndarray::linalg::general_mat_mul(1.0, &dz.t(), input, 1.0, &mut grad.weight);
    grad.bias += &dz.sum_axis(Axis(0));
}

impl Parameters for Dense {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![slice(&self.weight), slice1(&self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![slice_mut(&mut self.weight), slice1_mut(&mut self.bias)]
    }

    fn tensor_names(&self) -> Vec<String> {
        vec!["weight".into(), "bias".into()]
    }

    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        vec![self.weight.shape().to_vec(), vec![self.bias.len()]]
    }
}
