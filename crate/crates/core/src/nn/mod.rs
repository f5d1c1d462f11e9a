//! Minimal neural-network substrate: batched dense and GRU layers with
//! hand-written reverse-mode gradients, losses, optimizers and a
//! finite-difference gradient checker.
//!
//! Batches are row-major: every activation matrix is `batch × features`.

mod dense;
mod gradcheck;
mod gru;
mod loss;
mod optim;
mod sequential;

pub use dense::{Activation, Dense, DenseCache};
pub use gradcheck::{central_difference, gradient_check, relative_error, GRADCHECK_ABS_FLOOR};
pub use gru::{gru_steps_on_this_thread, Gru, GruCache};
pub use loss::{mse, mse_grad};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, OptimizerState};
pub use sequential::Sequential;

use ndarray::{Array1, Array2};
use rand::Rng;

/// Access to the trainable tensors of a model as flat slices.
///
/// Gradient accumulators use the same type as the model they belong to, so
/// `tensors()` of a model and of its gradient line up index by index.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// Human-readable names in the same order as `tensors()`.
    fn tensor_names(&self) -> Vec<String>;

    /// Logical shape of each tensor (`[rows, cols]` for matrices).
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|t| vec![t.len()]).collect()
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameters concatenated in tensor order.
    fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flatten().copied().collect()
    }

    fn assign_flat(&mut self, values: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        assert_eq!(offset, values.len(), "flat parameter vector has the wrong length");
    }
}

/// Glorot/Xavier uniform initialization for a `fan_out × fan_in` matrix.
pub fn glorot_uniform(fan_out: usize, fan_in: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_out, fan_in), || limit * (2.0 * rng.random::<f64>() - 1.0))
}

pub(crate) fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter matrices are contiguous")
}

pub(crate) fn slice_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter matrices are contiguous")
}

pub(crate) fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameter vectors are contiguous")
}

pub(crate) fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter vectors are contiguous")
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<P: Parameters> Parameters for Vec<P> {
    fn tensors(&self) -> Vec<&[f64]> {
        self.iter().flat_map(|p| p.tensors()).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.iter_mut().flat_map(|p| p.tensors_mut()).collect()
    }
    fn tensor_names(&self) -> Vec<String> {
        self.iter()
            .enumerate()
            .flat_map(|(i, p)| p.tensor_names().into_iter().map(move |n| format!("{i}.{n}")))
            .collect()
    }
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        self.iter().flat_map(|p| p.tensor_shapes()).collect()
    }
}
