use std::cell::Cell;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{glorot_uniform, sigmoid, slice, slice1, slice1_mut, slice_mut, Parameters};
use crate::error::{Error, Result};

thread_local! {
    static STEPS: Cell<u64> = const { Cell::new(0) };
}

/// Number of GRU steps executed on the current thread so far.
pub fn gru_steps_on_this_thread() -> u64 {
    STEPS.with(Cell::get)
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// ĥ  = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ ĥ
/// ```
///
/// `W_*` are `hidden × input`, `U_*` are `hidden × hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_h: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_h: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    x: Array2<f64>,
    h: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    candidate: Array2<f64>,
    rh: Array2<f64>,
}

impl Gru {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        let w = || Array2::zeros((hidden, inputs));
        let u = || Array2::zeros((hidden, hidden));
        let b = || Array1::zeros(hidden);
        Gru { w_z: w(), u_z: u(), b_z: b(), w_r: w(), u_r: u(), b_r: b(), w_h: w(), u_h: u(), b_h: b() }
    }

    pub fn glorot(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut g = Gru::zeros(inputs, hidden);
        for m in [&mut g.w_z, &mut g.w_r, &mut g.w_h] {
            *m = glorot_uniform(hidden, inputs, rng);
        }
        for m in [&mut g.u_z, &mut g.u_r, &mut g.u_h] {
            *m = glorot_uniform(hidden, hidden, rng);
        }
        g
    }

    pub fn inputs(&self) -> usize {
        self.w_z.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w_z.nrows()
    }

    fn check_shapes(&self) -> Result<()> {
        let (h, i) = (self.hidden(), self.inputs());
        let ok = [&self.w_r, &self.w_h].iter().all(|m| m.dim() == (h, i))
            && [&self.u_z, &self.u_r, &self.u_h].iter().all(|m| m.dim() == (h, h))
            && [&self.b_z, &self.b_r, &self.b_h].iter().all(|b| b.len() == h);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("inconsistent GRU parameter shapes"))
        }
    }

    /// One step for a batch: `x` is `batch × inputs`, `h` is `batch × hidden`.
    pub fn forward(&self, x: ArrayView2<f64>, h: ArrayView2<f64>) -> Result<(Array2<f64>, GruCache)> {
        self.check_shapes()?;
        if x.ncols() != self.inputs() || h.ncols() != self.hidden() || x.nrows() != h.nrows() {
            return Err(Error::invalid(format!(
                "GRU step expects x: n×{} and h: n×{}, got {:?} and {:?}",
                self.inputs(),
                self.hidden(),
                x.dim(),
                h.dim()
            )));
        }
        STEPS.with(|c| c.set(c.get() + 1));

        let gate = |w: &Array2<f64>, u: &Array2<f64>, b: &Array1<f64>, hh: ArrayView2<f64>| {
            let mut a = x.dot(&w.t());
            a += &hh.dot(&u.t());
            a += b;
            a
        };
        let mut z = gate(&self.w_z, &self.u_z, &self.b_z, h);
        z.mapv_inplace(sigmoid);
        let mut r = gate(&self.w_r, &self.u_r, &self.b_r, h);
        r.mapv_inplace(sigmoid);
        let rh = &r * &h;
        let mut candidate = gate(&self.w_h, &self.u_h, &self.b_h, rh.view());
        candidate.mapv_inplace(f64::tanh);

        let mut h_next = h.to_owned();
        ndarray::Zip::from(&mut h_next).and(&z).and(&candidate).for_each(|hn, &zz, &c| {
            *hn = (1.0 - zz) * *hn + zz * c;
        });
        let cache = GruCache { x: x.to_owned(), h: h.to_owned(), z, r, candidate, rh };
        Ok((h_next, cache))
    }

    /// Single-sample step on plain vectors.
    pub fn step(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let xv = ArrayView2::from_shape((1, x.len()), x).expect("row vector shape");
        let hv = ArrayView2::from_shape((1, h.len()), h).expect("row vector shape");
        Ok(self.forward(xv, hv)?.0.into_raw_vec_and_offset().0)
    }

    /// Backpropagates `∂L/∂h'` through one step. Parameter gradients are
    /// accumulated into `grad`; returns `(∂L/∂x, ∂L/∂h)`.
    pub fn backward(&self, cache: &GruCache, dh_next: ArrayView2<f64>, grad: &mut Gru) -> (Array2<f64>, Array2<f64>) {
        let GruCache { x, h, z, r, candidate, rh } = cache;

        // h' = (1 - z) h + z c
        let mut dh = &dh_next * &z.mapv(|v| 1.0 - v);
        let mut dz = dh_next.to_owned();
        ndarray::Zip::from(&mut dz).and(candidate).and(h).and(z).for_each(|g, &c, &hv, &zz| {
            *g *= (c - hv) * zz * (1.0 - zz);
        });
        let mut dc = dh_next.to_owned();
        ndarray::Zip::from(&mut dc).and(z).and(candidate).for_each(|g, &zz, &c| {
            *g *= zz * (1.0 - c * c);
        });

        let mut dx = dc.dot(&self.w_h);
        let d_rh = dc.dot(&self.u_h);
        accumulate(&mut grad.w_h, &dc, x);
        accumulate(&mut grad.u_h, &dc, rh);
        grad.b_h += &dc.sum_axis(Axis(0));

        let mut dr = &d_rh * h;
        dr.zip_mut_with(r, |g, &rr| *g *= rr * (1.0 - rr));
        dh += &(&d_rh * r);

        for (da, w, u, gw, gu, gb) in [
            (&dz, &self.w_z, &self.u_z, &mut grad.w_z, &mut grad.u_z, &mut grad.b_z),
            (&dr, &self.w_r, &self.u_r, &mut grad.w_r, &mut grad.u_r, &mut grad.b_r),
        ] {
            dx += &da.dot(w);
            dh += &da.dot(u);
            accumulate(gw, da, x);
            accumulate(gu, da, h);
            *gb += &da.sum_axis(Axis(0));
        }
        (dx, dh)
    }
}

fn accumulate(target: &mut Array2<f64>, da: &Array2<f64>, input: &Array2<f64>) {
    ndarray::linalg::general_mat_mul(1.0, &da.t(), input, 1.0, target);
}

impl Parameters for Gru {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            slice(&self.w_z),
            slice(&self.u_z),
            slice1(&self.b_z),
            slice(&self.w_r),
            slice(&self.u_r),
            slice1(&self.b_r),
            slice(&self.w_h),
            slice(&self.u_h),
            slice1(&self.b_h),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice_mut(&mut self.w_z),
            slice_mut(&mut self.u_z),
            slice1_mut(&mut self.b_z),
            slice_mut(&mut self.w_r),
            slice_mut(&mut self.u_r),
            slice1_mut(&mut self.b_r),
            slice_mut(&mut self.w_h),
            slice_mut(&mut self.u_h),
            slice1_mut(&mut self.b_h),
        ]
    }

    fn tensor_names(&self) -> Vec<String> {
        ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"].iter().map(|s| s.to_string()).collect()
    }

    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let (w, u, b) = (self.w_z.shape().to_vec(), self.u_z.shape().to_vec(), vec![self.b_z.len()]);
        [&w, &u, &b, &w, &u, &b, &w, &u, &b].into_iter().cloned().collect()
    }
}
