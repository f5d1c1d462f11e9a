//! Forward and inverse kinematics models learned from motor babbling, plus
//! exact kinematic oracles used to test everything built on top of them.
//!
//! All learned models work in standardized feature space and carry their
//! [`Standardizer`], so raw radians and meters go in and come out.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{fk_unchecked, forward_kinematics, Action, ArmModel, EEPosition, JointConfig, State, Transition, EF_DIM};
use crate::nn::{Activation, Dense, Optimizer, OptimizerConfig, Parameters, Sequential};

/// Smallest standard deviation used when standardizing a feature.
pub const MIN_STD: f64 = 1e-8;

/// Feature blocks of states and actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Theta,
    Ef,
    Action,
    /// End-effector displacement `ef' − ef` of one transition.
    #[serde(rename = "ef_delta")]
    EfDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut rows_vec = Vec::new();
        for r in rows {
            if r.len() != dim {
                return Err(Error::invalid(format!("feature row has {} entries, expected {dim}", r.len())));
            }
            for (s, v) in sum.iter_mut().zip(r) {
                *s += v;
            }
            rows_vec.push(r);
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("cannot fit feature statistics on zero rows"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; dim];
        for r in rows_vec {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt().max(MIN_STD)).collect();
        Ok(FeatureStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Per-feature z-score statistics for joint angles, end-effector positions,
/// actions and end-effector displacements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub theta: FeatureStats,
    pub ef: FeatureStats,
    pub action: FeatureStats,
    pub ef_delta: FeatureStats,
}

impl Standardizer {
    /// Statistics over all states (before and after) and actions of a dataset.
    pub fn fit(transitions: &[Transition]) -> Result<Self> {
        let dof = transitions.first().ok_or_else(|| Error::invalid("empty babbling dataset"))?.a.len();
        let thetas = transitions.iter().flat_map(|t| [&t.s.theta.0[..], &t.s_next.theta.0[..]]);
        let efs = transitions.iter().flat_map(|t| [&t.s.ef.0[..], &t.s_next.ef.0[..]]);
        let deltas: Vec<[f64; EF_DIM]> =
            transitions.iter().map(|t| std::array::from_fn(|i| t.s_next.ef.0[i] - t.s.ef.0[i])).collect();
        Ok(Standardizer {
            theta: FeatureStats::fit(thetas, dof)?,
            ef: FeatureStats::fit(efs, EF_DIM)?,
            action: FeatureStats::fit(transitions.iter().map(|t| &t.a.0[..]), dof)?,
            ef_delta: FeatureStats::fit(deltas.iter().map(|d| &d[..]), EF_DIM)?,
        })
    }

    /// Zero mean, unit deviation; useful for tests and untrained models.
    pub fn identity(dof: usize) -> Self {
        let unit = |d: usize| FeatureStats { mean: vec![0.0; d], std: vec![1.0; d] };
        Standardizer { theta: unit(dof), ef: unit(EF_DIM), action: unit(dof), ef_delta: unit(EF_DIM) }
    }

    pub fn dof(&self) -> usize {
        self.theta.dim()
    }

    pub fn stats(&self, feature: Feature) -> &FeatureStats {
        match feature {
            Feature::Theta => &self.theta,
            Feature::Ef => &self.ef,
            Feature::Action => &self.action,
            Feature::EfDelta => &self.ef_delta,
        }
    }

    pub fn transform(&self, feature: Feature, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let st = self.stats(feature);
        self.check(feature, x.ncols())?;
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (st.mean[j], st.std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, feature: Feature, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let st = self.stats(feature);
        self.check(feature, x.ncols())?;
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (st.mean[j], st.std[j]);
            col.mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }

    pub fn transform_vec(&self, feature: Feature, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.transform(feature, row(x))?.into_raw_vec_and_offset().0)
    }

    pub fn inverse_transform_vec(&self, feature: Feature, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.inverse_transform(feature, row(x))?.into_raw_vec_and_offset().0)
    }

    fn check(&self, feature: Feature, cols: usize) -> Result<()> {
        let dim = self.stats(feature).dim();
        if cols != dim {
            return Err(Error::invalid(format!("{feature:?} block has {cols} columns, standardizer expects {dim}")));
        }
        Ok(())
    }
}

pub(crate) fn row(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("row vector shape")
}

/// Stacks per-sample vectors into a `batch × dim` matrix.
pub(crate) fn stack_rows<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, dim: usize) -> Result<Array2<f64>> {
    let n = rows.len();
    let mut data = Vec::with_capacity(n * dim);
    for r in rows {
        if r.len() != dim {
            return Err(Error::invalid(format!("row has {} entries, expected {dim}", r.len())));
        }
        data.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((n, dim), data).expect("shape matches data"))
}

/// Predicts the state reached by executing actions; batched over rows.
pub trait ForwardPredictor {
    /// Returns `(θ(t+1), ef(t+1))` for rows of `θ(t)`, `ef(t)`, `a(t)` in raw units.
    fn predict_next_batch(
        &self,
        theta: ArrayView2<f64>,
        ef: ArrayView2<f64>,
        action: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)>;

    /// Feature statistics of a learned model; analytic predictors have none.
    fn standardizer(&self) -> Option<&Standardizer> {
        None
    }

    fn predict_next(&self, s: &State, a: &Action) -> Result<State> {
        let (th, ef) = self.predict_next_batch(row(&s.theta), row(&s.ef.0), row(&a.0))?;
        Ok(State { theta: JointConfig(th.row(0).to_vec()), ef: to_ef(ef.row(0).as_slice().unwrap()) })
    }
}

/// Infers the action that moves the end effector to a desired position.
pub trait InversePredictor {
    /// Returns actions for rows of `θ(t)`, `ef(t)` and desired `ef(t+1)`.
    fn infer_action_batch(
        &self,
        theta: ArrayView2<f64>,
        ef: ArrayView2<f64>,
        ef_next: ArrayView2<f64>,
    ) -> Result<Array2<f64>>;

    fn standardizer(&self) -> Option<&Standardizer> {
        None
    }

    fn infer_action(&self, s_prev: &State, ef_next: &EEPosition) -> Result<Action> {
        let a = self.infer_action_batch(row(&s_prev.theta), row(&s_prev.ef.0), row(&ef_next.0))?;
        Ok(Action(a.row(0).to_vec()))
    }
}

pub(crate) fn to_ef(v: &[f64]) -> EEPosition {
    EEPosition([v[0], v[1], v[2]])
}

/// MLP forward model: `[θ, ef, a] ↦ [θ', ef']` with a shared tanh trunk and a
/// linear head per state subvector. The heads read the trunk output together
/// with the standardized input, so the affine part of the transition
/// (`θ' = θ + a`) does not have to be approximated through tanh units.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    pub standardizer: Standardizer,
    pub trunk: Sequential,
    pub theta_head: Dense,
    pub ef_head: Dense,
}

impl ForwardModel {
    pub fn input_width(dof: usize) -> usize {
        2 * dof + EF_DIM
    }

    pub fn new(standardizer: Standardizer, hidden: &[usize], seed: u64) -> Result<Self> {
        let dof = standardizer.dof();
        let width = *hidden.last().ok_or_else(|| Error::invalid("forward model needs a hidden layer"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = Sequential::tanh_stack(Self::input_width(dof), hidden, &mut rng);
        let head_in = width + Self::input_width(dof);
        let theta_head = Dense::glorot(head_in, dof, Activation::Linear, &mut rng);
        let ef_head = Dense::glorot(head_in, EF_DIM, Activation::Linear, &mut rng);
        Ok(ForwardModel { standardizer, trunk, theta_head, ef_head })
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeroed(&self) -> Self {
        let mut m = self.clone();
        m.zero();
        m
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.trunk.layers.iter().map(Dense::outputs).collect()
    }

    fn standardized_input(&self, theta: ArrayView2<f64>, ef: ArrayView2<f64>, action: ArrayView2<f64>) -> Result<Array2<f64>> {
        let st = &self.standardizer;
        let parts = [
            st.transform(Feature::Theta, theta)?,
            st.transform(Feature::Ef, ef)?,
            st.transform(Feature::Action, action)?,
        ];
        concatenate(Axis(1), &[parts[0].view(), parts[1].view(), parts[2].view()])
            .map_err(|e| Error::invalid(format!("forward model batch rows disagree: {e}")))
    }

    /// Standardized outputs for standardized inputs.
    pub fn infer_standardized(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let h = head_input(self.trunk.infer(x)?.view(), x);
        Ok((self.theta_head.infer(h.view())?, self.ef_head.infer(h.view())?))
    }
}

fn head_input(trunk_out: ArrayView2<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[trunk_out, x]).expect("trunk output and input share the batch size")
}

impl ForwardPredictor for ForwardModel {
    fn standardizer(&self) -> Option<&Standardizer> {
        Some(&self.standardizer)
    }

    fn predict_next_batch(
        &self,
        theta: ArrayView2<f64>,
        ef: ArrayView2<f64>,
        action: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let x = self.standardized_input(theta, ef, action)?;
        let (th, e) = self.infer_standardized(x.view())?;
        Ok((
            self.standardizer.inverse_transform(Feature::Theta, th.view())?,
            self.standardizer.inverse_transform(Feature::Ef, e.view())?,
        ))
    }
}

impl Parameters for ForwardModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.trunk.tensors();
        t.extend(self.theta_head.tensors());
        t.extend(self.ef_head.tensors());
        t
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.trunk.tensors_mut();
        t.extend(self.theta_head.tensors_mut());
        t.extend(self.ef_head.tensors_mut());
        t
    }
    fn tensor_names(&self) -> Vec<String> {
        let mut n: Vec<String> = self.trunk.tensor_names().into_iter().map(|s| format!("trunk.{s}")).collect();
        n.extend(self.theta_head.tensor_names().into_iter().map(|s| format!("theta_head.{s}")));
        n.extend(self.ef_head.tensor_names().into_iter().map(|s| format!("ef_head.{s}")));
        n
    }
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut s = self.trunk.tensor_shapes();
        s.extend(self.theta_head.tensor_shapes());
        s.extend(self.ef_head.tensor_shapes());
        s
    }
}

/// Monolithic MLP inverse model: `[θ, ef, ef_next] ↦ a`. The network also
/// sees the displacement `ef_next − ef`, standardized on its own scale; as a
/// difference of two standardized positions it would be a tiny signal.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseModel {
    pub standardizer: Standardizer,
    pub net: Sequential,
}

impl InverseModel {
    pub fn input_width(dof: usize) -> usize {
        dof + 3 * EF_DIM
    }

    pub fn new(standardizer: Standardizer, hidden: &[usize], seed: u64) -> Result<Self> {
        let dof = standardizer.dof();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Sequential::mlp(Self::input_width(dof), hidden, dof, &mut rng);
        Ok(InverseModel { standardizer, net })
    }

    pub fn zeroed(&self) -> Self {
        let mut m = self.clone();
        m.zero();
        m
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        let n = self.net.layers.len();
        self.net.layers[..n - 1].iter().map(Dense::outputs).collect()
    }

    fn standardized_input(&self, theta: ArrayView2<f64>, ef: ArrayView2<f64>, ef_next: ArrayView2<f64>) -> Result<Array2<f64>> {
        let st = &self.standardizer;
        let parts = [
            st.transform(Feature::Theta, theta)?,
            st.transform(Feature::Ef, ef)?,
            st.transform(Feature::Ef, ef_next)?,
        ];
        if ef_next.nrows() != ef.nrows() {
            return Err(Error::invalid("inverse model batch rows disagree"));
        }
        let delta = st.transform(Feature::EfDelta, (&ef_next - &ef).view())?;
        concatenate(Axis(1), &[parts[0].view(), parts[1].view(), parts[2].view(), delta.view()])
            .map_err(|e| Error::invalid(format!("inverse model batch rows disagree: {e}")))
    }
}

impl InversePredictor for InverseModel {
    fn standardizer(&self) -> Option<&Standardizer> {
        Some(&self.standardizer)
    }

    fn infer_action_batch(
        &self,
        theta: ArrayView2<f64>,
        ef: ArrayView2<f64>,
        ef_next: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let x = self.standardized_input(theta, ef, ef_next)?;
        let a = self.net.infer(x.view())?;
        self.standardizer.inverse_transform(Feature::Action, a.view())
    }
}

impl Parameters for InverseModel {
    fn tensors(&self) -> Vec<&[f64]> {
        self.net.tensors()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.tensors_mut()
    }
    fn tensor_names(&self) -> Vec<String> {
        self.net.tensor_names()
    }
    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        self.net.tensor_shapes()
    }
}

pub fn fm_predict(fm: &ForwardModel, s: &State, a: &Action) -> Result<State> {
    fm.predict_next(s, a)
}

pub fn im_predict(im: &InverseModel, s_prev: &State, ef_next: &EEPosition) -> Result<Action> {
    im.infer_action(s_prev, ef_next)
}

/// Supervised training recipe for the forward or inverse model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpTrainConfig {
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds initialization, the train/held-out split and batch shuffling.
    pub seed: u64,
    pub heldout_fraction: f64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self::forward_default()
    }
}

impl MlpTrainConfig {
    /// Adam(η = 1e-3) for 60 epochs.
    pub fn forward_default() -> Self {
        MlpTrainConfig {
            hidden: vec![256, 256],
            optimizer: OptimizerConfig::adam(1e-3),
            epochs: 60,
            batch_size: 32,
            seed: 0,
            heldout_fraction: 0.1,
        }
    }

    /// AdamW(η = 1e-3, λ = 4e-3) for 100 epochs.
    pub fn inverse_default() -> Self {
        MlpTrainConfig { optimizer: OptimizerConfig::adamw(1e-3, 4e-3), epochs: 100, ..Self::forward_default() }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if n < MIN_TRAINING_TRANSITIONS {
            return Err(Error::invalid(format!("need at least {MIN_TRAINING_TRANSITIONS} transitions, got {n}")));
        }
        if self.batch_size == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("batch size and hidden widths must be positive"));
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(Error::invalid("held-out fraction must lie in (0, 1)"));
        }
        self.optimizer.validate()
    }
}

pub const MIN_TRAINING_TRANSITIONS: usize = 1000;

/// Held-out mean absolute errors in raw units (ef in m, θ and a in rad).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MaeSet {
    pub ef: Option<f64>,
    pub theta: Option<f64>,
    pub action: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout: MaeSet,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn final_mae(&self) -> Option<MaeSet> {
        self.epochs.last().map(|e| e.heldout)
    }

    /// CSV with columns `epoch,loss,ef_mae,theta_mae,action_mae`; missing MAEs are empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "loss", "ef_mae", "theta_mae", "action_mae"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                opt(e.heldout.ef),
                opt(e.heldout.theta),
                opt(e.heldout.action),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Split {
    train: Vec<usize>,
    heldout: Vec<usize>,
}

fn split_indices(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_held = ((n as f64) * fraction).round().max(1.0) as usize;
    let heldout = idx[..n_held].to_vec();
    Split { train: idx[n_held..].to_vec(), heldout }
}

fn mean_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n
}

/// Minibatch loop shared by both models. `step` returns the summed loss of a
/// batch after filling `grad` with the batch-mean gradient.
fn run_epochs<M, S, E>(
    model: &mut M,
    cfg: &MlpTrainConfig,
    train: &[usize],
    rng: &mut ChaCha8Rng,
    mut step: S,
    mut evaluate: E,
) -> Result<TrainReport>
where
    M: Parameters + Clone,
    S: FnMut(&M, &[usize], &mut M) -> Result<f64>,
    E: FnMut(&M) -> Result<MaeSet>,
{
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut grad = model.clone();
    let mut order = train.to_vec();
    let mut report = TrainReport::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.zero();
            let loss = step(model, batch, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            total += loss;
            opt.step(model, &grad)?;
        }
        let heldout = evaluate(model)?;
        report.epochs.push(EpochRecord { epoch, train_loss: total / order.len() as f64, heldout });
    }
    Ok(report)
}

/// Per-row mean squared error summed over rows, and its gradient scaled for a
/// batch mean (`weight / batch` per row).
fn mse_rows(pred: &Array2<f64>, target: ArrayView2<f64>, weight: f64) -> (f64, Array2<f64>) {
    let (rows, cols) = pred.dim();
    let diff = pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / cols as f64;
    let grad = diff * (2.0 * weight / (cols as f64 * rows as f64));
    (loss * weight, grad)
}

struct FmData {
    x: Array2<f64>,
    theta_next: Array2<f64>,
    ef_next: Array2<f64>,
    theta_next_raw: Array2<f64>,
    ef_next_raw: Array2<f64>,
}

/// Trains the forward model; the objective is the mean over the two heads of
/// the standardized MSE.
pub fn train_fm(transitions: &[Transition], cfg: &MlpTrainConfig) -> Result<(ForwardModel, TrainReport)> {
    cfg.validate(transitions.len())?;
    let standardizer = Standardizer::fit(transitions)?;
    let dof = standardizer.dof();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ForwardModel::new(standardizer.clone(), &cfg.hidden, cfg.seed)?;
    let split = split_indices(transitions.len(), cfg.heldout_fraction, &mut rng);

    let theta = stack_rows(transitions.iter().map(|t| &t.s.theta.0[..]), dof)?;
    let ef = stack_rows(transitions.iter().map(|t| &t.s.ef.0[..]), EF_DIM)?;
    let act = stack_rows(transitions.iter().map(|t| &t.a.0[..]), dof)?;
    let theta_next_raw = stack_rows(transitions.iter().map(|t| &t.s_next.theta.0[..]), dof)?;
    let ef_next_raw = stack_rows(transitions.iter().map(|t| &t.s_next.ef.0[..]), EF_DIM)?;
    let data = FmData {
        x: model.standardized_input(theta.view(), ef.view(), act.view())?,
        theta_next: standardizer.transform(Feature::Theta, theta_next_raw.view())?,
        ef_next: standardizer.transform(Feature::Ef, ef_next_raw.view())?,
        theta_next_raw,
        ef_next_raw,
    };

    let step = |m: &ForwardModel, batch: &[usize], g: &mut ForwardModel| -> Result<f64> {
        let x = data.x.select(Axis(0), batch);
        let (h, caches) = m.trunk.forward(x.view())?;
        let width = h.ncols();
        let h = head_input(h.view(), x.view());
        let (th, th_cache) = m.theta_head.forward(h.view())?;
        let (e, e_cache) = m.ef_head.forward(h.view())?;
        let (l_th, d_th) = mse_rows(&th, data.theta_next.select(Axis(0), batch).view(), 0.5);
        let (l_e, d_e) = mse_rows(&e, data.ef_next.select(Axis(0), batch).view(), 0.5);
        let mut dh = m.theta_head.backward(&th_cache, d_th.view(), &mut g.theta_head);
        dh += &m.ef_head.backward(&e_cache, d_e.view(), &mut g.ef_head);
        m.trunk.backward(&caches, dh.slice(s![.., ..width]), &mut g.trunk, false);
        Ok(l_th + l_e)
    };
    let heldout = &split.heldout;
    let evaluate = |m: &ForwardModel| -> Result<MaeSet> {
        let x = data.x.select(Axis(0), heldout);
        let (th, e) = m.infer_standardized(x.view())?;
        let th = standardizer.inverse_transform(Feature::Theta, th.view())?;
        let e = standardizer.inverse_transform(Feature::Ef, e.view())?;
        Ok(MaeSet {
            ef: Some(mean_abs_diff(e.view(), data.ef_next_raw.select(Axis(0), heldout).view())),
            theta: Some(mean_abs_diff(th.view(), data.theta_next_raw.select(Axis(0), heldout).view())),
            action: None,
        })
    };
    let report = run_epochs(&mut model, cfg, &split.train, &mut rng, step, evaluate)?;
    Ok((model, report))
}

/// Trains the inverse model on the standardized action MSE.
pub fn train_im(transitions: &[Transition], cfg: &MlpTrainConfig) -> Result<(InverseModel, TrainReport)> {
    cfg.validate(transitions.len())?;
    let standardizer = Standardizer::fit(transitions)?;
    let dof = standardizer.dof();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = InverseModel::new(standardizer.clone(), &cfg.hidden, cfg.seed)?;
    let split = split_indices(transitions.len(), cfg.heldout_fraction, &mut rng);

    let theta = stack_rows(transitions.iter().map(|t| &t.s.theta.0[..]), dof)?;
    let ef = stack_rows(transitions.iter().map(|t| &t.s.ef.0[..]), EF_DIM)?;
    let ef_next = stack_rows(transitions.iter().map(|t| &t.s_next.ef.0[..]), EF_DIM)?;
    let act_raw = stack_rows(transitions.iter().map(|t| &t.a.0[..]), dof)?;
    let x = model.standardized_input(theta.view(), ef.view(), ef_next.view())?;
    let act = standardizer.transform(Feature::Action, act_raw.view())?;

    let step = |m: &InverseModel, batch: &[usize], g: &mut InverseModel| -> Result<f64> {
        let xb = x.select(Axis(0), batch);
        let (y, caches) = m.net.forward(xb.view())?;
        let (loss, dy) = mse_rows(&y, act.select(Axis(0), batch).view(), 1.0);
        m.net.backward(&caches, dy.view(), &mut g.net, false);
        Ok(loss)
    };
    let heldout = &split.heldout;
    let evaluate = |m: &InverseModel| -> Result<MaeSet> {
        let y = m.net.infer(x.select(Axis(0), heldout).view())?;
        let y = standardizer.inverse_transform(Feature::Action, y.view())?;
        Ok(MaeSet { action: Some(mean_abs_diff(y.view(), act_raw.select(Axis(0), heldout).view())), ..Default::default() })
    };
    let report = run_epochs(&mut model, cfg, &split.train, &mut rng, step, evaluate)?;
    Ok((model, report))
}

/// Exact kinematic successor: `θ' = θ + a` clamped to the joint limits,
/// `ef' = FK(θ')`. The flag reports whether clamping was needed.
pub fn oracle_fm(arm: &ArmModel, s: &State, a: &Action) -> Result<(State, bool)> {
    if a.len() != arm.dof() || s.theta.len() != arm.dof() {
        return Err(Error::invalid("state/action dimension does not match the arm"));
    }
    let mut theta = JointConfig(s.theta.iter().zip(a.iter()).map(|(t, d)| t + d).collect());
    let clipped = arm.clamp(&mut theta);
    let ef = fk_unchecked(arm, &theta);
    Ok((State { theta, ef }, clipped))
}

/// Ground-truth forward predictor backed by the analytic arm.
#[derive(Debug, Clone, Copy)]
pub struct OracleForward<'a> {
    pub arm: &'a ArmModel,
}

impl ForwardPredictor for OracleForward<'_> {
    fn predict_next_batch(
        &self,
        theta: ArrayView2<f64>,
        _ef: ArrayView2<f64>,
        action: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let dof = self.arm.dof();
        if theta.ncols() != dof || action.ncols() != dof || theta.nrows() != action.nrows() {
            return Err(Error::invalid("oracle forward model: batch shape mismatch"));
        }
        let mut th = &theta + &action;
        let mut ef = Array2::zeros((theta.nrows(), EF_DIM));
        for (mut r, mut e) in th.rows_mut().into_iter().zip(ef.rows_mut()) {
            for (v, &[lo, hi]) in r.iter_mut().zip(self.arm.joint_limits()) {
                *v = v.clamp(lo, hi);
            }
            let p = fk_unchecked(self.arm, r.as_slice().expect("row is contiguous"));
            e.assign(&ndarray::ArrayView1::from(&p.0));
        }
        Ok((th, ef))
    }
}

fn numeric_jacobian(arm: &ArmModel, theta: &[f64]) -> nalgebra::OMatrix<f64, nalgebra::U3, nalgebra::Dyn> {
    const H: f64 = 1e-7;
    let mut jac = nalgebra::OMatrix::<f64, nalgebra::U3, nalgebra::Dyn>::zeros(theta.len());
    let mut q = theta.to_vec();
    for j in 0..theta.len() {
        let orig = q[j];
        q[j] = orig + H;
        let plus = fk_unchecked(arm, &q);
        q[j] = orig - H;
        let minus = fk_unchecked(arm, &q);
        q[j] = orig;
        for i in 0..3 {
            jac[(i, j)] = (plus.0[i] - minus.0[i]) / (2.0 * H);
        }
    }
    jac
}

/// Damped-least-squares inverse kinematics used as an inverse-model oracle.
///
/// Iterates `Δθ = Jᵀ (J Jᵀ + damping² I)⁻¹ r` with a central-difference
/// Jacobian, halving a step until it reduces the position error, and keeps
/// the iterate inside the joint limits. The returned action never increases
/// the distance to the target.
pub fn oracle_im_dls(arm: &ArmModel, s_prev: &State, ef_target: &EEPosition, iters: usize, damping: f64) -> Result<Action> {
    if iters == 0 || !(damping > 0.0) {
        return Err(Error::invalid("DLS needs iters >= 1 and damping > 0"));
    }
    let start = &s_prev.theta;
    let target = Vector3::from(ef_target.0);
    let mut theta = start.clone();
    let current = forward_kinematics(arm, &theta)?;
    let mut err = (target - Vector3::from(current.0)).norm();
    let damp2 = damping * damping;

    for step in 0..iters {
        if err == 0.0 {
            break;
        }
        let pos = Vector3::from(fk_unchecked(arm, &theta).0);
        let residual = target - pos;
        let jac = numeric_jacobian(arm, &theta);
        let system: Matrix3<f64> = &jac * jac.transpose() + Matrix3::identity() * damp2;
        let solved = system
            .cholesky()
            .map(|c| c.solve(&residual))
            .ok_or_else(|| Error::Numerical { step, message: "damped system is not positive definite".into() })?;
        let delta = jac.transpose() * solved;
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical { step, message: "non-finite DLS step".into() });
        }

        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let mut cand = JointConfig(theta.iter().zip(delta.iter()).map(|(t, d)| t + scale * d).collect());
            arm.clamp(&mut cand);
            let cand_err = (target - Vector3::from(fk_unchecked(arm, &cand).0)).norm();
            if cand_err < err {
                theta = cand;
                err = cand_err;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(Action(theta.iter().zip(start.iter()).map(|(t, s)| t - s).collect()))
}

/// Ground-truth inverse predictor backed by damped least squares.
#[derive(Debug, Clone, Copy)]
pub struct OracleInverse<'a> {
    pub arm: &'a ArmModel,
    pub iters: usize,
    pub damping: f64,
}

impl InversePredictor for OracleInverse<'_> {
    fn infer_action_batch(
        &self,
        theta: ArrayView2<f64>,
        ef: ArrayView2<f64>,
        ef_next: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let dof = self.arm.dof();
        if theta.ncols() != dof || theta.nrows() != ef_next.nrows() || ef.nrows() != theta.nrows() {
            return Err(Error::invalid("oracle inverse model: batch shape mismatch"));
        }
        let mut out = Array2::zeros((theta.nrows(), dof));
        for i in 0..theta.nrows() {
            let s = State { theta: JointConfig(theta.row(i).to_vec()), ef: to_ef(&ef.row(i).to_vec()) };
            let target = to_ef(&ef_next.row(i).to_vec());
            let a = oracle_im_dls(self.arm, &s, &target, self.iters, self.damping)?;
            out.slice_mut(s![i, ..]).assign(&ndarray::ArrayView1::from(&a.0));
        }
        Ok(out)
    }
}
