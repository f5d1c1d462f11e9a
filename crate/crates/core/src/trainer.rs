//! Self-supervised trajectory-model training: rectification of generated
//! trajectories through the frozen forward/inverse models, the subvector and
//! trajectory losses, and the optimization loop.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fm_im::{row, stack_rows, to_ef, Feature, ForwardPredictor, InversePredictor, Standardizer};
use crate::kinematics::{Action, EndpointPair, JointConfig, State, EF_DIM};
use crate::nn::{Optimizer, OptimizerConfig, Parameters};
use crate::tm::{PredictedTrajectory, Subvector, TmForward, TrajectoryModel};

/// Standardized values of the subvectors being compared.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateParts {
    pub theta: Option<Vec<f64>>,
    pub ef: Option<Vec<f64>>,
}

impl StateParts {
    pub fn ef(ef: Vec<f64>) -> Self {
        StateParts { theta: None, ef: Some(ef) }
    }

    /// Standardizes the requested subvectors of a raw state.
    pub fn from_state(st: &Standardizer, s: &State, subvectors: &[Subvector]) -> Result<Self> {
        let mut parts = StateParts::default();
        for sub in subvectors {
            match sub {
                Subvector::Theta => parts.theta = Some(st.transform_vec(Feature::Theta, &s.theta)?),
                Subvector::Ef => parts.ef = Some(st.transform_vec(Feature::Ef, &s.ef.0)?),
            }
        }
        Ok(parts)
    }

    fn pairs<'a>(&'a self, other: &'a StateParts) -> Result<Vec<(&'a [f64], &'a [f64])>> {
        let mut out = Vec::with_capacity(2);
        for (a, b) in [(&self.theta, &other.theta), (&self.ef, &other.ef)] {
            match (a, b) {
                (Some(a), Some(b)) if a.len() == b.len() => out.push((&a[..], &b[..])),
                (None, None) => {}
                _ => return Err(Error::invalid("compared states carry different subvectors")),
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("no subvectors to compare"));
        }
        Ok(out)
    }
}

/// Mean over the compared subvectors of their MSE.
pub fn state_loss(s_hat: &StateParts, s_ref: &StateParts) -> Result<f64> {
    let pairs = s_hat.pairs(s_ref)?;
    let k = pairs.len() as f64;
    let mut sum = 0.0;
    for (a, b) in pairs {
        sum += crate::nn::mse(a, b)?;
    }
    Ok(sum / k)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean state loss between generated and rectified intermediate states.
    pub rectification: f64,
    /// Loss between the first generated state and `s(0)`.
    pub initial: f64,
    /// Loss between the last generated state and `s(T)`.
    pub final_: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(rectification: f64, initial: f64, final_: f64) -> Self {
        LossBreakdown { rectification, initial, final_, total: rectification + initial + final_ }
    }
}

/// Trajectory loss over standardized subvectors.
pub fn tm_loss(traj_hat: &[StateParts], traj_tilde: &[StateParts], s0: &StateParts, s_goal: &StateParts) -> Result<LossBreakdown> {
    if traj_hat.is_empty() || traj_hat.len() != traj_tilde.len() {
        return Err(Error::invalid(format!(
            "trajectory lengths differ or are empty: {} vs {}",
            traj_hat.len(),
            traj_tilde.len()
        )));
    }
    let mut rect = 0.0;
    for (a, b) in traj_hat.iter().zip(traj_tilde) {
        rect += state_loss(a, b)?;
    }
    let rect = rect / traj_hat.len() as f64;
    let initial = state_loss(&traj_hat[0], s0)?;
    let last = state_loss(traj_hat.last().expect("nonempty"), s_goal)?;
    Ok(LossBreakdown::new(rect, initial, last))
}

/// Output of the rectification loop for one endpoint pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifiedTrajectory {
    /// `s̃(1..T−1)`.
    pub states: Vec<State>,
    /// `s̃(T)`.
    pub s_tilde_t: State,
    /// `â(0..T−1)`.
    pub actions: Vec<Action>,
}

/// Batched rectification. Index `t − 1` of every vector holds step `t`; the
/// last entry is the final state `s̃(T)` reached by aiming at the goal.
#[derive(Debug, Clone)]
pub struct RectifiedBatch {
    pub theta: Vec<Array2<f64>>,
    pub ef: Vec<Array2<f64>>,
    pub actions: Vec<Array2<f64>>,
}

/// Runs the rectification chain for a batch.
///
/// `predicted_ef[t − 1]` holds `êf(t)` for `t = 1..T−1` in raw units. Each
/// step asks the IM for the action from the previous rectified state towards
/// the next predicted position (the goal for the last step) and lets the FM
/// execute it.
pub fn rectify_batch<F, I>(
    fm: &F,
    im: &I,
    theta0: ArrayView2<f64>,
    ef0: ArrayView2<f64>,
    predicted_ef: &[Array2<f64>],
    ef_goal: ArrayView2<f64>,
) -> Result<RectifiedBatch>
where
    F: ForwardPredictor + ?Sized,
    I: InversePredictor + ?Sized,
{
    let horizon = predicted_ef.len() + 1;
    let mut out = RectifiedBatch {
        theta: Vec::with_capacity(horizon),
        ef: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
    };
    for t in 1..=horizon {
        let target = if t < horizon { predicted_ef[t - 1].view() } else { ef_goal };
        let (prev_theta, prev_ef) = match t {
            1 => (theta0, ef0),
            _ => (out.theta[t - 2].view(), out.ef[t - 2].view()),
        };
        let a = im.infer_action_batch(prev_theta, prev_ef, target)?;
        let (theta, ef) = fm.predict_next_batch(prev_theta, prev_ef, a.view())?;
        if [&a, &theta, &ef].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical { step: t, message: "non-finite rectified state or action".into() });
        }
        out.actions.push(a);
        out.theta.push(theta);
        out.ef.push(ef);
    }
    Ok(out)
}

impl RectifiedBatch {
    fn split(self) -> Vec<RectifiedTrajectory> {
        let batch = self.ef.first().map_or(0, |e| e.nrows());
        let horizon = self.ef.len();
        let state = |t: usize, b: usize| State {
            theta: JointConfig(self.theta[t].row(b).to_vec()),
            ef: to_ef(self.ef[t].row(b).as_slice().expect("contiguous row")),
        };
        (0..batch)
            .map(|b| RectifiedTrajectory {
                states: (0..horizon - 1).map(|t| state(t, b)).collect(),
                s_tilde_t: state(horizon - 1, b),
                actions: self.actions.iter().map(|a| Action(a.row(b).to_vec())).collect(),
            })
            .collect()
    }
}

/// Generates a trajectory for `(s0, sT)` and rectifies it.
pub fn rectify<F, I>(
    tm: &TrajectoryModel,
    fm: &F,
    im: &I,
    s0: &State,
    s_goal: &State,
) -> Result<(PredictedTrajectory, RectifiedTrajectory)>
where
    F: ForwardPredictor + ?Sized,
    I: InversePredictor + ?Sized,
{
    let predicted = crate::tm::tm_infer(tm, s0, s_goal)?;
    let rectified = rectify_predicted(fm, im, s0, &predicted, s_goal)?;
    Ok((predicted, rectified))
}

/// Rectifies an already available trajectory of end-effector positions.
pub fn rectify_predicted<F, I>(
    fm: &F,
    im: &I,
    s0: &State,
    predicted: &PredictedTrajectory,
    s_goal: &State,
) -> Result<RectifiedTrajectory>
where
    F: ForwardPredictor + ?Sized,
    I: InversePredictor + ?Sized,
{
    if predicted.is_empty() {
        return Err(Error::invalid("predicted trajectory is empty"));
    }
    let ef: Vec<Array2<f64>> = predicted.ef_seq.iter().map(|e| row(&e.0).to_owned()).collect();
    let batch = rectify_batch(fm, im, row(&s0.theta), row(&s0.ef.0), &ef, row(&s_goal.ef.0))?;
    Ok(batch.split().remove(0))
}

/// Loss of one generated trajectory against its rectification.
pub fn trajectory_loss(
    tm: &TrajectoryModel,
    predicted: &PredictedTrajectory,
    rectified: &RectifiedTrajectory,
    s0: &State,
    s_goal: &State,
) -> Result<LossBreakdown> {
    let st = &tm.standardizer;
    let subs = tm.arch.subvectors();
    let hat = predicted_parts(st, predicted, &subs)?;
    let tilde = rectified
        .states
        .iter()
        .map(|s| StateParts::from_state(st, s, &subs))
        .collect::<Result<Vec<_>>>()?;
    tm_loss(&hat, &tilde, &StateParts::from_state(st, s0, &subs)?, &StateParts::from_state(st, s_goal, &subs)?)
}

fn predicted_parts(st: &Standardizer, p: &PredictedTrajectory, subs: &[Subvector]) -> Result<Vec<StateParts>> {
    (0..p.len())
        .map(|t| {
            let mut parts = StateParts::default();
            for sub in subs {
                match sub {
                    Subvector::Ef => parts.ef = Some(st.transform_vec(Feature::Ef, &p.ef_seq[t].0)?),
                    Subvector::Theta => {
                        let th = p.theta_seq.as_ref().ok_or_else(|| Error::invalid("trajectory lacks θ predictions"))?;
                        parts.theta = Some(st.transform_vec(Feature::Theta, &th[t])?);
                    }
                }
            }
            Ok(parts)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmTrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TmTrainConfig {
    /// RMSprop(η = 1e-3, γ = 0.99), 50 epochs, batches of 64.
    fn default() -> Self {
        TmTrainConfig { optimizer: OptimizerConfig::rmsprop(1e-3, 0.99), epochs: 50, batch_size: 64, seed: 0 }
    }
}

impl TmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmEpochLog {
    pub epoch: usize,
    /// Sample-mean loss terms over the epoch.
    pub loss: LossBreakdown,
    /// Mean `‖ẽf(T) − ef(T)‖₂` in meters.
    pub goal_distance: f64,
    pub wall_clock_s: f64,
}

/// Writes the training log as CSV.
pub fn write_training_log<W: std::io::Write>(log: &[TmEpochLog], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "loss", "rectification", "initial", "final", "goal_distance", "wall_clock_s"])?;
    for e in log {
        out.write_record([
            e.epoch.to_string(),
            e.loss.total.to_string(),
            e.loss.rectification.to_string(),
            e.loss.initial.to_string(),
            e.loss.final_.to_string(),
            e.goal_distance.to_string(),
            e.wall_clock_s.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Raw and standardized endpoint matrices for a whole dataset.
pub struct EndpointTensors {
    pub theta0: Array2<f64>,
    pub ef0: Array2<f64>,
    pub theta_goal: Array2<f64>,
    pub ef_goal: Array2<f64>,
    /// Encoded decoder input.
    pub input: Array2<f64>,
    /// Standardized per-head targets for the first and last generated state.
    pub start_targets: Vec<Array2<f64>>,
    pub goal_targets: Vec<Array2<f64>>,
}

impl EndpointTensors {
    pub fn new(tm: &TrajectoryModel, endpoints: &[EndpointPair]) -> Result<Self> {
        if endpoints.is_empty() {
            return Err(Error::invalid("no endpoints"));
        }
        let dof = tm.dof();
        let theta0 = stack_rows(endpoints.iter().map(|p| &p.s0.theta.0[..]), dof)?;
        let ef0 = stack_rows(endpoints.iter().map(|p| &p.s0.ef.0[..]), EF_DIM)?;
        let theta_goal = stack_rows(endpoints.iter().map(|p| &p.s_goal.theta.0[..]), dof)?;
        let ef_goal = stack_rows(endpoints.iter().map(|p| &p.s_goal.ef.0[..]), EF_DIM)?;
        let input = tm.encode_endpoints(theta0.view(), ef0.view(), theta_goal.view(), ef_goal.view())?;
        let st = &tm.standardizer;
        let targets = |theta: &Array2<f64>, ef: &Array2<f64>| -> Result<Vec<Array2<f64>>> {
            tm.heads
                .iter()
                .map(|h| match h.target {
                    Subvector::Theta => st.transform(Feature::Theta, theta.view()),
                    Subvector::Ef => st.transform(Feature::Ef, ef.view()),
                })
                .collect()
        };
        let start_targets = targets(&theta0, &ef0)?;
        let goal_targets = targets(&theta_goal, &ef_goal)?;
        Ok(EndpointTensors { theta0, ef0, theta_goal, ef_goal, input, start_targets, goal_targets })
    }

    pub fn select(&self, idx: &[usize]) -> EndpointTensors {
        let sel = |m: &Array2<f64>| m.select(Axis(0), idx);
        EndpointTensors {
            theta0: sel(&self.theta0),
            ef0: sel(&self.ef0),
            theta_goal: sel(&self.theta_goal),
            ef_goal: sel(&self.ef_goal),
            input: sel(&self.input),
            start_targets: self.start_targets.iter().map(sel).collect(),
            goal_targets: self.goal_targets.iter().map(sel).collect(),
        }
    }
}

/// Loss terms of one batch, summed over samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchLoss {
    pub rectification: f64,
    pub initial: f64,
    pub final_: f64,
    pub goal_distance: f64,
}

/// Summed per-sample state loss between `pred` and `target` heads, and the
/// gradient of `weight ×` that sum with respect to `pred` (scaled by `scale`).
fn head_loss(pred: &[Array2<f64>], target: &[ArrayView2<f64>], weight: f64, scale: f64, grads: &mut [Array2<f64>]) -> f64 {
    let k = pred.len() as f64;
    let mut total = 0.0;
    for ((p, t), g) in pred.iter().zip(target).zip(grads.iter_mut()) {
        let dim = p.ncols() as f64;
        let diff = p - t;
        total += diff.iter().map(|d| d * d).sum::<f64>() / (dim * k);
        g.scaled_add(weight * scale * 2.0 / (dim * k), &diff);
    }
    total
}

/// Standardized rectified targets per step and head.
fn rectified_targets(tm: &TrajectoryModel, rect: &RectifiedBatch) -> Result<Vec<Vec<Array2<f64>>>> {
    let st = &tm.standardizer;
    (0..tm.arch.steps())
        .map(|t| {
            tm.heads
                .iter()
                .map(|h| match h.target {
                    Subvector::Theta => st.transform(Feature::Theta, rect.theta[t].view()),
                    Subvector::Ef => st.transform(Feature::Ef, rect.ef[t].view()),
                })
                .collect()
        })
        .collect()
}

/// Forward pass, rectification and loss of one batch. When `grad` is given,
/// the gradient of the batch-mean total loss is accumulated into it with the
/// rectified states held fixed.
pub fn batch_loss<F, I>(
    tm: &TrajectoryModel,
    fm: &F,
    im: &I,
    data: &EndpointTensors,
    grad: Option<&mut TrajectoryModel>,
) -> Result<BatchLoss>
where
    F: ForwardPredictor + ?Sized,
    I: InversePredictor + ?Sized,
{
    let fwd = tm.forward(data.input.view())?;
    let rect = rectify_outputs(tm, fm, im, data, &fwd)?;
    fixed_target_loss(tm, &fwd, &rect, data, grad)
}

/// Rectifies the decoder outputs of a batch.
pub fn rectify_outputs<F, I>(
    tm: &TrajectoryModel,
    fm: &F,
    im: &I,
    data: &EndpointTensors,
    fwd: &TmForward,
) -> Result<RectifiedBatch>
where
    F: ForwardPredictor + ?Sized,
    I: InversePredictor + ?Sized,
{
    let ef_head = tm.head_index(Subvector::Ef).ok_or_else(|| Error::Internal("no ef head".into()))?;
    let predicted_ef = fwd
        .outputs
        .iter()
        .map(|o| tm.standardizer.inverse_transform(Feature::Ef, o[ef_head].view()))
        .collect::<Result<Vec<_>>>()?;
    rectify_batch(fm, im, data.theta0.view(), data.ef0.view(), &predicted_ef, data.ef_goal.view())
}

/// Loss of decoder outputs against given rectified states (treated as
/// constants) and the batch endpoints; optionally accumulates the gradient
/// of the batch-mean loss.
pub fn fixed_target_loss(
    tm: &TrajectoryModel,
    fwd: &TmForward,
    rect: &RectifiedBatch,
    data: &EndpointTensors,
    grad: Option<&mut TrajectoryModel>,
) -> Result<BatchLoss> {
    let batch = data.input.nrows();
    let steps = fwd.outputs.len();
    if steps == 0 || rect.ef.len() != steps + 1 {
        return Err(Error::invalid(format!("{} rectified steps for {steps} generated states", rect.ef.len())));
    }
    let targets = rectified_targets(tm, rect)?;
    let scale = 1.0 / batch as f64;
    let mut d_out: Vec<Vec<Array2<f64>>> =
        fwd.outputs.iter().map(|o| o.iter().map(|h| Array2::zeros(h.raw_dim())).collect()).collect();
    let mut loss = BatchLoss::default();
    let rect_weight = 1.0 / steps as f64;
    for t in 0..steps {
        let views: Vec<_> = targets[t].iter().map(|m| m.view()).collect();
        loss.rectification += rect_weight * head_loss(&fwd.outputs[t], &views, rect_weight, scale, &mut d_out[t]);
    }
    let views: Vec<_> = data.start_targets.iter().map(|m| m.view()).collect();
    loss.initial = head_loss(&fwd.outputs[0], &views, 1.0, scale, &mut d_out[0]);
    let views: Vec<_> = data.goal_targets.iter().map(|m| m.view()).collect();
    loss.final_ = head_loss(&fwd.outputs[steps - 1], &views, 1.0, scale, &mut d_out[steps - 1]);
    let reached = &rect.ef[steps];
    loss.goal_distance = (reached - &data.ef_goal).rows().into_iter().map(|r| r.dot(&r).sqrt()).sum();

    if let Some(g) = grad {
        tm.backward(fwd, &d_out, g)?;
    }
    Ok(loss)
}

impl BatchLoss {
    pub fn total(&self) -> f64 {
        self.rectification + self.initial + self.final_
    }
}

/// Trains the trajectory model with frozen forward/inverse models.
///
/// `on_epoch` runs after every epoch with the log entry and current model
/// (checkpointing, progress output); an error from it aborts training.
pub fn train_tm<F, I, C>(
    tm: TrajectoryModel,
    endpoints: &[EndpointPair],
    fm: &F,
    im: &I,
    cfg: &TmTrainConfig,
    mut on_epoch: C,
) -> Result<(TrajectoryModel, Vec<TmEpochLog>)>
where
    F: ForwardPredictor + ?Sized,
    I: InversePredictor + ?Sized,
    C: FnMut(&TmEpochLog, &TrajectoryModel) -> Result<()>,
{
    cfg.validate()?;
    if endpoints.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for other in [fm.standardizer(), im.standardizer()].into_iter().flatten() {
        if other != &tm.standardizer {
            return Err(Error::invalid("trajectory, forward and inverse models must share one standardizer"));
        }
    }
    let mut tm = tm;
    let data = EndpointTensors::new(&tm, endpoints)?;
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..endpoints.len()).collect();
    let mut grad = tm.zeroed();
    let mut log = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = BatchLoss::default();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.select(idx);
            grad.zero();
            let l = batch_loss(&tm, fm, im, &batch, Some(&mut grad)).map_err(|e| match e {
                Error::Numerical { step, message } => Error::Divergence(format!(
                    "epoch {epoch}, batch {b}: rectification step {step}: {message}"
                )),
                other => other,
            })?;
            let total = l.total();
            if !total.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            opt.step(&mut tm, &grad)
                .map_err(|e| Error::Divergence(format!("epoch {epoch}, batch {b}: {e}")))?;
            sum.rectification += l.rectification;
            sum.initial += l.initial;
            sum.final_ += l.final_;
            sum.goal_distance += l.goal_distance;
        }
        let n = endpoints.len() as f64;
        let entry = TmEpochLog {
            epoch,
            loss: LossBreakdown::new(sum.rectification / n, sum.initial / n, sum.final_ / n),
            goal_distance: sum.goal_distance / n,
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry, &tm)?;
        log.push(entry);
    }
    Ok((tm, log))
}

/// Mean loss of a model over a dataset without updating it.
pub fn evaluate_loss<F, I>(
    tm: &TrajectoryModel,
    endpoints: &[EndpointPair],
    fm: &F,
    im: &I,
    batch_size: usize,
) -> Result<(LossBreakdown, f64)>
where
    F: ForwardPredictor + ?Sized,
    I: InversePredictor + ?Sized,
{
    if endpoints.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let data = EndpointTensors::new(tm, endpoints)?;
    let idx: Vec<usize> = (0..endpoints.len()).collect();
    let mut sum = BatchLoss::default();
    for chunk in idx.chunks(batch_size.max(1)) {
        let l = batch_loss(tm, fm, im, &data.select(chunk), None)?;
        sum.rectification += l.rectification;
        sum.initial += l.initial;
        sum.final_ += l.final_;
        sum.goal_distance += l.goal_distance;
    }
    let n = endpoints.len() as f64;
    Ok((LossBreakdown::new(sum.rectification / n, sum.initial / n, sum.final_ / n), sum.goal_distance / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fm_im::{train_fm, train_im, MlpTrainConfig, OracleForward, OracleInverse};
    use crate::kinematics::{extract_endpoints, record_trajectories, sample_babbling, ArmModel, EEPosition};
    use crate::nn::gradient_check;
    use crate::tm::{tm_infer, TmArchitecture};
    use rand::Rng;

    fn standardizer(arm: &ArmModel) -> Standardizer {
        Standardizer::fit(&sample_babbling(arm, 2000, 0.1, 11).unwrap()).unwrap()
    }

    fn ef_parts(v: [f64; 3]) -> StateParts {
        StateParts::ef(v.to_vec())
    }

    #[test]
    fn state_loss_examples() {
        assert_eq!(state_loss(&ef_parts([0.3, -1.0, 2.0]), &ef_parts([0.3, -1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(state_loss(&ef_parts([1.0, 1.0, 1.0]), &ef_parts([0.0, 0.0, 0.0])).unwrap(), 1.0);

        // θ MSE 0.2 (one entry of sqrt(1.4) over 7), ef MSE 0.4 (sqrt(1.2) over 3).
        let mut theta = vec![0.0; 7];
        theta[2] = 1.4f64.sqrt();
        let a = StateParts { theta: Some(theta), ef: Some(vec![0.0, 1.2f64.sqrt(), 0.0]) };
        let b = StateParts { theta: Some(vec![0.0; 7]), ef: Some(vec![0.0; 3]) };
        approx::assert_relative_eq!(state_loss(&a, &b).unwrap(), 0.3, epsilon = 1e-15);

        assert!(state_loss(&a, &ef_parts([0.0; 3])).is_err());
        assert!(state_loss(&StateParts::default(), &StateParts::default()).is_err());
    }

    #[test]
    fn tm_loss_examples() {
        let traj: Vec<_> = (0..10).map(|i| ef_parts([i as f64, 0.5, -0.2])).collect();
        let zero = tm_loss(&traj, &traj, &traj[0], &traj[9]).unwrap();
        assert_eq!(zero, LossBreakdown::default());

        let s0 = ef_parts([1.0, 1.5, 0.8]);
        let l = tm_loss(&traj, &traj, &s0, &traj[9]).unwrap();
        assert_eq!((l.rectification, l.initial, l.final_, l.total), (0.0, 1.0, 0.0, 1.0));

        assert!(tm_loss(&traj, &traj[1..], &s0, &s0).is_err());
        assert!(tm_loss(&[], &[], &s0, &s0).is_err());
    }

    /// Straight re-implementation with explicit loops over plain arrays.
    fn scalar_tm_loss(hat: &[[f64; 3]], tilde: &[[f64; 3]], s0: [f64; 3], st: [f64; 3]) -> f64 {
        let l = |a: [f64; 3], b: [f64; 3]| -> f64 {
            let mut acc = 0.0;
            for i in 0..3 {
                acc += (a[i] - b[i]) * (a[i] - b[i]);
            }
            acc / 3.0
        };
        let mut rect = 0.0;
        for i in 0..hat.len() {
            rect += l(hat[i], tilde[i]);
        }
        rect / hat.len() as f64 + l(hat[0], s0) + l(hat[hat.len() - 1], st)
    }

    #[test]
    fn tm_loss_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let mut v = || [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let hat: Vec<[f64; 3]> = (0..10).map(|_| v()).collect();
            let tilde: Vec<[f64; 3]> = (0..10).map(|_| v()).collect();
            let (s0, st) = (v(), v());
            let parts = |x: &[[f64; 3]]| x.iter().map(|e| ef_parts(*e)).collect::<Vec<_>>();
            let l = tm_loss(&parts(&hat), &parts(&tilde), &ef_parts(s0), &ef_parts(st)).unwrap();
            approx::assert_abs_diff_eq!(l.total, scalar_tm_loss(&hat, &tilde, s0, st), epsilon = 1e-12);
            assert_eq!(l.total, l.rectification + l.initial + l.final_);
        }
    }

    #[test]
    fn oracle_rectification_reproduces_recorded_trajectories() {
        let arm = ArmModel::default_arm();
        let fm = OracleForward { arm: &arm };
        let im = OracleInverse { arm: &arm, iters: 30, damping: 1e-3 };
        for traj in record_trajectories(&arm, 10, 11, 0.05, 4).unwrap() {
            let ef: Vec<EEPosition> = traj.states[1..11].iter().map(|s| s.ef).collect();
            let predicted = PredictedTrajectory::from_ef(ef);
            let rect = rectify_predicted(&fm, &im, &traj.states[0], &predicted, &traj.states[11]).unwrap();
            assert_eq!((rect.states.len(), rect.actions.len()), (10, 11));
            for (p, r) in predicted.ef_seq.iter().zip(&rect.states) {
                assert!(p.distance(&r.ef) < 1e-3, "step error {}", p.distance(&r.ef));
            }
        }
    }

    #[test]
    fn stationary_chain_stays_put() {
        let arm = ArmModel::default_arm();
        let s0 = arm.state(JointConfig(vec![0.1, -0.5, 0.3, 1.0, -0.2, 0.4, 0.0])).unwrap();
        let fm = OracleForward { arm: &arm };
        let im = OracleInverse { arm: &arm, iters: 10, damping: 1e-3 };
        let predicted = PredictedTrajectory::from_ef(vec![s0.ef; 10]);
        let rect = rectify_predicted(&fm, &im, &s0, &predicted, &s0).unwrap();
        assert!(rect.actions.iter().all(|a| a.iter().all(|v| v.abs() < 1e-9)));
        for s in rect.states.iter().chain([&rect.s_tilde_t]) {
            assert!(s.theta.iter().zip(s0.theta.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn first_rectified_state_ignores_later_predictions() {
        let arm = ArmModel::default_arm();
        let fm = OracleForward { arm: &arm };
        let im = OracleInverse { arm: &arm, iters: 10, damping: 1e-3 };
        let traj = &record_trajectories(&arm, 1, 11, 0.05, 8).unwrap()[0];
        let ef: Vec<EEPosition> = traj.states[1..11].iter().map(|s| s.ef).collect();
        let a = rectify_predicted(&fm, &im, &traj.states[0], &PredictedTrajectory::from_ef(ef.clone()), &traj.states[11]).unwrap();
        let mut shuffled = ef.clone();
        shuffled[1..].reverse();
        let b = rectify_predicted(&fm, &im, &traj.states[0], &PredictedTrajectory::from_ef(shuffled), &traj.states[11]).unwrap();
        assert_eq!(a.states[0], b.states[0]);
        assert_eq!(a.actions[0], b.actions[0]);
        assert_ne!(a.states[2], b.states[2]);
    }

    #[test]
    fn fixed_target_gradient_matches_finite_differences() {
        let arm = ArmModel::default_arm();
        let st = standardizer(&arm);
        let fm = OracleForward { arm: &arm };
        let im = OracleInverse { arm: &arm, iters: 5, damping: 1e-2 };
        let endpoints = extract_endpoints(&record_trajectories(&arm, 4, 11, 0.05, 2).unwrap()).unwrap();
        for seed in 0..3 {
            let tm = TrajectoryModel::new(TmArchitecture::default(), st.clone(), seed).unwrap();
            let data = EndpointTensors::new(&tm, &endpoints).unwrap();
            let fwd = tm.forward(data.input.view()).unwrap();
            let rect = rectify_outputs(&tm, &fm, &im, &data, &fwd).unwrap();
            let mut grad = tm.zeroed();
            fixed_target_loss(&tm, &fwd, &rect, &data, Some(&mut grad)).unwrap();
            let n = endpoints.len() as f64;
            let f = |p: &[f64]| -> f64 {
                let mut m = tm.clone();
                m.assign_flat(p);
                let fwd = m.forward(data.input.view()).unwrap();
                fixed_target_loss(&m, &fwd, &rect, &data, None).unwrap().total() / n
            };
            let err = gradient_check(f, &tm.flatten(), &grad.flatten(), 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn batched_loss_equals_per_trajectory_loss() {
        let arm = ArmModel::default_arm();
        let st = standardizer(&arm);
        let fm = OracleForward { arm: &arm };
        let im = OracleInverse { arm: &arm, iters: 5, damping: 1e-2 };
        let tm = TrajectoryModel::new(TmArchitecture::default(), st, 5).unwrap();
        let endpoints = extract_endpoints(&record_trajectories(&arm, 3, 11, 0.05, 6).unwrap()).unwrap();
        let data = EndpointTensors::new(&tm, &endpoints).unwrap();
        let batched = batch_loss(&tm, &fm, &im, &data, None).unwrap();
        let mut sum = 0.0;
        for p in &endpoints {
            let (pred, rect) = rectify(&tm, &fm, &im, &p.s0, &p.s_goal).unwrap();
            assert_eq!(pred, tm_infer(&tm, &p.s0, &p.s_goal).unwrap());
            sum += trajectory_loss(&tm, &pred, &rect, &p.s0, &p.s_goal).unwrap().total;
        }
        approx::assert_relative_eq!(batched.total(), sum, max_relative = 1e-12);
    }

    fn learned_models(arm: &ArmModel) -> (crate::fm_im::ForwardModel, crate::fm_im::InverseModel) {
        let data = sample_babbling(arm, 1000, 0.1, 21).unwrap();
        let fm_cfg = MlpTrainConfig { hidden: vec![16], epochs: 2, ..MlpTrainConfig::forward_default() };
        let im_cfg = MlpTrainConfig { hidden: vec![16], epochs: 2, ..MlpTrainConfig::inverse_default() };
        (train_fm(&data, &fm_cfg).unwrap().0, train_im(&data, &im_cfg).unwrap().0)
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let arm = ArmModel::default_arm();
        let (fm, im) = learned_models(&arm);
        let tm = TrajectoryModel::new(TmArchitecture::default(), fm.standardizer.clone(), 1).unwrap();
        let endpoints = extract_endpoints(&record_trajectories(&arm, 20, 11, 0.05, 1).unwrap()).unwrap();
        let cfg = TmTrainConfig { optimizer: OptimizerConfig::adam(0.0), epochs: 1, batch_size: 20, seed: 0 };
        let (trained, log) = train_tm(tm.clone(), &endpoints, &fm, &im, &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(trained, tm);
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn training_reduces_loss_and_leaves_frozen_models_alone() {
        let arm = ArmModel::default_arm();
        let (fm, im) = learned_models(&arm);
        let (fm_before, im_before) = (fm.clone(), im.clone());
        let tm = TrajectoryModel::new(TmArchitecture::default(), fm.standardizer.clone(), 1).unwrap();
        let endpoints = extract_endpoints(&record_trajectories(&arm, 128, 11, 0.05, 1).unwrap()).unwrap();
        let cfg = TmTrainConfig { optimizer: OptimizerConfig::rmsprop(1e-2, 0.99), epochs: 12, batch_size: 16, seed: 3 };
        let mut seen = 0;
        let (_, log) = train_tm(tm, &endpoints, &fm, &im, &cfg, |_, _| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 12);
        assert!(log.last().unwrap().loss.total < 0.5 * log[0].loss.total, "{log:?}");
        assert_eq!(fm, fm_before);
        assert_eq!(im, im_before);

        let mut buf = Vec::new();
        write_training_log(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,loss,rectification,initial,final,goal_distance,wall_clock_s\n"));
        assert_eq!(text.lines().count(), 13);
    }

    #[test]
    fn training_is_deterministic() {
        let arm = ArmModel::default_arm();
        let (fm, im) = learned_models(&arm);
        let tm = TrajectoryModel::new(TmArchitecture::default(), fm.standardizer.clone(), 1).unwrap();
        let endpoints = extract_endpoints(&record_trajectories(&arm, 40, 11, 0.05, 1).unwrap()).unwrap();
        let cfg = TmTrainConfig { epochs: 2, batch_size: 8, ..Default::default() };
        let run = || train_tm(tm.clone(), &endpoints, &fm, &im, &cfg, |_, _| Ok(())).unwrap();
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert!(la.iter().zip(&lb).all(|(x, y)| x.loss == y.loss));
    }

    #[test]
    fn divergence_and_mismatch_are_reported() {
        let arm = ArmModel::default_arm();
        let (fm, im) = learned_models(&arm);
        let tm = TrajectoryModel::new(TmArchitecture::default(), fm.standardizer.clone(), 1).unwrap();
        let endpoints = extract_endpoints(&record_trajectories(&arm, 16, 11, 0.05, 1).unwrap()).unwrap();
        let cfg = TmTrainConfig { optimizer: OptimizerConfig::sgd(1e200), epochs: 3, batch_size: 4, seed: 0 };
        match train_tm(tm.clone(), &endpoints, &fm, &im, &cfg, |_, _| Ok(())) {
            Err(Error::Divergence(msg)) => assert!(msg.contains("epoch"), "{msg}"),
            other => panic!("expected divergence, got {other:?}"),
        }

        let other = TrajectoryModel::new(TmArchitecture::default(), standardizer(&arm), 1).unwrap();
        assert!(train_tm(other, &endpoints, &fm, &im, &TmTrainConfig::default(), |_, _| Ok(())).is_err());
        assert!(matches!(
            train_tm(tm, &[], &fm, &im, &TmTrainConfig::default(), |_, _| Ok(())),
            Err(Error::EmptyCorpus)
        ));
    }
}
