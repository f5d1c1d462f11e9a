//! The trajectory model: a GRU decoder mapping an endpoint pair to a fixed
//! number of intermediate end-effector positions.
//!
//! The standardized pair `[θ(0), ef(0), θ(T), ef(T)]` is the constant input
//! of every decoding step, starting from a zero hidden state. Each step's top
//! GRU output passes through a shared tanh layer and one or more prediction
//! heads (tanh hidden layer + linear output), each predicting one state
//! subvector in standardized units.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fm_im::{row, to_ef, Feature, InversePredictor, Standardizer};
use crate::kinematics::{Action, EEPosition, JointConfig, State, EF_DIM};
use crate::nn::{Activation, Dense, DenseCache, Gru, GruCache, Parameters};

/// State subvector a prediction head is responsible for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subvector {
    Theta,
    Ef,
}

impl Subvector {
    pub fn feature(self) -> Feature {
        match self {
            Subvector::Theta => Feature::Theta,
            Subvector::Ef => Feature::Ef,
        }
    }

    pub fn dim(self, dof: usize) -> usize {
        match self {
            Subvector::Theta => dof,
            Subvector::Ef => EF_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub d_hy: usize,
    pub out_dim: usize,
    pub target_subvector: Subvector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmArchitecture {
    /// Number of stacked GRU layers.
    pub n_r: usize,
    /// Units per GRU layer.
    pub d_r: usize,
    /// Width of the common tanh layer.
    pub d_h: usize,
    pub heads: Vec<HeadSpec>,
    /// Horizon `T`; the model emits `T − 1` intermediate states.
    #[serde(rename = "T")]
    pub horizon: usize,
}

impl Default for TmArchitecture {
    fn default() -> Self {
        TmArchitecture {
            n_r: 1,
            d_r: 20,
            d_h: 20,
            heads: vec![HeadSpec { d_hy: 10, out_dim: EF_DIM, target_subvector: Subvector::Ef }],
            horizon: 11,
        }
    }
}

impl TmArchitecture {
    pub fn validate(&self, dof: usize) -> Result<()> {
        if self.n_r == 0 || self.d_r == 0 || self.d_h == 0 {
            return Err(Error::invalid("n_r, d_r and d_h must be positive"));
        }
        if self.horizon < 2 {
            return Err(Error::invalid(format!("horizon T must be at least 2, got {}", self.horizon)));
        }
        if !self.heads.iter().any(|h| h.target_subvector == Subvector::Ef) {
            return Err(Error::invalid("the trajectory model needs a head predicting ef"));
        }
        let mut seen = std::collections::HashSet::new();
        for h in &self.heads {
            if h.d_hy == 0 || h.out_dim != h.target_subvector.dim(dof) || !seen.insert(h.target_subvector) {
                return Err(Error::invalid(format!("invalid head {h:?}")));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.horizon - 1
    }

    pub fn subvectors(&self) -> Vec<Subvector> {
        self.heads.iter().map(|h| h.target_subvector).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub hidden: Dense,
    pub output: Dense,
    pub target: Subvector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryModel {
    pub arch: TmArchitecture,
    pub standardizer: Standardizer,
    pub gru: Vec<Gru>,
    pub common: Dense,
    pub heads: Vec<Head>,
}

struct StepCache {
    gru: Vec<GruCache>,
    common: DenseCache,
    heads: Vec<(DenseCache, DenseCache)>,
}

/// Outputs of a batched unroll plus everything the backward pass needs.
pub struct TmForward {
    /// `outputs[step][head]` is a `batch × out_dim` matrix in standardized units.
    pub outputs: Vec<Vec<Array2<f64>>>,
    caches: Vec<StepCache>,
    batch: usize,
}

impl TrajectoryModel {
    pub fn input_width(dof: usize) -> usize {
        2 * (dof + EF_DIM)
    }

    /// Glorot-initialized model.
    pub fn new(arch: TmArchitecture, standardizer: Standardizer, seed: u64) -> Result<Self> {
        let dof = standardizer.dof();
        arch.validate(dof)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut width = Self::input_width(dof);
        let gru = (0..arch.n_r)
            .map(|_| {
                let g = Gru::glorot(width, arch.d_r, &mut rng);
                width = arch.d_r;
                g
            })
            .collect();
        let common = Dense::glorot(arch.d_r, arch.d_h, Activation::Tanh, &mut rng);
        let heads = arch
            .heads
            .iter()
            .map(|h| Head {
                hidden: Dense::glorot(arch.d_h, h.d_hy, Activation::Tanh, &mut rng),
                output: Dense::glorot(h.d_hy, h.out_dim, Activation::Linear, &mut rng),
                target: h.target_subvector,
            })
            .collect();
        Ok(TrajectoryModel { arch, standardizer, gru, common, heads })
    }

    pub fn zeroed(&self) -> Self {
        let mut m = self.clone();
        m.zero();
        m
    }

    pub fn dof(&self) -> usize {
        self.standardizer.dof()
    }

    pub fn horizon(&self) -> usize {
        self.arch.horizon
    }

    pub fn head_index(&self, sub: Subvector) -> Option<usize> {
        self.heads.iter().position(|h| h.target == sub)
    }

    /// Standardized `[θ(0), ef(0), θ(T), ef(T)]` rows.
    pub fn encode_endpoints(
        &self,
        theta0: ArrayView2<f64>,
        ef0: ArrayView2<f64>,
        theta_goal: ArrayView2<f64>,
        ef_goal: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let st = &self.standardizer;
        let parts = [
            st.transform(Feature::Theta, theta0)?,
            st.transform(Feature::Ef, ef0)?,
            st.transform(Feature::Theta, theta_goal)?,
            st.transform(Feature::Ef, ef_goal)?,
        ];
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(1), &views).map_err(|e| Error::invalid(format!("endpoint batches disagree: {e}")))
    }

    /// Unrolls the decoder for `T − 1` steps on a batch of encoded endpoints.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<TmForward> {
        let batch = input.nrows();
        let mut hidden: Vec<Array2<f64>> = self.gru.iter().map(|g| Array2::zeros((batch, g.hidden()))).collect();
        let mut outputs = Vec::with_capacity(self.arch.steps());
        let mut caches = Vec::with_capacity(self.arch.steps());
        for _ in 0..self.arch.steps() {
            let mut gru_caches = Vec::with_capacity(self.gru.len());
            let mut x = input.to_owned();
            for (layer, h) in self.gru.iter().zip(hidden.iter_mut()) {
                let (h_next, cache) = layer.forward(x.view(), h.view())?;
                gru_caches.push(cache);
                *h = h_next;
                x = h.clone();
            }
            let (c, common_cache) = self.common.forward(x.view())?;
            let mut step_out = Vec::with_capacity(self.heads.len());
            let mut head_caches = Vec::with_capacity(self.heads.len());
            for head in &self.heads {
                let (u, hc) = head.hidden.forward(c.view())?;
                let (y, oc) = head.output.forward(u.view())?;
                step_out.push(y);
                head_caches.push((hc, oc));
            }
            outputs.push(step_out);
            caches.push(StepCache { gru: gru_caches, common: common_cache, heads: head_caches });
        }
        Ok(TmForward { outputs, caches, batch })
    }

    /// Backpropagation through time over the full unroll. `d_outputs` mirrors
    /// `fwd.outputs`; gradients are accumulated into `grad`.
    pub fn backward(&self, fwd: &TmForward, d_outputs: &[Vec<Array2<f64>>], grad: &mut TrajectoryModel) -> Result<()> {
        if fwd.caches.len() != self.arch.steps() || d_outputs.len() != fwd.caches.len() {
            return Err(Error::Internal(format!(
                "backward needs {} cached steps and output gradients, got {} and {}",
                self.arch.steps(),
                fwd.caches.len(),
                d_outputs.len()
            )));
        }
        let mut carry: Vec<Array2<f64>> = self.gru.iter().map(|g| Array2::zeros((fwd.batch, g.hidden()))).collect();
        for (cache, d_step) in fwd.caches.iter().zip(d_outputs).rev() {
            if d_step.len() != self.heads.len() {
                return Err(Error::Internal("output gradient is missing a head".into()));
            }
            let mut d_common = Array2::zeros((fwd.batch, self.arch.d_h));
            for (((head, g), (hc, oc)), dy) in self.heads.iter().zip(grad.heads.iter_mut()).zip(&cache.heads).zip(d_step) {
                let du = head.output.backward(oc, dy.view(), &mut g.output);
                d_common += &head.hidden.backward(hc, du.view(), &mut g.hidden);
            }
            let mut d_above = self.common.backward(&cache.common, d_common.view(), &mut grad.common);
            for l in (0..self.gru.len()).rev() {
                let total = &d_above + &carry[l];
                let (dx, dh) = self.gru[l].backward(&cache.gru[l], total.view(), &mut grad.gru[l]);
                carry[l] = dh;
                d_above = dx;
            }
        }
        Ok(())
    }
}

impl Parameters for TrajectoryModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.gru.tensors();
        t.extend(self.common.tensors());
        for h in &self.heads {
            t.extend(h.hidden.tensors());
            t.extend(h.output.tensors());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.gru.tensors_mut();
        t.extend(self.common.tensors_mut());
        for h in &mut self.heads {
            t.extend(h.hidden.tensors_mut());
            t.extend(h.output.tensors_mut());
        }
        t
    }

    fn tensor_names(&self) -> Vec<String> {
        let mut n: Vec<String> = self.gru.tensor_names().into_iter().map(|s| format!("gru.{s}")).collect();
        n.extend(self.common.tensor_names().into_iter().map(|s| format!("common.{s}")));
        for (i, h) in self.heads.iter().enumerate() {
            n.extend(h.hidden.tensor_names().into_iter().map(|s| format!("head{i}.hidden.{s}")));
            n.extend(h.output.tensor_names().into_iter().map(|s| format!("head{i}.output.{s}")));
        }
        n
    }

    fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut s = self.gru.tensor_shapes();
        s.extend(self.common.tensor_shapes());
        for h in &self.heads {
            s.extend(h.hidden.tensor_shapes());
            s.extend(h.output.tensor_shapes());
        }
        s
    }
}

/// Intermediate states `ŝ(1..T−1)` produced by the trajectory model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedTrajectory {
    pub ef_seq: Vec<EEPosition>,
    /// Joint configurations from a θ head, when the model has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_seq: Option<Vec<JointConfig>>,
    /// Full states attached after rectification (or known from a recording).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rectified: Option<Vec<State>>,
}

impl PredictedTrajectory {
    pub fn from_ef(ef_seq: Vec<EEPosition>) -> Self {
        PredictedTrajectory { ef_seq, theta_seq: None, rectified: None }
    }

    pub fn len(&self) -> usize {
        self.ef_seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ef_seq.is_empty()
    }

    pub fn with_rectified(mut self, states: Vec<State>) -> Self {
        self.rectified = Some(states);
        self
    }
}

/// Actions `â(0..T−1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionSequence(pub Vec<Action>);

/// Converts one decoder output batch into raw-unit trajectories.
pub fn decode_outputs(tm: &TrajectoryModel, outputs: &[Vec<Array2<f64>>]) -> Result<Vec<PredictedTrajectory>> {
    let ef_head = tm.head_index(Subvector::Ef).ok_or_else(|| Error::Internal("no ef head".into()))?;
    let theta_head = tm.head_index(Subvector::Theta);
    let batch = outputs.first().map_or(0, |o| o[ef_head].nrows());
    let mut trajs: Vec<PredictedTrajectory> = (0..batch)
        .map(|_| PredictedTrajectory {
            ef_seq: Vec::with_capacity(outputs.len()),
            theta_seq: theta_head.map(|_| Vec::with_capacity(outputs.len())),
            rectified: None,
        })
        .collect();
    for step in outputs {
        let ef = tm.standardizer.inverse_transform(Feature::Ef, step[ef_head].view())?;
        for (traj, r) in trajs.iter_mut().zip(ef.rows()) {
            traj.ef_seq.push(to_ef(r.as_slice().expect("contiguous row")));
        }
        if let Some(h) = theta_head {
            let th = tm.standardizer.inverse_transform(Feature::Theta, step[h].view())?;
            for (traj, r) in trajs.iter_mut().zip(th.rows()) {
                traj.theta_seq.as_mut().expect("allocated above").push(JointConfig(r.to_vec()));
            }
        }
    }
    Ok(trajs)
}

fn check_state(tm: &TrajectoryModel, s: &State) -> Result<()> {
    if s.theta.len() != tm.dof() {
        return Err(Error::invalid(format!("state has {} joints, model expects {}", s.theta.len(), tm.dof())));
    }
    Ok(())
}

/// Generates `T − 1` intermediate states for the endpoint pair.
pub fn tm_infer(tm: &TrajectoryModel, s0: &State, s_goal: &State) -> Result<PredictedTrajectory> {
    check_state(tm, s0)?;
    check_state(tm, s_goal)?;
    let input = tm.encode_endpoints(row(&s0.theta), row(&s0.ef.0), row(&s_goal.theta), row(&s_goal.ef.0))?;
    let fwd = tm.forward(input.view())?;
    Ok(decode_outputs(tm, &fwd.outputs)?.remove(0))
}

/// Batched inference over endpoint pairs.
pub fn tm_infer_batch(tm: &TrajectoryModel, pairs: &[(&State, &State)]) -> Result<Vec<PredictedTrajectory>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let dof = tm.dof();
    for (a, b) in pairs {
        check_state(tm, a)?;
        check_state(tm, b)?;
    }
    let stack = |f: &dyn Fn(&(&State, &State)) -> Vec<f64>, dim: usize| {
        let data: Vec<f64> = pairs.iter().flat_map(f).collect();
        Array2::from_shape_vec((pairs.len(), dim), data).expect("consistent widths")
    };
    let input = tm.encode_endpoints(
        stack(&|p| p.0.theta.0.clone(), dof).view(),
        stack(&|p| p.0.ef.0.to_vec(), EF_DIM).view(),
        stack(&|p| p.1.theta.0.clone(), dof).view(),
        stack(&|p| p.1.ef.0.to_vec(), EF_DIM).view(),
    )?;
    decode_outputs(tm, &tm.forward(input.view())?.outputs)
}

/// Translates a trajectory into actions with the inverse model.
///
/// Step `t` feeds the IM the previous full state and the next end-effector
/// position: `s(0)` for the first step and the attached (rectified or known)
/// state `s(t)` afterwards; the next position is `êf(t+1)` for `t + 1 < T`
/// and the goal `ef(T)` for the last step.
pub fn actions_from_trajectory<I: InversePredictor + ?Sized>(
    im: &I,
    s0: &State,
    traj: &PredictedTrajectory,
    s_goal: &State,
    horizon: usize,
) -> Result<ActionSequence> {
    if horizon < 2 || traj.len() != horizon - 1 {
        return Err(Error::invalid(format!("trajectory has {} states, horizon {horizon} needs {}", traj.len(), horizon.saturating_sub(1))));
    }
    let attached = traj
        .rectified
        .as_ref()
        .ok_or_else(|| Error::invalid("trajectory has no attached joint configurations; rectify it first"))?;
    if attached.len() != traj.len() {
        return Err(Error::invalid("attached states do not match the trajectory length"));
    }
    let actions = (0..horizon)
        .map(|t| {
            let prev = if t == 0 { s0 } else { &attached[t - 1] };
            let next_ef = if t + 1 < horizon { &traj.ef_seq[t] } else { &s_goal.ef };
            im.infer_action(prev, next_ef)
        })
        .collect::<Result<_>>()?;
    Ok(ActionSequence(actions))
}
