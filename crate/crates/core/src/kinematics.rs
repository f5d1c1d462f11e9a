//! Analytic serial-manipulator kinematics and dataset generation.
//!
//! The arm is described by standard Denavit–Hartenberg parameters: link `i`
//! contributes `Rz(theta_i + offset) · Tz(d) · Tx(a) · Rx(alpha)`. Only the
//! translation of the composed chain is used; end-effector orientation is not
//! part of the state.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_ARM_JSON: &str = include_str!("../data/kuka_iiwa7.json");

/// Number of Cartesian coordinates in an end-effector position.
pub const EF_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhLink {
    /// Link length along the rotated x axis (m).
    pub a: f64,
    /// Link twist about the x axis (rad).
    pub alpha: f64,
    /// Link offset along the previous z axis (m).
    pub d: f64,
    /// Constant added to the joint angle (rad).
    pub theta_offset: f64,
}

impl DhLink {
    pub fn planar(a: f64) -> Self {
        DhLink { a, alpha: 0.0, d: 0.0, theta_offset: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArmFile {
    links: Vec<DhLink>,
    joint_limits: Vec<[f64; 2]>,
    home_config: Vec<f64>,
}

/// A serial revolute manipulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArmFile", into = "ArmFile")]
pub struct ArmModel {
    links: Vec<DhLink>,
    joint_limits: Vec<[f64; 2]>,
    home_config: JointConfig,
}

impl TryFrom<ArmFile> for ArmModel {
    type Error = Error;

    fn try_from(file: ArmFile) -> Result<Self> {
        ArmModel::new(file.links, file.joint_limits, JointConfig(file.home_config))
    }
}

impl From<ArmModel> for ArmFile {
    fn from(arm: ArmModel) -> Self {
        ArmFile { links: arm.links, joint_limits: arm.joint_limits, home_config: arm.home_config.0 }
    }
}

impl ArmModel {
    pub fn new(links: Vec<DhLink>, joint_limits: Vec<[f64; 2]>, home_config: JointConfig) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::invalid("arm must have at least one link"));
        }
        if joint_limits.len() != links.len() || home_config.len() != links.len() {
            return Err(Error::invalid(format!(
                "arm has {} links but {} joint limits and {} home angles",
                links.len(),
                joint_limits.len(),
                home_config.len()
            )));
        }
        for (i, l) in links.iter().enumerate() {
            if ![l.a, l.alpha, l.d, l.theta_offset].iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("link {i} has a non-finite DH parameter")));
            }
        }
        for (i, (&[lo, hi], &h)) in joint_limits.iter().zip(home_config.iter()).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("joint {i}: limits [{lo}, {hi}] are not an interval")));
            }
            if !(lo..=hi).contains(&h) {
                return Err(Error::invalid(format!("joint {i}: home angle {h} outside [{lo}, {hi}]")));
            }
        }
        Ok(ArmModel { links, joint_limits, home_config })
    }

    /// The bundled 7-DoF KUKA LBR iiwa 7 description.
    pub fn default_arm() -> Self {
        Self::from_json_str(DEFAULT_ARM_JSON).expect("bundled arm description is valid")
    }

    /// Two unit links in the xy plane, unlimited within (-π, π].
    pub fn planar_two_link() -> Self {
        use std::f64::consts::PI;
        ArmModel::new(
            vec![DhLink::planar(1.0), DhLink::planar(1.0)],
            vec![[-PI, PI]; 2],
            JointConfig(vec![0.0, 0.0]),
        )
        .expect("planar fixture is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[DhLink] {
        &self.links
    }

    pub fn joint_limits(&self) -> &[[f64; 2]] {
        &self.joint_limits
    }

    pub fn home_config(&self) -> &JointConfig {
        &self.home_config
    }

    /// Sum of |a| + |d| over all links; an upper bound on reach and on the
    /// Lipschitz constant of the position map.
    pub fn reach(&self) -> f64 {
        self.links.iter().map(|l| l.a.abs() + l.d.abs()).sum()
    }

    pub fn within_limits(&self, theta: &JointConfig) -> bool {
        theta.len() == self.dof()
            && theta.iter().zip(&self.joint_limits).all(|(&t, &[lo, hi])| lo <= t && t <= hi)
    }

    /// Clamps each angle into its joint interval; returns whether anything moved.
    pub fn clamp(&self, theta: &mut JointConfig) -> bool {
        let mut clipped = false;
        for (t, &[lo, hi]) in theta.0.iter_mut().zip(&self.joint_limits) {
            let c = t.clamp(lo, hi);
            clipped |= c != *t;
            *t = c;
        }
        clipped
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dof() {
            return Err(Error::invalid(format!(
                "joint vector has {} entries, arm has {} joints",
                theta.len(),
                self.dof()
            )));
        }
        Ok(())
    }

    /// Builds an FK-consistent state.
    pub fn state(&self, theta: JointConfig) -> Result<State> {
        let ef = forward_kinematics(self, &theta)?;
        Ok(State { theta, ef })
    }
}

/// Joint angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl std::ops::Deref for JointConfig {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Cartesian end-effector position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EEPosition(pub [f64; EF_DIM]);

impl EEPosition {
    pub fn distance(&self, other: &EEPosition) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub theta: JointConfig,
    pub ef: EEPosition,
}

/// Joint-space delta `θ(t+1) − θ(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(pub Vec<f64>);

impl std::ops::Deref for Action {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: State,
    pub a: Action,
    pub s_next: State,
}

/// States `0..=T` of a recorded movement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointPair {
    pub s0: State,
    #[serde(rename = "sT")]
    pub s_goal: State,
}

/// Position of the end of the DH chain for the given joint angles.
pub fn forward_kinematics(arm: &ArmModel, theta: &[f64]) -> Result<EEPosition> {
    arm.check_dim(theta)?;
    Ok(fk_unchecked(arm, theta))
}

pub(crate) fn fk_unchecked(arm: &ArmModel, theta: &[f64]) -> EEPosition {
    // Rotation (row-major) and translation of the running frame.
    let mut rot = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut pos = [0.0; 3];
    for (link, &q) in arm.links.iter().zip(theta) {
        let (st, ct) = (q + link.theta_offset).sin_cos();
        let (sa, ca) = link.alpha.sin_cos();
        let local_t = [link.a * ct, link.a * st, link.d];
        let local_r = [[ct, -st * ca, st * sa], [st, ct * ca, -ct * sa], [0.0, sa, ca]];
        for (i, p) in pos.iter_mut().enumerate() {
            *p += rot[i][0] * local_t[0] + rot[i][1] * local_t[1] + rot[i][2] * local_t[2];
        }
        let mut next = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                next[i][j] = rot[i][0] * local_r[0][j] + rot[i][1] * local_r[1][j] + rot[i][2] * local_r[2][j];
            }
        }
        rot = next;
    }
    EEPosition(pos)
}

/// A configuration drawn uniformly within the joint limits.
pub fn uniform_config(arm: &ArmModel, rng: &mut impl Rng) -> JointConfig {
    JointConfig(arm.joint_limits.iter().map(|&[lo, hi]| lo + (hi - lo) * rng.random::<f64>()).collect())
}

fn substream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Clips `delta` so that `theta + delta` stays within `[lo, hi]` when
/// evaluated in floating point.
fn clip_delta(theta: f64, delta: f64, lo: f64, hi: f64) -> f64 {
    let mut d = delta.clamp(lo - theta, hi - theta);
    while theta + d > hi {
        d = d.next_down();
    }
    while theta + d < lo {
        d = d.next_up();
    }
    d
}

/// Random-configuration motor babbling.
///
/// Each transition starts from a configuration drawn uniformly within the
/// joint limits and applies a per-joint delta uniform in
/// `[-delta_bound, delta_bound]`, clipped so the next configuration stays
/// within the limits. Transition `i` uses its own random substream, so the
/// output does not depend on generation order.
pub fn sample_babbling(arm: &ArmModel, n: usize, delta_bound: f64, seed: u64) -> Result<Vec<Transition>> {
    if n == 0 {
        return Err(Error::invalid("babbling needs n > 0"));
    }
    if !(delta_bound.is_finite() && delta_bound >= 0.0) {
        return Err(Error::invalid(format!("delta bound must be finite and non-negative, got {delta_bound}")));
    }
    (0..n)
        .map(|i| {
            let mut rng = substream(seed, i);
            let theta = uniform_config(arm, &mut rng);
            let delta: Vec<f64> = theta
                .iter()
                .zip(&arm.joint_limits)
                .map(|(&t, &[lo, hi])| {
                    let raw = delta_bound * (2.0 * rng.random::<f64>() - 1.0);
                    clip_delta(t, raw, lo, hi)
                })
                .collect();
            let next = JointConfig(theta.iter().zip(&delta).map(|(t, d)| t + d).collect());
            Ok(Transition { s: arm.state(theta)?, a: Action(delta), s_next: arm.state(next)? })
        })
        .collect()
}

/// Joint-space linear interpolation `θ(t) = θ0 + (t/T)(θT − θ0)` for `t = 0..=T`.
pub fn interpolate_trajectory(arm: &ArmModel, start: &JointConfig, goal: &JointConfig, horizon: usize) -> Result<Trajectory> {
    arm.check_dim(start)?;
    arm.check_dim(goal)?;
    if horizon < 2 {
        return Err(Error::invalid(format!("horizon must be at least 2, got {horizon}")));
    }
    let states = (0..=horizon)
        .map(|t| {
            let frac = t as f64 / horizon as f64;
            let theta = JointConfig(start.iter().zip(goal.iter()).map(|(&s, &g)| s + frac * (g - s)).collect());
            arm.state(theta)
        })
        .collect::<Result<_>>()?;
    Ok(Trajectory { states })
}

/// Records `n` reaching movements from a noisy home configuration to uniform
/// random goals.
pub fn record_trajectories(arm: &ArmModel, n: usize, horizon: usize, init_noise: f64, seed: u64) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::invalid("need n > 0 trajectories"));
    }
    if !(init_noise.is_finite() && init_noise >= 0.0) {
        return Err(Error::invalid(format!("init noise must be finite and non-negative, got {init_noise}")));
    }
    (0..n)
        .map(|i| {
            let mut rng = substream(seed, i);
            let mut start = JointConfig(
                arm.home_config.iter().map(|&h| h + init_noise * (2.0 * rng.random::<f64>() - 1.0)).collect(),
            );
            arm.clamp(&mut start);
            let goal = uniform_config(arm, &mut rng);
            interpolate_trajectory(arm, &start, &goal, horizon)
        })
        .collect()
}

pub fn extract_endpoints(trajectories: &[Trajectory]) -> Result<Vec<EndpointPair>> {
    if trajectories.is_empty() {
        return Err(Error::invalid("no trajectories to extract endpoints from"));
    }
    trajectories
        .iter()
        .enumerate()
        .map(|(i, tr)| match (tr.states.first(), tr.states.last()) {
            (Some(s0), Some(st)) if tr.states.len() >= 2 => {
                Ok(EndpointPair { s0: s0.clone(), s_goal: st.clone() })
            }
            _ => Err(Error::invalid(format!("trajectory {i} has fewer than two states"))),
        })
        .collect()
}
