//! Sparse, shaped and goal-image rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::Frame;
use crate::sim::EnvState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Dense,
    Sparse,
    Image,
}

impl RewardMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::Sparse => "sparse",
            Self::Image => "image",
        }
    }
}

impl std::str::FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "sparse" => Ok(Self::Sparse),
            "image" => Ok(Self::Image),
            _ => Err(Error::InvalidConfig(format!("unknown reward mode {s:?}"))),
        }
    }
}

/// Weights of the shaped reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseRewardParams {
    /// Weight on the L1 distance (per metre).
    pub alpha: f64,
    /// Numerator of the proximity bonus (metre).
    pub beta: f64,
    /// Weight on the vertical force (per newton).
    pub phi: f64,
    /// Regulariser of the proximity bonus (metre).
    pub epsilon: f64,
}

impl Default for DenseRewardParams {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            beta: 0.002,
            phi: 0.1,
            epsilon: 1e-3,
        }
    }
}

impl DenseRewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.phi > 0.0) || !(self.epsilon > 0.0 && self.epsilon <= 0.01) {
            return Err(Error::InvalidConfig(format!("invalid dense reward params {self:?}")));
        }
        Ok(())
    }
}

pub fn sparse_reward(state: &EnvState) -> f64 {
    if state.inserted {
        1.0
    } else {
        0.0
    }
}

/// `−α‖x − x*‖₁ − β/(‖x − x*‖₂ + ε) − φ·f_z`, with the force weight negated
/// once the connector is inserted so pressing down is rewarded.
pub fn dense_reward(
    pos: &[f64; 3],
    f_z: f64,
    inserted: bool,
    goal_estimate: &[f64; 3],
    params: &DenseRewardParams,
) -> f64 {
    let d = [
        pos[0] - goal_estimate[0],
        pos[1] - goal_estimate[1],
        pos[2] - goal_estimate[2],
    ];
    let l1 = d[0].abs() + d[1].abs() + d[2].abs();
    let l2 = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let phi = if inserted { -params.phi } else { params.phi };
    -params.alpha * l1 - params.beta / (l2 + params.epsilon) - phi * f_z
}

/// Negated mean absolute pixel difference; lies in `[−1, 0]`.
pub fn image_reward(frame: &Frame, goal_frame: &Frame) -> Result<f64> {
    let (a, b) = (frame.pixels(), goal_frame.pixels());
    if a.len() != b.len() {
        return Err(Error::FrameShape(a.len(), b.len()));
    }
    let total: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
    Ok(-total / a.len() as f64)
}
