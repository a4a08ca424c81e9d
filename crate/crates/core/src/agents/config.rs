use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::A_MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algo {
    #[serde(rename = "SAC")]
    Sac,
    #[serde(rename = "TD3")]
    Td3,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sac => "SAC",
            Self::Td3 => "TD3",
        }
    }
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SAC" => Ok(Self::Sac),
            "TD3" => Ok(Self::Td3),
            _ => Err(Error::InvalidConfig(format!("unknown algorithm {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Train,
    Eval,
}

/// TD3 noise settings, expressed as fractions of `a_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Td3Params {
    pub exploration_noise_std: f64,
    pub target_noise_std: f64,
    pub target_noise_clip: f64,
    pub policy_delay: u64,
    pub bc_weight: f64,
}

impl Default for Td3Params {
    fn default() -> Self {
        Self {
            exploration_noise_std: 0.1,
            target_noise_std: 0.2,
            target_noise_clip: 0.5,
            policy_delay: 2,
            bc_weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacParams {
    pub init_temperature: f64,
    pub learn_temperature: bool,
    pub target_entropy: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for SacParams {
    fn default() -> Self {
        Self {
            init_temperature: 1.0,
            learn_temperature: true,
            target_entropy: -3.0,
            log_std_min: -20.0,
            log_std_max: 2.0,
        }
    }
}

/// Hyperparameters shared by both agents. Networks see observations
/// multiplied by `obs_scale` and actions divided by `a_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub obs_scale: Vec<f64>,
    pub a_max: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub reward_scale: f64,
    pub final_layer_init: f64,
    pub seed: u64,
    pub td3: Td3Params,
    pub sac: SacParams,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self::for_state()
    }
}

impl AgentConfig {
    /// Defaults for the 4-dimensional state observation.
    pub fn for_state() -> Self {
        Self {
            obs_dim: 4,
            hidden: vec![64, 64],
            obs_scale: vec![100.0, 100.0, 100.0, 0.1],
            a_max: A_MAX,
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 128,
            buffer_capacity: 100_000,
            reward_scale: 1.0,
            final_layer_init: 3e-3,
            seed: 0,
            td3: Td3Params::default(),
            sac: SacParams::default(),
        }
    }

    /// Defaults for flattened 32×32 frames.
    pub fn for_image() -> Self {
        let n = crate::render::FRAME_PIXELS;
        Self {
            obs_dim: n,
            hidden: vec![128, 64],
            obs_scale: vec![1.0; n],
            ..Self::for_state()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.obs_dim == 0 || self.obs_scale.len() != self.obs_dim {
            return bad("obs_scale must have obs_dim entries");
        }
        if !(self.a_max > 0.0) || !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return bad("a_max, gamma or tau out of range");
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("lr, batch_size and buffer_capacity must be positive");
        }
        if self.td3.policy_delay == 0 || self.td3.exploration_noise_std < 0.0 || self.td3.target_noise_std < 0.0 {
            return bad("invalid TD3 parameters");
        }
        if !(self.sac.init_temperature > 0.0) || self.sac.log_std_min >= self.sac.log_std_max {
            return bad("invalid SAC parameters");
        }
        Ok(())
    }
}
