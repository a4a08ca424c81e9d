//! An environment paired with an observation mode and a reward.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::render::{capture_goal_image, Frame};
use crate::rewards::{dense_reward, image_reward, sparse_reward, DenseRewardParams, RewardMode};
use crate::sim::{observe, EnvConfig, EnvState, Observation, ObservationMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub env: EnvConfig,
    pub observation: ObservationMode,
    pub reward_mode: RewardMode,
    #[serde(default)]
    pub dense: DenseRewardParams,
}

impl TaskSpec {
    /// Image rewards pair with image observations; the other rewards with
    /// state vectors.
    pub fn new(env: EnvConfig, reward_mode: RewardMode) -> Self {
        let observation = match reward_mode {
            RewardMode::Image => ObservationMode::Image,
            RewardMode::Dense | RewardMode::Sparse => ObservationMode::StateVector,
        };
        Self {
            env,
            observation,
            reward_mode,
            dense: DenseRewardParams::default(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self.observation {
            ObservationMode::StateVector => 4,
            ObservationMode::Image => crate::render::FRAME_PIXELS,
        }
    }
}

/// A [`TaskSpec`] with its goal frame captured (image rewards only).
#[derive(Clone, Debug)]
pub struct Task {
    pub spec: TaskSpec,
    goal_frame: Option<Frame>,
}

impl Task {
    /// Captures the goal image with a noise-free scripted insertion at the
    /// true goal.
    pub fn new(spec: TaskSpec) -> Result<Self> {
        spec.env.validate()?;
        spec.dense.validate()?;
        let goal_frame = match spec.reward_mode {
            RewardMode::Image => {
                let mut cfg = spec.env.clone().noiseless();
                cfg.goal_estimate = cfg.goal;
                Some(capture_goal_image(&cfg)?)
            }
            _ => None,
        };
        Ok(Self { spec, goal_frame })
    }

    pub fn goal_frame(&self) -> Option<&Frame> {
        self.goal_frame.as_ref()
    }

    /// Observation vector and reward for `state`, sharing one render when the
    /// frame is needed for both.
    pub fn observe_and_reward(&self, state: &EnvState, config: &EnvConfig) -> Result<(Vec<f64>, f64)> {
        let obs = observe(state, config, self.spec.observation);
        let reward = match self.spec.reward_mode {
            RewardMode::Sparse => sparse_reward(state),
            RewardMode::Dense => dense_reward(
                &state.pos,
                state.f_z,
                state.inserted,
                &config.goal_estimate,
                &self.spec.dense,
            ),
            RewardMode::Image => {
                let goal = self.goal_frame.as_ref().expect("image task has a goal frame");
                match &obs {
                    Observation::Image(f) => image_reward(f, goal)?,
                    Observation::State(_) => image_reward(&crate::render::render(state, config), goal)?,
                }
            }
        };
        Ok((obs.to_vec(), reward))
    }

    pub fn observe(&self, state: &EnvState, config: &EnvConfig) -> Vec<f64> {
        observe(state, config, self.spec.observation).to_vec()
    }
}
