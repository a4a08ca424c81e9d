//! Hand-designed P-controller, residual composition and the scripted
//! demonstrator.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agents::Transition;
use crate::error::{Error, Result};
use crate::sim::{Action, EnvConfig, EnvState, InsertionEnv, A_MAX};
use crate::task::Task;

pub const DEFAULT_GAINS: [f64; 3] = [1.0, 1.0, 0.3];
/// Calibrated force above which the demonstrator considers itself blocked (N).
pub const DEMO_FORCE_THRESHOLD: f64 = 1.0;
/// Lateral wiggle amplitude of the demonstrator (m).
pub const DEMO_WIGGLE: f64 = 0.0005;
pub const DEMO_RETRIES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PController {
    pub gains: [f64; 3],
    pub goal_estimate: [f64; 3],
}

impl PController {
    pub fn new(goal_estimate: [f64; 3]) -> Self {
        Self {
            gains: DEFAULT_GAINS,
            goal_estimate,
        }
    }

    pub fn for_config(config: &EnvConfig) -> Self {
        Self::new(config.goal_estimate)
    }

    /// `−k_p ⊙ (pos − goal_estimate)` before clamping.
    pub fn raw(&self, pos: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| -self.gains[i] * (pos[i] - self.goal_estimate[i]))
    }
}

pub fn p_control(pos: &[f64; 3], ctrl: &PController) -> Action {
    Action::new(ctrl.raw(pos))
}

/// Executed action `clamp(policy_action + p_control(pos))`.
pub fn residual_action(policy_action: &Action, pos: &[f64; 3], ctrl: &PController) -> Action {
    let p = p_control(pos, ctrl).delta();
    let u = policy_action.delta();
    Action::new([u[0] + p[0], u[1] + p[1], u[2] + p[2]])
}

/// P-controller that presses down and wiggles laterally while blocked.
#[derive(Clone, Debug)]
pub struct Demonstrator {
    pub ctrl: PController,
    pub jitter_std: f64,
    wiggle_phase: usize,
}

impl Demonstrator {
    pub fn new(ctrl: PController, jitter_std: f64) -> Self {
        Self {
            ctrl,
            jitter_std: jitter_std.max(0.0),
            wiggle_phase: 0,
        }
    }

    pub fn act<R: Rng + ?Sized>(&mut self, state: &EnvState, rng: &mut R) -> Action {
        let mut u = self.ctrl.raw(&state.pos);
        if state.f_z > DEMO_FORCE_THRESHOLD {
            const PATTERN: [[f64; 2]; 4] = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
            let w = PATTERN[self.wiggle_phase % PATTERN.len()];
            self.wiggle_phase += 1;
            u[0] += w[0] * DEMO_WIGGLE;
            u[1] += w[1] * DEMO_WIGGLE;
            u[2] = -A_MAX;
        }
        if self.jitter_std > 0.0 {
            let n = Normal::new(0.0, self.jitter_std).expect("finite std");
            for v in &mut u {
                *v += n.sample(rng);
            }
        }
        Action::new(u)
    }
}

/// Runs the jitter-free demonstrator for the full horizon. Returns the
/// terminal state and whether it is inserted.
pub fn scripted_insertion(config: &EnvConfig) -> Result<(EnvState, bool)> {
    let mut env = InsertionEnv::new(config.clone())?;
    let mut demo = Demonstrator::new(PController::for_config(config), 0.0);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut state = env.state().clone();
    while !env.is_done() {
        let a = demo.act(&state, &mut rng);
        state = env.step(a)?.0;
    }
    let inserted = state.inserted;
    Ok((state, inserted))
}

/// One demonstration episode on `task`, recording executed actions. Retries
/// with fresh environment seeds until an episode ends inserted.
pub fn scripted_demo<R: Rng + ?Sized>(task: &Task, jitter_std: f64, rng: &mut R) -> Result<Vec<Transition>> {
    for _ in 0..DEMO_RETRIES {
        let mut cfg = task.spec.env.clone();
        cfg.rng_seed = rng.next_u64();
        let mut env = InsertionEnv::new(cfg)?;
        let mut demo = Demonstrator::new(PController::for_config(env.config()), jitter_std);
        let mut state = env.state().clone();
        let mut obs = task.observe(&state, env.config());
        let mut out = Vec::with_capacity(env.config().horizon);
        while !env.is_done() {
            let a = demo.act(&state, rng);
            let (next, info) = env.step(a)?;
            let (next_obs, reward) = task.observe_and_reward(&next, env.config())?;
            out.push(Transition {
                obs,
                action: a.delta(),
                reward,
                next_obs: next_obs.clone(),
                done: info.done,
            });
            obs = next_obs;
            state = next;
        }
        if state.inserted {
            return Ok(out);
        }
    }
    Err(Error::DemoFailed { attempts: DEMO_RETRIES })
}
