//! Quasi-static connector-insertion plant.
//!
//! The plug tip is a point; the socket is a square channel of half-width
//! `clearance` centred on the goal's lateral coordinates, opening at
//! `surface_height` and bottoming out at the goal height. Commands are
//! relative Cartesian displacements. An attempted motion that would penetrate
//! the face plate or the channel floor is projected back onto the feasible
//! set and the blocked vertical displacement is read out as a penalty force
//! `wall_stiffness × blocked`. Inside the channel a constant resistance
//! absorbs the first `resistance_force / wall_stiffness` metres of every
//! downward command.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{render, Frame};

/// Per-axis bound on the commanded displacement (m).
pub const A_MAX: f64 = 0.005;
/// Control period (s); 10 Hz.
pub const CONTROL_PERIOD_S: f64 = 0.1;
pub const DEFAULT_HORIZON: usize = 50;
pub const DEFAULT_RESET_HEIGHT: f64 = 0.05;
pub const DEFAULT_ACTUATOR_NOISE_STD: f64 = 1e-4;
pub const DEFAULT_SENSOR_BIAS_RANGE: f64 = 2.0;
/// Depth of the seated goal point below the contact depth (m).
pub const SEAT_TRAVEL: f64 = 0.0049;
/// Slack used by the non-penetration checks.
pub const PENETRATION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConnectorKind {
    UsbLike,
    DSubLike,
    ModelELike,
}

impl ConnectorKind {
    pub const ALL: [ConnectorKind; 3] = [Self::UsbLike, Self::DSubLike, Self::ModelELike];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::UsbLike => "usb",
            Self::DSubLike => "dsub",
            Self::ModelELike => "model_e",
        }
    }
}

impl std::str::FromStr for ConnectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "usb" | "usblike" => Ok(Self::UsbLike),
            "dsub" | "dsublike" => Ok(Self::DSubLike),
            "modele" | "modelelike" => Ok(Self::ModelELike),
            _ => Err(Error::InvalidConfig(format!("unknown connector {s:?}"))),
        }
    }
}

/// Geometry and friction of one insertion task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectorProfile {
    pub name: ConnectorKind,
    /// Half-width slack between plug and socket opening (m).
    pub clearance: f64,
    /// Travel below the surface at which the connection registers (m).
    pub socket_depth: f64,
    /// Resistance opposing descent inside the channel (N).
    pub resistance_force: f64,
    /// Penalty stiffness for blocked motion (N/m).
    pub wall_stiffness: f64,
    /// Height of the socket face (m).
    pub surface_height: f64,
}

impl ConnectorProfile {
    pub fn preset(kind: ConnectorKind) -> Self {
        let (clearance, resistance_force) = match kind {
            ConnectorKind::UsbLike => (1.0e-3, 3.0),
            ConnectorKind::DSubLike => (0.6e-3, 5.0),
            ConnectorKind::ModelELike => (0.4e-3, 8.0),
        };
        Self {
            name: kind,
            clearance,
            socket_depth: 0.010,
            resistance_force,
            wall_stiffness: 5000.0,
            surface_height: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.clearance > 0.0
            && self.socket_depth > 0.0
            && self.resistance_force >= 0.0
            && self.wall_stiffness > 0.0
            && self.surface_height.is_finite();
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid connector profile {self:?}")));
        }
        Ok(())
    }

    /// Downward command absorbed by channel resistance on every step (m).
    pub fn resistance_travel(&self) -> f64 {
        self.resistance_force / self.wall_stiffness
    }
}

/// Relative end-effector displacement, clamped per axis to `±A_MAX`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    delta: [f64; 3],
}

impl Action {
    /// Clamps each component; NaN maps to zero.
    pub fn new(delta: [f64; 3]) -> Self {
        Self {
            delta: delta.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-A_MAX, A_MAX) }),
        }
    }

    pub fn zero() -> Self {
        Self { delta: [0.0; 3] }
    }

    pub fn delta(&self) -> [f64; 3] {
        self.delta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Plug tip position (m).
    pub pos: [f64; 3],
    /// Calibrated vertical force (N).
    pub f_z: f64,
    pub inserted: bool,
    pub step_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub profile: ConnectorProfile,
    /// True socket location: lateral centre of the channel, seated height.
    pub goal: [f64; 3],
    /// Goal handed to controllers and rewards; may be perturbed.
    pub goal_estimate: [f64; 3],
    pub horizon: usize,
    pub reset_height: f64,
    pub actuator_noise_std: f64,
    pub sensor_bias_range: f64,
    pub rng_seed: u64,
}

impl EnvConfig {
    /// Defaults for `kind`: seated goal below the contact depth, perfect
    /// estimate, noise and bias on.
    pub fn new(kind: ConnectorKind) -> Self {
        let profile = ConnectorProfile::preset(kind);
        let goal = [0.0, 0.0, profile.surface_height - profile.socket_depth - SEAT_TRAVEL];
        Self {
            profile,
            goal,
            goal_estimate: goal,
            horizon: DEFAULT_HORIZON,
            reset_height: DEFAULT_RESET_HEIGHT,
            actuator_noise_std: DEFAULT_ACTUATOR_NOISE_STD,
            sensor_bias_range: DEFAULT_SENSOR_BIAS_RANGE,
            rng_seed: 0,
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.actuator_noise_std = 0.0;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    /// Shifts the goal estimate away from the true goal.
    pub fn with_estimate_offset(mut self, offset: [f64; 3]) -> Self {
        for i in 0..3 {
            self.goal_estimate[i] = self.goal[i] + offset[i];
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        let finite = self.goal.iter().chain(&self.goal_estimate).all(|v| v.is_finite());
        if !finite
            || self.horizon < 1
            || !(self.reset_height >= 0.0)
            || !(self.actuator_noise_std >= 0.0)
            || !(self.sensor_bias_range >= 0.0)
        {
            return Err(Error::InvalidConfig(format!("invalid env config {self:?}")));
        }
        Ok(())
    }

    pub fn lateral_offset(&self, pos: &[f64; 3]) -> f64 {
        (pos[0] - self.goal[0]).abs().max((pos[1] - self.goal[1]).abs())
    }

    pub fn floor_height(&self) -> f64 {
        self.goal[2].min(self.profile.surface_height)
    }

    /// Whether `pos` lies in the feasible set, within `tol`.
    pub fn is_feasible(&self, pos: &[f64; 3], tol: f64) -> bool {
        let s = self.profile.surface_height;
        if pos[2] >= s - tol {
            return true;
        }
        self.lateral_offset(pos) <= self.profile.clearance + tol && pos[2] >= self.floor_height() - tol
    }

    pub fn is_inserted(&self, pos: &[f64; 3]) -> bool {
        self.profile.surface_height - pos[2] >= self.profile.socket_depth
            && self.lateral_offset(pos) <= self.profile.clearance
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Contact {
    Free,
    FacePlate,
    Channel,
    Floor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Uncalibrated sensor reading (includes the per-rollout bias).
    pub raw_f_z: f64,
    /// The displacement actually attempted, after clamping and noise.
    pub attempted: [f64; 3],
    pub contact: Contact,
    pub done: bool,
}

/// Result of resolving one attempted motion against the socket.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolved {
    pub pos: [f64; 3],
    /// Blocked vertical displacement (m), always ≥ 0.
    pub blocked: f64,
    pub contact: Contact,
}

/// Projects the motion `from → from + delta` onto the feasible set.
pub fn resolve_motion(config: &EnvConfig, from: &[f64; 3], delta: &[f64; 3]) -> Resolved {
    let p = &config.profile;
    let s = p.surface_height;
    let floor = config.floor_height();
    let c = p.clearance;
    let g = config.goal;
    let target = [from[0] + delta[0], from[1] + delta[1], from[2] + delta[2]];
    let inside = |x: f64, y: f64| (x - g[0]).abs() <= c && (y - g[1]).abs() <= c;

    if target[2] >= s {
        return Resolved {
            pos: target,
            blocked: 0.0,
            contact: Contact::Free,
        };
    }

    // Descent below the face: entering from above, or already in the channel.
    let (x, y, start_z, contact_if_blocked) = if from[2] >= s {
        if !inside(target[0], target[1]) || floor >= s {
            return Resolved {
                pos: [target[0], target[1], s],
                blocked: s - target[2],
                contact: Contact::FacePlate,
            };
        }
        (target[0], target[1], s, Contact::Channel)
    } else {
        let x = target[0].clamp(g[0] - c, g[0] + c);
        let y = target[1].clamp(g[1] - c, g[1] + c);
        if target[2] >= from[2] {
            return Resolved {
                pos: [x, y, target[2]],
                blocked: 0.0,
                contact: Contact::Channel,
            };
        }
        (x, y, from[2], Contact::Channel)
    };

    let commanded = start_z - target[2];
    let advance = (commanded - p.resistance_travel()).max(0.0);
    let mut z = start_z - advance;
    let mut contact = contact_if_blocked;
    if z <= floor {
        z = floor;
        contact = Contact::Floor;
    }
    Resolved {
        pos: [x, y, z],
        blocked: z - target[2],
        contact,
    }
}

/// One simulated environment instance; owns its RNG and sensor bias.
#[derive(Clone, Debug)]
pub struct InsertionEnv {
    config: EnvConfig,
    state: EnvState,
    rng: ChaCha8Rng,
    bias: f64,
    start_jitter_std: f64,
}

impl InsertionEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let state = EnvState {
            pos: config.goal,
            f_z: 0.0,
            inserted: false,
            step_index: 0,
        };
        let mut env = Self {
            config,
            state,
            rng,
            bias: 0.0,
            start_jitter_std: 0.0,
        };
        env.reset();
        Ok(env)
    }

    /// Gaussian jitter (m, per axis) added to the start position on reset.
    pub fn set_start_jitter(&mut self, std: f64) {
        self.start_jitter_std = std.max(0.0);
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn sensor_bias(&self) -> f64 {
        self.bias
    }

    /// Moves the plug `reset_height` above the goal, draws a fresh sensor bias
    /// and calibrates it away.
    pub fn reset(&mut self) -> EnvState {
        let cfg = &self.config;
        let mut pos = cfg.goal;
        pos[2] += cfg.reset_height;
        if self.start_jitter_std > 0.0 {
            let n = Normal::new(0.0, self.start_jitter_std).expect("finite std");
            for p in &mut pos {
                *p += n.sample(&mut self.rng);
            }
            pos[2] = pos[2].max(cfg.profile.surface_height);
        }
        let r = cfg.sensor_bias_range;
        self.bias = if r > 0.0 { self.rng.random_range(-r..=r) } else { 0.0 };
        let raw = self.bias;
        self.state = EnvState {
            pos,
            f_z: raw - self.bias,
            inserted: cfg.is_inserted(&pos),
            step_index: 0,
        };
        self.state.clone()
    }

    /// Starts a new episode with a new RNG stream.
    pub fn reset_with_seed(&mut self, seed: u64) -> EnvState {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset()
    }

    pub fn is_done(&self) -> bool {
        self.state.step_index >= self.config.horizon
    }

    pub fn step(&mut self, action: Action) -> Result<(EnvState, StepInfo)> {
        if self.is_done() {
            return Err(Error::Terminated {
                step: self.state.step_index,
                horizon: self.config.horizon,
            });
        }
        let mut delta = action.delta();
        let std = self.config.actuator_noise_std;
        if std > 0.0 {
            let n = Normal::new(0.0, std).expect("finite std");
            for d in &mut delta {
                *d += n.sample(&mut self.rng);
            }
        }
        let resolved = resolve_motion(&self.config, &self.state.pos, &delta);
        let raw = self.config.profile.wall_stiffness * resolved.blocked + self.bias;
        self.state = EnvState {
            pos: resolved.pos,
            f_z: raw - self.bias,
            inserted: self.config.is_inserted(&resolved.pos),
            step_index: self.state.step_index + 1,
        };
        let info = StepInfo {
            raw_f_z: raw,
            attempted: delta,
            contact: resolved.contact,
            done: self.is_done(),
        };
        Ok((self.state.clone(), info))
    }

    pub fn observe(&self, mode: ObservationMode) -> Observation {
        observe(&self.state, &self.config, mode)
    }
}

/// Fresh environment for `config`, returning its initial state.
pub fn reset(config: &EnvConfig) -> Result<(InsertionEnv, EnvState)> {
    let env = InsertionEnv::new(config.clone())?;
    let s = env.state().clone();
    Ok((env, s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    StateVector,
    Image,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    /// `(pos − goal_estimate, f_z)`.
    State([f64; 4]),
    Image(Frame),
}

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Observation::State(v) => v,
            Observation::Image(f) => f.pixels(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.as_slice().to_vec()
    }
}

pub fn observe(state: &EnvState, config: &EnvConfig, mode: ObservationMode) -> Observation {
    match mode {
        ObservationMode::StateVector => {
            let e = config.goal_estimate;
            Observation::State([state.pos[0] - e[0], state.pos[1] - e[1], state.pos[2] - e[2], state.f_z])
        }
        ObservationMode::Image => Observation::Image(render(state, config)),
    }
}
