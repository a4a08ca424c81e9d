//! Experiment orchestration: training runs, success-rate evaluation,
//! result tables and learning-curve plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{ActMode, Agent, AgentConfig, Algo, ReplayBuffer, Transition, UpdateStats};
use crate::control::{residual_action, scripted_demo, PController};
use crate::error::{Error, Result};
use crate::persist::{read_metrics, save_run, MetricsRow, MetricsWriter};
use crate::rewards::RewardMode;
use crate::sim::{Action, ConnectorKind, EnvConfig, EnvState, InsertionEnv, ObservationMode};
use crate::task::{Task, TaskSpec};

pub const DEFAULT_EVAL_ROLLOUTS: usize = 25;
/// Half-width of the lateral goal-estimate perturbation (m).
pub const NOISY_OFFSET_MAX: f64 = 0.001;
/// A policy action counts as saturated when some axis reaches this fraction
/// of the bound.
pub const SATURATION_FRACTION: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    PureRL,
    ResidualRL,
    RLfD,
    PControllerOnly,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PureRL => "PureRL",
            Self::ResidualRL => "ResidualRL",
            Self::RLfD => "RLfD",
            Self::PControllerOnly => "PControllerOnly",
        }
    }

    pub fn is_residual(self) -> bool {
        self == Self::ResidualRL
    }

    /// Default training budget in episodes.
    pub fn default_episodes(self) -> usize {
        match self {
            Self::PureRL => 300,
            Self::ResidualRL | Self::RLfD => 150,
            Self::PControllerOnly => 1,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "purerl" | "pure" => Ok(Self::PureRL),
            "residualrl" | "residual" => Ok(Self::ResidualRL),
            "rlfd" | "lfd" => Ok(Self::RLfD),
            "pcontrolleronly" | "pcontroller" | "p" => Ok(Self::PControllerOnly),
            _ => Err(Error::InvalidConfig(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Perturbation {
    Perfect,
    Noisy1mm,
}

impl Perturbation {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Perfect => "Perfect",
            Self::Noisy1mm => "Noisy1mm",
        }
    }
}

impl std::str::FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "perfect" => Ok(Self::Perfect),
            "noisy1mm" | "noisy" => Ok(Self::Noisy1mm),
            _ => Err(Error::InvalidConfig(format!("unknown perturbation {s:?}"))),
        }
    }
}

/// Knobs beyond the experiment grid coordinates. `None` fields keep the
/// agent defaults for the observation type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// Store the executed composite action instead of the policy's own.
    pub store_executed_action: bool,
    /// Mark the horizon step as terminal for bootstrapping.
    pub terminal_on_timeout: bool,
    /// Environment steps before the first gradient update; defaults to the
    /// batch size.
    pub warmup_steps: Option<usize>,
    pub n_demos: usize,
    pub demo_jitter_std: f64,
    /// Under `Noisy1mm`, also perturb the goal estimate during training.
    pub train_under_perturbation: bool,
    pub eval_rollouts: usize,
    /// Skip all updates and act in eval mode.
    pub frozen: bool,
    /// Start from an all-zero actor.
    pub zero_actor_init: bool,
    pub hidden: Option<Vec<usize>>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub reward_scale: Option<f64>,
    pub init_temperature: Option<f64>,
    pub target_entropy: Option<f64>,
    pub exploration_noise_std: Option<f64>,
    pub bc_weight: Option<f64>,
    pub buffer_capacity: Option<usize>,
    pub actuator_noise_std: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            store_executed_action: false,
            terminal_on_timeout: false,
            warmup_steps: None,
            n_demos: 10,
            demo_jitter_std: 2e-4,
            train_under_perturbation: true,
            eval_rollouts: DEFAULT_EVAL_ROLLOUTS,
            frozen: false,
            zero_actor_init: false,
            hidden: None,
            batch_size: None,
            lr: None,
            reward_scale: None,
            init_temperature: None,
            target_entropy: None,
            exploration_noise_std: None,
            bc_weight: None,
            buffer_capacity: None,
            actuator_noise_std: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub method: Method,
    pub algo: Algo,
    pub reward_mode: RewardMode,
    pub profile: ConnectorKind,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub perturbation: Perturbation,
    #[serde(default)]
    pub options: TrainOptions,
}

impl ExperimentSpec {
    pub fn new(
        method: Method,
        algo: Algo,
        reward_mode: RewardMode,
        profile: ConnectorKind,
        perturbation: Perturbation,
    ) -> Self {
        Self {
            method,
            algo,
            reward_mode,
            profile,
            episodes: method.default_episodes(),
            seeds: vec![0, 1, 2],
            perturbation,
            options: TrainOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.method != Method::PControllerOnly && self.episodes < 1 {
            return Err(Error::InvalidConfig("episodes must be at least 1".into()));
        }
        self.validate_for_training()
    }

    /// Like [`validate`](Self::validate) but accepts zero episodes, which
    /// yields an untrained agent and a header-only metrics file.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.method == Method::RLfD && self.algo != Algo::Td3 {
            return Err(Error::InvalidConfig("RLfD uses TD3".into()));
        }
        if self.options.eval_rollouts == 0 {
            return Err(Error::InvalidConfig("eval_rollouts must be positive".into()));
        }
        Ok(())
    }

    /// Grid key; algorithm and reward mode collapse for the P-controller.
    pub fn cell_key(&self) -> String {
        if self.method == Method::PControllerOnly {
            format!(
                "{}_{}_{}",
                self.method.as_str(),
                self.profile.as_str(),
                self.perturbation.as_str()
            )
        } else {
            format!(
                "{}_{}_{}_{}_{}",
                self.method.as_str(),
                self.algo.as_str(),
                self.reward_mode.as_str(),
                self.profile.as_str(),
                self.perturbation.as_str()
            )
        }
    }

    pub fn base_env(&self) -> EnvConfig {
        let mut cfg = EnvConfig::new(self.profile);
        if let Some(std) = self.options.actuator_noise_std {
            cfg.actuator_noise_std = std;
        }
        cfg
    }

    pub fn task(&self) -> Result<Task> {
        Task::new(TaskSpec::new(self.base_env(), self.reward_mode))
    }

    pub fn agent_config(&self, task: &Task, seed: u64) -> AgentConfig {
        let o = &self.options;
        let mut cfg = match task.spec.observation {
            ObservationMode::StateVector => AgentConfig::for_state(),
            ObservationMode::Image => AgentConfig::for_image(),
        };
        cfg.seed = derive_seed(seed, TAG_AGENT, 0);
        if let Some(h) = &o.hidden {
            cfg.hidden = h.clone();
        }
        if let Some(v) = o.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = o.lr {
            cfg.lr = v;
        }
        if let Some(v) = o.reward_scale {
            cfg.reward_scale = v;
        }
        if let Some(v) = o.init_temperature {
            cfg.sac.init_temperature = v;
        }
        if let Some(v) = o.target_entropy {
            cfg.sac.target_entropy = v;
        }
        if let Some(v) = o.exploration_noise_std {
            cfg.td3.exploration_noise_std = v;
        }
        if let Some(v) = o.bc_weight {
            cfg.td3.bc_weight = v;
        }
        if let Some(v) = o.buffer_capacity {
            cfg.buffer_capacity = v;
        }
        cfg
    }
}

const TAG_AGENT: u64 = 1;
const TAG_TRAIN_ENV: u64 = 2;
const TAG_TRAIN_OFFSET: u64 = 3;
const TAG_DEMO: u64 = 4;
const TAG_EVAL: u64 = 5;

/// Independent sub-seed for `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.set_word_pos(u128::from(index) * 2);
    rng.random()
}

fn lateral_offset<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [
        rng.random_range(-NOISY_OFFSET_MAX..=NOISY_OFFSET_MAX),
        rng.random_range(-NOISY_OFFSET_MAX..=NOISY_OFFSET_MAX),
        0.0,
    ]
}

/// What acts in a rollout.
#[derive(Clone, Debug)]
pub enum Controller {
    PController,
    Agent { agent: Agent, residual: bool },
}

impl Controller {
    /// Policy action and executed action for the current step.
    fn act(&mut self, obs: &[f64], state: &EnvState, ctrl: &PController, mode: ActMode) -> Result<(Action, Action)> {
        match self {
            Controller::PController => {
                let a = crate::control::p_control(&state.pos, ctrl);
                Ok((a, a))
            }
            Controller::Agent { agent, residual } => {
                let u = agent.select_action(obs, mode)?;
                let exec = if *residual {
                    residual_action(&u, &state.pos, ctrl)
                } else {
                    u
                };
                Ok((u, exec))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub goal_offset: [f64; 3],
    pub inserted: bool,
    pub first_insert_step: Option<usize>,
    pub final_distance_m: f64,
    pub steps: usize,
    /// Steps whose policy action reached the saturation threshold on some axis.
    pub saturated_steps: usize,
    pub episode_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub positions: Vec<[f64; 3]>,
    pub policy_actions: Vec<[f64; 3]>,
    pub executed_actions: Vec<[f64; 3]>,
}

fn saturated(a: &Action) -> bool {
    a.delta()
        .iter()
        .any(|v| v.abs() >= SATURATION_FRACTION * crate::sim::A_MAX)
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Runs one eval-mode episode on `env_cfg`.
pub fn rollout(controller: &mut Controller, task: &Task, env_cfg: &EnvConfig) -> Result<(RolloutRecord, Trajectory)> {
    let mut env = InsertionEnv::new(env_cfg.clone())?;
    let ctrl = PController::for_config(env_cfg);
    let mut state = env.state().clone();
    let mut obs = task.observe(&state, env.config());
    let mut traj = Trajectory {
        positions: vec![state.pos],
        policy_actions: Vec::new(),
        executed_actions: Vec::new(),
    };
    let mut first = None;
    let mut sat = 0;
    let mut ret = 0.0;
    while !env.is_done() {
        let (u, exec) = controller.act(&obs, &state, &ctrl, ActMode::Eval)?;
        if saturated(&u) {
            sat += 1;
        }
        let (next, _) = env.step(exec)?;
        let (next_obs, r) = task.observe_and_reward(&next, env.config())?;
        ret += r;
        if next.inserted && first.is_none() {
            first = Some(next.step_index);
        }
        traj.positions.push(next.pos);
        traj.policy_actions.push(u.delta());
        traj.executed_actions.push(exec.delta());
        state = next;
        obs = next_obs;
    }
    let record = RolloutRecord {
        goal_offset: std::array::from_fn(|i| env_cfg.goal_estimate[i] - env_cfg.goal[i]),
        inserted: first.is_some(),
        first_insert_step: first,
        final_distance_m: distance(&state.pos, &env_cfg.goal),
        steps: state.step_index,
        saturated_steps: sat,
        episode_return: ret,
    };
    Ok((record, traj))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub success_rate: f64,
    pub mean_final_distance_m: f64,
    /// Fraction of steps whose policy action was saturated.
    pub saturation_fraction: f64,
    pub rollouts: Vec<RolloutRecord>,
}

/// Eval-mode rollouts; `Noisy1mm` draws an independent lateral offset per
/// rollout. The controller is cloned, so its parameters are untouched.
pub fn evaluate(
    controller: &Controller,
    spec: &ExperimentSpec,
    n_rollouts: usize,
    eval_seed: u64,
) -> Result<EvalReport> {
    let task = spec.task()?;
    let mut c = controller.clone();
    let mut offsets = ChaCha8Rng::seed_from_u64(derive_seed(eval_seed, TAG_EVAL, u64::MAX));
    let mut rollouts = Vec::with_capacity(n_rollouts);
    for i in 0..n_rollouts {
        let mut cfg = spec.base_env().with_seed(derive_seed(eval_seed, TAG_EVAL, i as u64));
        if spec.perturbation == Perturbation::Noisy1mm {
            cfg = cfg.with_estimate_offset(lateral_offset(&mut offsets));
        }
        rollouts.push(rollout(&mut c, &task, &cfg)?.0);
    }
    let n = rollouts.len().max(1) as f64;
    let steps: usize = rollouts.iter().map(|r| r.steps).sum();
    Ok(EvalReport {
        success_rate: rollouts.iter().filter(|r| r.inserted).count() as f64 / n,
        mean_final_distance_m: rollouts.iter().map(|r| r.final_distance_m).sum::<f64>() / n,
        saturation_fraction: rollouts.iter().map(|r| r.saturated_steps).sum::<usize>() as f64 / steps.max(1) as f64,
        rollouts,
    })
}

/// Environment of training episode `episode`; a function of its arguments
/// alone.
pub fn training_env(spec: &ExperimentSpec, seed: u64, episode: usize) -> EnvConfig {
    let cfg = spec
        .base_env()
        .with_seed(derive_seed(seed, TAG_TRAIN_ENV, episode as u64));
    if spec.perturbation == Perturbation::Noisy1mm && spec.options.train_under_perturbation {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_TRAIN_OFFSET, episode as u64));
        cfg.with_estimate_offset(lateral_offset(&mut rng))
    } else {
        cfg
    }
}

#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub seed: u64,
    pub controller: Controller,
    pub rows: Vec<MetricsRow>,
    pub episode_success: Vec<bool>,
    pub updates: u64,
}

impl TrainedRun {
    /// 1-based index of the first training episode that inserted.
    pub fn first_success_episode(&self) -> Option<usize> {
        self.episode_success.iter().position(|&s| s).map(|i| i + 1)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Training loop for one seed. Rows are appended to `metrics` as each
/// episode finishes, so an aborted run keeps its completed episodes.
pub fn train_seed(spec: &ExperimentSpec, seed: u64, mut metrics: Option<&mut MetricsWriter>) -> Result<TrainedRun> {
    spec.validate_for_training()?;
    if spec.method == Method::PControllerOnly {
        return Ok(TrainedRun {
            seed,
            controller: Controller::PController,
            rows: Vec::new(),
            episode_success: Vec::new(),
            updates: 0,
        });
    }
    let task = spec.task()?;
    let cfg = spec.agent_config(&task, seed);
    let mut agent = Agent::new(spec.algo, cfg.clone())?;
    if spec.options.zero_actor_init {
        agent.actor_mut().values.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut demos = ReplayBuffer::new(cfg.buffer_capacity)?;
    if spec.method == Method::RLfD {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_DEMO, 0));
        for _ in 0..spec.options.n_demos {
            for t in scripted_demo(&task, spec.options.demo_jitter_std, &mut rng)? {
                demos.push(t.clone());
                buffer.push(t);
            }
        }
    }
    let warmup = spec.options.warmup_steps.unwrap_or(cfg.batch_size);
    let residual = spec.method.is_residual();
    let mode = if spec.options.frozen {
        ActMode::Eval
    } else {
        ActMode::Train
    };
    let mut controller = Controller::Agent { agent, residual };
    let mut rows = Vec::with_capacity(spec.episodes);
    let mut episode_success = Vec::with_capacity(spec.episodes);
    let mut step = 0u64;
    let mut updates = 0u64;
    for ep in 0..spec.episodes {
        let mut env = InsertionEnv::new(training_env(spec, seed, ep))?;
        let ctrl = PController::for_config(env.config());
        let mut state = env.state().clone();
        let mut obs = task.observe(&state, env.config());
        let mut ret = 0.0;
        let mut inserted = false;
        let (mut critic, mut actor, mut temp) = (Vec::new(), Vec::new(), None);
        while !env.is_done() {
            let (u, exec) = controller.act(&obs, &state, &ctrl, mode)?;
            let (next, info) = env.step(exec)?;
            let (next_obs, r) = task.observe_and_reward(&next, env.config())?;
            step += 1;
            ret += r;
            inserted |= next.inserted;
            let stored = if spec.options.store_executed_action { exec } else { u };
            buffer.push(Transition {
                obs,
                action: stored.delta(),
                reward: r,
                next_obs: next_obs.clone(),
                done: info.done && spec.options.terminal_on_timeout,
            });
            if !spec.options.frozen && buffer.len() >= warmup {
                let Controller::Agent { agent, .. } = &mut controller else {
                    unreachable!()
                };
                let demo_arg = (spec.method == Method::RLfD).then(|| (&demos, agent.config().td3.bc_weight));
                let stats: UpdateStats = agent.update(&buffer, demo_arg)?;
                updates += 1;
                critic.push(stats.critic_loss);
                if let Some(a) = stats.actor_loss {
                    actor.push(a);
                }
                temp = stats.temperature.or(temp);
            }
            state = next;
            obs = next_obs;
        }
        let row = MetricsRow {
            step,
            episode: ep as u64,
            episode_return: ret,
            final_distance_m: distance(&state.pos, &env.config().goal),
            critic_loss: mean(&critic),
            actor_loss: mean(&actor),
            temperature: temp,
        };
        if let Some(w) = metrics.as_deref_mut() {
            w.append(&row)?;
        }
        rows.push(row);
        episode_success.push(inserted);
    }
    Ok(TrainedRun {
        seed,
        controller,
        rows,
        episode_success,
        updates,
    })
}

/// Trains every seed of `spec`, writing `seed_<s>/metrics.csv` and a run
/// manifest under `out` when given.
pub fn train(spec: &ExperimentSpec, out: Option<&Path>) -> Result<Vec<TrainedRun>> {
    spec.validate_for_training()?;
    let mut runs = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let run = match out {
            Some(dir) => {
                let run_dir = dir.join(format!("seed_{seed}"));
                let mut w = MetricsWriter::create(run_dir.join("metrics.csv"))?;
                let run = train_seed(spec, seed, Some(&mut w))?;
                let agent = match &run.controller {
                    Controller::Agent { agent, .. } => Some(agent),
                    Controller::PController => None,
                };
                save_run(&run_dir, &serde_json::to_value(spec)?, seed, agent, run.updates)?;
                run
            }
            None => train_seed(spec, seed, None)?,
        };
        runs.push(run);
    }
    Ok(runs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub key: String,
    pub method: Method,
    pub algo: Algo,
    pub reward_mode: RewardMode,
    pub profile: ConnectorKind,
    pub perturbation: Perturbation,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    /// Mean over seeds.
    pub success_rate: f64,
    pub per_seed_success: Vec<f64>,
    pub mean_final_distance_m: f64,
    pub saturation_fraction: f64,
    /// Per seed; `None` when no training episode inserted.
    pub first_success_episode: Vec<Option<usize>>,
    pub error: Option<String>,
}

pub struct CellResult {
    pub row: TableRow,
    pub runs: Vec<TrainedRun>,
    pub reports: Vec<EvalReport>,
}

/// Seed used for the evaluation rollouts of a training seed; shared across
/// methods so that cells see the same perturbations.
pub fn eval_seed_for(seed: u64) -> u64 {
    derive_seed(seed, TAG_EVAL, 0)
}

pub fn run_cell(spec: &ExperimentSpec, out: Option<&Path>) -> CellResult {
    let mut row = TableRow {
        key: spec.cell_key(),
        method: spec.method,
        algo: spec.algo,
        reward_mode: spec.reward_mode,
        profile: spec.profile,
        perturbation: spec.perturbation,
        episodes: spec.episodes,
        seeds: spec.seeds.clone(),
        success_rate: f64::NAN,
        per_seed_success: Vec::new(),
        mean_final_distance_m: f64::NAN,
        saturation_fraction: f64::NAN,
        first_success_episode: Vec::new(),
        error: None,
    };
    let result = (|| -> Result<(Vec<TrainedRun>, Vec<EvalReport>)> {
        spec.validate()?;
        let runs = train(spec, out)?;
        let mut reports = Vec::with_capacity(runs.len());
        for run in &runs {
            reports.push(evaluate(
                &run.controller,
                spec,
                spec.options.eval_rollouts,
                eval_seed_for(run.seed),
            )?);
        }
        Ok((runs, reports))
    })();
    match result {
        Ok((runs, reports)) => {
            let n = reports.len() as f64;
            row.per_seed_success = reports.iter().map(|r| r.success_rate).collect();
            row.success_rate = row.per_seed_success.iter().sum::<f64>() / n;
            row.mean_final_distance_m = reports.iter().map(|r| r.mean_final_distance_m).sum::<f64>() / n;
            row.saturation_fraction = reports.iter().map(|r| r.saturation_fraction).sum::<f64>() / n;
            row.first_success_episode = runs.iter().map(|r| r.first_success_episode()).collect();
            CellResult { row, runs, reports }
        }
        Err(e) => {
            row.error = Some(e.to_string());
            CellResult {
                row,
                runs: Vec::new(),
                reports: Vec::new(),
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<TableRow>,
}

impl ResultsTable {
    pub fn get(&self, key: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.key == key)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "algo",
            "reward_mode",
            "profile",
            "perturbation",
            "episodes",
            "n_seeds",
            "success_rate",
            "mean_final_distance_m",
            "saturation_fraction",
            "error",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.method.as_str().to_string(),
                r.algo.as_str().to_string(),
                r.reward_mode.as_str().to_string(),
                r.profile.as_str().to_string(),
                r.perturbation.as_str().to_string(),
                r.episodes.to_string(),
                r.seeds.len().to_string(),
                r.success_rate.to_string(),
                r.mean_final_distance_m.to_string(),
                r.saturation_fraction.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Trains and evaluates every cell. Failed cells carry their error and the
/// grid continues. With `out`, writes `table.csv`, `table.json`, per-cell run
/// directories under `runs/` and learning curves under `curves/`.
pub fn run_grid(
    specs: &[ExperimentSpec],
    out: Option<&Path>,
    parallel: bool,
) -> Result<(ResultsTable, Vec<CellResult>)> {
    if specs.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    let mut keys: Vec<String> = specs.iter().map(|s| s.cell_key()).collect();
    keys.sort();
    keys.dedup();
    if keys.len() != specs.len() {
        return Err(Error::InvalidConfig("duplicate grid cells".into()));
    }
    let cell_out = |s: &ExperimentSpec| out.map(|d| d.join("runs").join(s.cell_key()));
    let cells: Vec<CellResult> = if parallel {
        specs.par_iter().map(|s| run_cell(s, cell_out(s).as_deref())).collect()
    } else {
        specs.iter().map(|s| run_cell(s, cell_out(s).as_deref())).collect()
    };
    let table = ResultsTable {
        rows: cells.iter().map(|c| c.row.clone()).collect(),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir.join("curves"))?;
        fs::write(dir.join("table.csv"), table.to_csv()?)?;
        fs::write(dir.join("table.json"), serde_json::to_string_pretty(&table)? + "\n")?;
        for c in &cells {
            if c.runs.is_empty() || c.runs.iter().all(|r| r.rows.is_empty()) {
                continue;
            }
            let series: Vec<Vec<f64>> = c
                .runs
                .iter()
                .map(|r| r.rows.iter().map(|m| m.final_distance_m).collect())
                .collect();
            let band = CurveBand::from_series(&series)?;
            fs::write(
                dir.join("curves").join(format!("{}.svg", c.row.key)),
                band.to_svg(&c.row.key),
            )?;
        }
        fs::write(dir.join("curves").join("success.svg"), success_bars_svg(&table))?;
    }
    Ok((table, cells))
}

/// Mean and min/max envelope of per-seed series, truncated to the shortest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveBand {
    pub episodes: Vec<usize>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl CurveBand {
    pub fn from_series(series: &[Vec<f64>]) -> Result<Self> {
        let len = series.iter().map(|s| s.len()).min().unwrap_or(0);
        if series.is_empty() || len == 0 {
            return Err(Error::EmptyPlot("no episodes to plot".into()));
        }
        let mut band = Self {
            episodes: (0..len).collect(),
            mean: Vec::with_capacity(len),
            min: Vec::with_capacity(len),
            max: Vec::with_capacity(len),
        };
        for i in 0..len {
            let col: Vec<f64> = series.iter().map(|s| s[i]).collect();
            band.mean.push(col.iter().sum::<f64>() / col.len() as f64);
            band.min.push(col.iter().copied().fold(f64::INFINITY, f64::min));
            band.max.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        Ok(band)
    }

    /// Final distance (mm) against episode, mean line over a min/max band.
    pub fn to_svg(&self, title: &str) -> String {
        let (w, h, pad) = (640.0, 400.0, 50.0);
        let n = self.episodes.len();
        let ymax = self.max.iter().copied().fold(0.0f64, f64::max).max(1e-6) * 1000.0;
        let xs = |i: usize| pad + (w - 2.0 * pad) * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        let ys = |v: f64| h - pad - (h - 2.0 * pad) * (v * 1000.0 / ymax);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
            w / 2.0,
            xml_escape(title)
        );
        let mut band = String::new();
        for i in 0..n {
            let _ = write!(band, "{:.2},{:.2} ", xs(i), ys(self.max[i]));
        }
        for i in (0..n).rev() {
            let _ = write!(band, "{:.2},{:.2} ", xs(i), ys(self.min[i]));
        }
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##,
            band.trim_end()
        );
        let line: Vec<String> = (0..n)
            .map(|i| format!("{:.2},{:.2}", xs(i), ys(self.mean[i])))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="1.5"/>"##,
            line.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
            h - pad,
            w - pad
        );
        let _ = writeln!(
            s,
            r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
            h - pad
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">episode</text>"#,
            w / 2.0,
            h - 15.0
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" font-size="12" transform="rotate(-90 15 {0})" text-anchor="middle">final distance (mm)</text>"#,
            h / 2.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{ymax:.1}</text>"#,
            pad - 4.0,
            pad + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">0</text>"#,
            pad - 4.0,
            h - pad + 4.0
        );
        s.push_str("</svg>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn success_bars_svg(table: &ResultsTable) -> String {
    let n = table.rows.len().max(1);
    let (bar, gap, pad, h) = (24.0, 8.0, 40.0, 320.0);
    let w = pad * 2.0 + n as f64 * (bar + gap);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{}" viewBox="0 0 {w} {0}">"#,
        h + 200.0
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, r) in table.rows.iter().enumerate() {
        let rate = if r.success_rate.is_finite() {
            r.success_rate
        } else {
            0.0
        };
        let x = pad + i as f64 * (bar + gap);
        let bh = (h - pad) * rate;
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{:.1}" width="{bar}" height="{bh:.1}" fill="#3182bd"><title>{}: {rate}</title></rect>"##,
            h - bh,
            xml_escape(&r.key)
        );
        let _ = writeln!(
            s,
            r#"<text x="{0:.1}" y="{1}" font-size="9" transform="rotate(60 {0:.1} {1})">{2}</text>"#,
            x + 4.0,
            h + 10.0,
            xml_escape(&r.key)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{h}" x2="{}" y2="{h}" stroke="black"/>"#,
        w - pad
    );
    s.push_str("</svg>\n");
    s
}

/// Reads per-seed metrics CSVs and writes one learning-curve SVG to `out`.
pub fn plot(metrics: &[PathBuf], title: &str, out: &Path) -> Result<CurveBand> {
    if metrics.is_empty() {
        return Err(Error::EmptyPlot("no metrics files given".into()));
    }
    let mut series = Vec::with_capacity(metrics.len());
    for p in metrics {
        let rows = read_metrics(p)?;
        if rows.is_empty() {
            return Err(Error::EmptyPlot(p.display().to_string()));
        }
        series.push(rows.iter().map(|r| r.final_distance_m).collect::<Vec<_>>());
    }
    let band = CurveBand::from_series(&series)?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, band.to_svg(title))?;
    Ok(band)
}
