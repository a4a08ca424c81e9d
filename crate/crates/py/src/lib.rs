use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use resinsert::agents::{ActMode, Agent as CoreAgent, Algo};
use resinsert::bench::{self, Controller, ExperimentSpec};
use resinsert::control::{self, PController};
use resinsert::persist;
use resinsert::render::{self, Frame};
use resinsert::rewards::{self, DenseRewardParams, RewardMode};
use resinsert::sim::{self, Action, ConnectorKind, EnvConfig, EnvState, InsertionEnv, ObservationMode};

create_exception!(resinsert_py, ResinsertError, PyException);

fn err(e: resinsert::Error) -> PyErr {
    ResinsertError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| ResinsertError::new_err(e.to_string()))
}

fn to_py_json(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| ResinsertError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn spec_from_json(spec_json: &str) -> PyResult<ExperimentSpec> {
    let spec: ExperimentSpec = serde_json::from_str(spec_json).map_err(|e| ResinsertError::new_err(e.to_string()))?;
    spec.validate_for_training().map_err(err)?;
    Ok(spec)
}

fn state_dict<'py>(py: Python<'py>, s: &EnvState) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("pos", s.pos.to_vec())?;
    d.set_item("f_z", s.f_z)?;
    d.set_item("inserted", s.inserted)?;
    d.set_item("step_index", s.step_index)?;
    Ok(d)
}

/// Simulated insertion episode.
#[pyclass(module = "resinsert_py")]
struct Env {
    inner: InsertionEnv,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (profile = "UsbLike", seed = 0, estimate_offset = (0.0, 0.0, 0.0), noiseless = false))]
    fn new(profile: &str, seed: u64, estimate_offset: (f64, f64, f64), noiseless: bool) -> PyResult<Self> {
        let kind: ConnectorKind = parse(profile)?;
        let mut cfg = EnvConfig::new(kind).with_seed(seed).with_estimate_offset([
            estimate_offset.0,
            estimate_offset.1,
            estimate_offset.2,
        ]);
        if noiseless {
            cfg = cfg.noiseless();
        }
        Ok(Self {
            inner: InsertionEnv::new(cfg).map_err(err)?,
        })
    }

    #[pyo3(signature = (seed = None))]
    fn reset<'py>(&mut self, py: Python<'py>, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
        let s = match seed {
            Some(s) => self.inner.reset_with_seed(s),
            None => self.inner.reset(),
        };
        state_dict(py, &s)
    }

    fn state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        state_dict(py, self.inner.state())
    }

    /// Applies a displacement command (m); returns `(state, done)`.
    fn step<'py>(&mut self, py: Python<'py>, action: (f64, f64, f64)) -> PyResult<(Bound<'py, PyDict>, bool)> {
        let (s, info) = self
            .inner
            .step(Action::new([action.0, action.1, action.2]))
            .map_err(err)?;
        Ok((state_dict(py, &s)?, info.done))
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }

    #[getter]
    fn goal(&self) -> Vec<f64> {
        self.inner.config().goal.to_vec()
    }

    #[getter]
    fn goal_estimate(&self) -> Vec<f64> {
        self.inner.config().goal_estimate.to_vec()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.config().horizon
    }

    /// `"state"` gives the 4-vector, `"image"` the flattened 32×32 frame.
    #[pyo3(signature = (mode = "state"))]
    fn observe(&self, mode: &str) -> PyResult<Vec<f64>> {
        let m = match mode {
            "state" => ObservationMode::StateVector,
            "image" => ObservationMode::Image,
            other => return Err(ResinsertError::new_err(format!("unknown observation mode {other:?}"))),
        };
        Ok(self.inner.observe(m).to_vec())
    }

    fn render(&self) -> Vec<f64> {
        render::render(self.inner.state(), self.inner.config())
            .pixels()
            .to_vec()
    }

    /// P-controller action for the current state.
    fn p_action(&self) -> Vec<f64> {
        let ctrl = PController::for_config(self.inner.config());
        control::p_control(&self.inner.state().pos, &ctrl).delta().to_vec()
    }
}

/// A SAC or TD3 agent configured for one task.
#[pyclass(module = "resinsert_py")]
struct Agent {
    inner: CoreAgent,
}

#[pymethods]
impl Agent {
    #[new]
    #[pyo3(signature = (algo = "SAC", reward_mode = "dense", seed = 0))]
    fn new(algo: &str, reward_mode: &str, seed: u64) -> PyResult<Self> {
        let algo: Algo = parse(algo)?;
        let mode: RewardMode = parse(reward_mode)?;
        let spec = ExperimentSpec::new(
            bench::Method::PureRL,
            algo,
            mode,
            ConnectorKind::UsbLike,
            bench::Perturbation::Perfect,
        );
        let task = spec.task().map_err(err)?;
        let inner = CoreAgent::new(algo, spec.agent_config(&task, seed)).map_err(err)?;
        Ok(Self { inner })
    }

    /// Loads the agent of a saved run directory.
    #[staticmethod]
    fn load(run_dir: PathBuf) -> PyResult<Self> {
        let run = persist::load_run(&run_dir, None).map_err(err)?;
        let inner = run
            .agent
            .ok_or_else(|| ResinsertError::new_err("run has no agent checkpoints"))?;
        Ok(Self { inner })
    }

    #[getter]
    fn algo(&self) -> &'static str {
        self.inner.algo().as_str()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.config().obs_dim
    }

    #[getter]
    fn temperature(&self) -> Option<f64> {
        self.inner.temperature()
    }

    #[pyo3(signature = (obs, deterministic = true))]
    fn select_action(&mut self, obs: Vec<f64>, deterministic: bool) -> PyResult<Vec<f64>> {
        let mode = if deterministic { ActMode::Eval } else { ActMode::Train };
        Ok(self.inner.select_action(&obs, mode).map_err(err)?.delta().to_vec())
    }

    fn parameter_count(&self) -> usize {
        self.inner.networks().iter().map(|(_, p)| p.len()).sum()
    }
}

#[pyfunction]
fn p_control(pos: (f64, f64, f64), goal_estimate: (f64, f64, f64)) -> Vec<f64> {
    let ctrl = PController::new([goal_estimate.0, goal_estimate.1, goal_estimate.2]);
    control::p_control(&[pos.0, pos.1, pos.2], &ctrl).delta().to_vec()
}

#[pyfunction]
fn residual_action(policy_action: (f64, f64, f64), pos: (f64, f64, f64), goal_estimate: (f64, f64, f64)) -> Vec<f64> {
    let ctrl = PController::new([goal_estimate.0, goal_estimate.1, goal_estimate.2]);
    let u = Action::new([policy_action.0, policy_action.1, policy_action.2]);
    control::residual_action(&u, &[pos.0, pos.1, pos.2], &ctrl)
        .delta()
        .to_vec()
}

#[pyfunction]
#[pyo3(signature = (pos, goal_estimate, f_z = 0.0, inserted = false))]
fn dense_reward(pos: (f64, f64, f64), goal_estimate: (f64, f64, f64), f_z: f64, inserted: bool) -> f64 {
    rewards::dense_reward(
        &[pos.0, pos.1, pos.2],
        f_z,
        inserted,
        &[goal_estimate.0, goal_estimate.1, goal_estimate.2],
        &DenseRewardParams::default(),
    )
}

#[pyfunction]
fn sparse_reward(inserted: bool) -> f64 {
    let s = EnvState {
        pos: [0.0; 3],
        f_z: 0.0,
        inserted,
        step_index: 0,
    };
    rewards::sparse_reward(&s)
}

#[pyfunction]
fn image_reward(frame: Vec<f64>, goal_frame: Vec<f64>) -> PyResult<f64> {
    let a = Frame::from_pixels(frame).map_err(err)?;
    let b = Frame::from_pixels(goal_frame).map_err(err)?;
    rewards::image_reward(&a, &b).map_err(err)
}

/// Goal image of the noiseless scripted insertion for `profile`.
#[pyfunction]
#[pyo3(signature = (profile = "UsbLike"))]
fn goal_image(profile: &str) -> PyResult<Vec<f64>> {
    let cfg = EnvConfig::new(parse(profile)?);
    Ok(render::capture_goal_image(&cfg).map_err(err)?.pixels().to_vec())
}

/// Trains every seed of a JSON experiment spec; returns per-seed summaries.
#[pyfunction]
#[pyo3(signature = (spec_json, out = None))]
fn train(py: Python<'_>, spec_json: &str, out: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let spec = spec_from_json(spec_json)?;
    let summaries = py
        .detach(|| -> resinsert::Result<Vec<serde_json::Value>> {
            let runs = bench::train(&spec, out.as_deref())?;
            let mut out = Vec::with_capacity(runs.len());
            for r in &runs {
                let report = bench::evaluate(
                    &r.controller,
                    &spec,
                    spec.options.eval_rollouts,
                    bench::eval_seed_for(r.seed),
                )?;
                out.push(serde_json::json!({
                    "seed": r.seed,
                    "first_success_episode": r.first_success_episode(),
                    "updates": r.updates,
                    "final_distance_m": r.rows.iter().map(|m| m.final_distance_m).collect::<Vec<_>>(),
                    "eval": report,
                }));
            }
            Ok(out)
        })
        .map_err(err)?;
    to_py_json(py, &summaries)
}

/// Evaluates a saved run, or the P-controller when `run_dir` is omitted.
#[pyfunction]
#[pyo3(signature = (spec_json, run_dir = None, rollouts = bench::DEFAULT_EVAL_ROLLOUTS))]
fn evaluate(py: Python<'_>, spec_json: &str, run_dir: Option<PathBuf>, rollouts: usize) -> PyResult<Py<PyAny>> {
    let spec = spec_from_json(spec_json)?;
    let report = py
        .detach(|| -> resinsert::Result<bench::EvalReport> {
            let controller = match run_dir {
                Some(dir) => match persist::load_run(&dir, None)?.agent {
                    Some(agent) => Controller::Agent {
                        agent,
                        residual: spec.method.is_residual(),
                    },
                    None => Controller::PController,
                },
                None => Controller::PController,
            };
            bench::evaluate(&controller, &spec, rollouts, bench::eval_seed_for(spec.seeds[0]))
        })
        .map_err(err)?;
    to_py_json(py, &report)
}

#[pymodule]
fn resinsert_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Env>()?;
    m.add_class::<Agent>()?;
    m.add_function(wrap_pyfunction!(p_control, m)?)?;
    m.add_function(wrap_pyfunction!(residual_action, m)?)?;
    m.add_function(wrap_pyfunction!(dense_reward, m)?)?;
    m.add_function(wrap_pyfunction!(sparse_reward, m)?)?;
    m.add_function(wrap_pyfunction!(image_reward, m)?)?;
    m.add_function(wrap_pyfunction!(goal_image, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("A_MAX", sim::A_MAX)?;
    m.add("ResinsertError", m.py().get_type::<ResinsertError>())?;
    Ok(())
}
