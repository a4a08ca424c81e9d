use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AgentConfig;
use crate::error::{Error, Result};
use crate::nn::{
    mlp_forward_batch, mlp_predict, Adam, AdamConfig, InputGrad, Matrix, NetParams, OutputActivation, PolicySpec,
};

/// Twin Q-networks with their Polyak-averaged targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwinCritics {
    pub q1: NetParams,
    pub q2: NetParams,
    pub q1_target: NetParams,
    pub q2_target: NetParams,
    pub opt1: Adam,
    pub opt2: Adam,
}

pub(crate) fn critic_spec(config: &AgentConfig) -> PolicySpec {
    PolicySpec::new(config.obs_dim + 3, &config.hidden, 1, OutputActivation::Linear)
}

pub(crate) fn adam_config(config: &AgentConfig) -> AdamConfig {
    AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    }
}

impl TwinCritics {
    pub fn new<R: Rng + ?Sized>(config: &AgentConfig, rng: &mut R) -> Result<Self> {
        let spec = critic_spec(config);
        let q1 = NetParams::init(spec.clone(), config.final_layer_init, rng)?;
        let q2 = NetParams::init(spec, config.final_layer_init, rng)?;
        let n = q1.len();
        Ok(Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            opt1: Adam::new(n, adam_config(config)),
            opt2: Adam::new(n, adam_config(config)),
        })
    }

    pub fn predict(net: &NetParams, obs: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
        Ok(mlp_predict(net, &obs.hcat(actions)?)?.into_vec())
    }

    /// Elementwise minimum of the target critics together with both values.
    pub fn target_values(&self, obs: &Matrix, actions: &Matrix) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let x = obs.hcat(actions)?;
        let a = mlp_predict(&self.q1_target, &x)?.into_vec();
        let b = mlp_predict(&self.q2_target, &x)?.into_vec();
        let m = a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect();
        Ok((m, a, b))
    }

    /// One MSE regression step of each critic toward `y`; returns the losses
    /// evaluated before the step.
    pub fn regress(&mut self, obs: &Matrix, actions: &Matrix, y: &[f64]) -> Result<(f64, f64)> {
        let x = obs.hcat(actions)?;
        let (l1, g1) = mse_grad(&self.q1, &x, y)?;
        let (l2, g2) = mse_grad(&self.q2, &x, y)?;
        if !l1.is_finite() || !l2.is_finite() {
            return Err(Error::NonFinite("critic loss"));
        }
        self.opt1.step(&mut self.q1.values, &g1)?;
        self.opt2.step(&mut self.q2.values, &g2)?;
        Ok((l1, l2))
    }

    pub fn soft_update(&mut self, tau: f64) {
        self.q1_target.soft_update_from(&self.q1, tau);
        self.q2_target.soft_update_from(&self.q2, tau);
    }
}

/// `mean((Q − y)²)` and its parameter gradient.
pub(crate) fn mse_grad(net: &NetParams, x: &Matrix, y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    let (q, tape) = mlp_forward_batch(net, x.clone())?;
    let mut g = Matrix::zeros(n, 1);
    let mut loss = 0.0;
    for i in 0..n {
        let d = q.get(i, 0) - y[i];
        loss += d * d;
        g.set(i, 0, 2.0 * d / n as f64);
    }
    let grads = tape.backward_batch(&g, InputGrad::None)?;
    Ok((loss / n as f64, grads.params))
}
