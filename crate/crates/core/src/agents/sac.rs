use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::critics::adam_config;
use super::{ActMode, AgentConfig, Batch, TwinCritics};
use crate::error::{Error, Result};
use crate::nn::{
    mlp_forward_batch, mlp_predict, Adam, AdamConfig, InputGrad, Matrix, NetParams, OutputActivation, PolicySpec,
};
use crate::sim::Action;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log π(tanh u)` for one action dimension, given the Gaussian sample
/// `u = μ + σ·ε` and its log-std.
pub fn squashed_log_prob(u: f64, log_std: f64, eps: f64) -> f64 {
    -0.5 * eps * eps - log_std - HALF_LN_2PI - 2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Squashed samples `tanh(μ + σε)` and their summed log-probabilities for an
/// actor output of shape `n × 6` (means then log-stds).
pub fn squash_sample(out: &Matrix, eps: &Matrix) -> (Matrix, Vec<f64>) {
    let n = out.rows();
    let mut a = Matrix::zeros(n, 3);
    let mut logp = vec![0.0; n];
    for r in 0..n {
        for i in 0..3 {
            let (mu, ls, e) = (out.get(r, i), out.get(r, 3 + i), eps.get(r, i));
            let u = mu + ls.exp() * e;
            a.set(r, i, u.tanh());
            logp[r] += squashed_log_prob(u, ls, e);
        }
    }
    (a, logp)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SacTargets {
    pub y: Vec<f64>,
    pub q1_next: Vec<f64>,
    pub q2_next: Vec<f64>,
    pub next_log_prob: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SacActorStep {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub log_prob: Vec<f64>,
}

/// Soft actor-critic over a tanh-squashed Gaussian policy with a learned
/// temperature.
#[derive(Clone, Debug)]
pub struct SacAgent {
    pub config: AgentConfig,
    pub actor: NetParams,
    pub actor_opt: Adam,
    pub critics: TwinCritics,
    pub log_alpha: f64,
    pub alpha_opt: Adam,
    pub rng: ChaCha8Rng,
    pub updates: u64,
}

pub(crate) fn sac_actor_spec(config: &AgentConfig) -> PolicySpec {
    PolicySpec::new(
        config.obs_dim,
        &config.hidden,
        6,
        OutputActivation::MeanLogStd {
            log_std_min: config.sac.log_std_min,
            log_std_max: config.sac.log_std_max,
        },
    )
}

impl SacAgent {
    pub fn new(config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let actor = NetParams::init(sac_actor_spec(&config), config.final_layer_init, &mut rng)?;
        let critics = TwinCritics::new(&config, &mut rng)?;
        Ok(Self {
            actor_opt: Adam::new(actor.len(), adam_config(&config)),
            actor,
            critics,
            log_alpha: config.sac.init_temperature.ln(),
            alpha_opt: Adam::new(
                1,
                AdamConfig {
                    lr: config.lr,
                    ..AdamConfig::default()
                },
            ),
            rng,
            updates: 0,
            config,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.log_alpha.exp()
    }

    fn scaled_obs(&self, obs: &[f64]) -> Result<Matrix> {
        if obs.len() != self.config.obs_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.obs_dim,
                got: obs.len(),
            });
        }
        Matrix::from_vec(
            1,
            obs.len(),
            obs.iter().zip(&self.config.obs_scale).map(|(o, s)| o * s).collect(),
        )
    }

    /// Mean and std of the pre-squash Gaussian for one raw observation.
    pub fn distribution(&self, obs: &[f64]) -> Result<([f64; 3], [f64; 3])> {
        let out = mlp_predict(&self.actor, &self.scaled_obs(obs)?)?;
        let r = out.row(0);
        Ok(([r[0], r[1], r[2]], [r[3].exp(), r[4].exp(), r[5].exp()]))
    }

    pub fn select_action(&mut self, obs: &[f64], mode: ActMode) -> Result<Action> {
        let (mu, sigma) = self.distribution(obs)?;
        let a_max = self.config.a_max;
        let delta: [f64; 3] = match mode {
            ActMode::Eval => std::array::from_fn(|i| a_max * mu[i].tanh()),
            ActMode::Train => std::array::from_fn(|i| {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                a_max * (mu[i] + sigma[i] * e).tanh()
            }),
        };
        Ok(Action::new(delta))
    }

    fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        Matrix::from_vec(rows, cols, data).expect("shape")
    }

    /// Soft Bellman targets for given next-action noise.
    pub fn targets_with_noise(&self, batch: &Batch, eps: &Matrix) -> Result<SacTargets> {
        let out = mlp_predict(&self.actor, &batch.next_obs)?;
        let (a_next, next_log_prob) = squash_sample(&out, eps);
        let (qmin, q1_next, q2_next) = self.critics.target_values(&batch.next_obs, &a_next)?;
        let alpha = self.temperature();
        let y = (0..batch.len())
            .map(|i| {
                self.config.reward_scale * batch.rewards[i]
                    + self.config.gamma * (1.0 - batch.dones[i]) * (qmin[i] - alpha * next_log_prob[i])
            })
            .collect();
        Ok(SacTargets {
            y,
            q1_next,
            q2_next,
            next_log_prob,
        })
    }

    pub fn td_targets(&mut self, batch: &Batch) -> Result<Vec<f64>> {
        let eps = self.normal_matrix(batch.len(), 3);
        Ok(self.targets_with_noise(batch, &eps)?.y)
    }

    pub fn critic_update(&mut self, batch: &Batch) -> Result<(f64, f64)> {
        let y = self.td_targets(batch)?;
        self.critics.regress(&batch.obs, &batch.actions, &y)
    }

    /// Reparameterised actor loss `mean(α·log π − min Q)` and its gradient
    /// with respect to `actor`, for fixed Gaussian noise.
    pub fn actor_loss_and_grad(
        actor: &NetParams,
        critics: &TwinCritics,
        obs: &Matrix,
        eps: &Matrix,
        alpha: f64,
    ) -> Result<SacActorStep> {
        let n = obs.rows();
        let d = obs.cols();
        let (out, tape) = mlp_forward_batch(actor, obs.clone())?;
        let (a, log_prob) = squash_sample(&out, eps);
        let x = obs.hcat(&a)?;
        let (q1, t1) = mlp_forward_batch(&critics.q1, x.clone())?;
        let (q2, t2) = mlp_forward_batch(&critics.q2, x)?;
        let ones = Matrix::from_vec(n, 1, vec![1.0; n])?;
        let dq1 = t1.backward_inputs(&ones, d, d + 3)?;
        let dq2 = t2.backward_inputs(&ones, d, d + 3)?;
        let mut loss = 0.0;
        let mut g = Matrix::zeros(n, 6);
        let inv = 1.0 / n as f64;
        for r in 0..n {
            let use_first = q1.get(r, 0) <= q2.get(r, 0);
            let (qmin, dq) = if use_first {
                (q1.get(r, 0), &dq1)
            } else {
                (q2.get(r, 0), &dq2)
            };
            loss += alpha * log_prob[r] - qmin;
            for i in 0..3 {
                let ai = a.get(r, i);
                let sigma = out.get(r, 3 + i).exp();
                let e = eps.get(r, i);
                let qa = dq.get(r, i) * (1.0 - ai * ai);
                g.set(r, i, inv * (alpha * 2.0 * ai - qa));
                g.set(r, 3 + i, inv * (alpha * (-1.0 + 2.0 * ai * sigma * e) - qa * sigma * e));
            }
        }
        let loss = loss * inv;
        if !loss.is_finite() {
            return Err(Error::NonFinite("actor loss"));
        }
        let grad = tape.backward_batch(&g, InputGrad::None)?.params;
        Ok(SacActorStep { loss, grad, log_prob })
    }

    /// Actor step followed by a temperature step toward the target entropy.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64> {
        let eps = self.normal_matrix(batch.len(), 3);
        let alpha = self.temperature();
        let step = Self::actor_loss_and_grad(&self.actor, &self.critics, &batch.obs, &eps, alpha)?;
        self.actor_opt.step(&mut self.actor.values, &step.grad)?;
        if self.config.sac.learn_temperature {
            let n = step.log_prob.len() as f64;
            let g = -step
                .log_prob
                .iter()
                .map(|lp| lp + self.config.sac.target_entropy)
                .sum::<f64>()
                / n;
            let mut la = [self.log_alpha];
            self.alpha_opt.step(&mut la, &[g])?;
            self.log_alpha = la[0];
        }
        Ok(step.loss)
    }

    pub fn soft_update_targets(&mut self) {
        self.critics.soft_update(self.config.tau);
    }
}
