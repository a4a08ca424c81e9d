use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::critics::adam_config;
use super::{ActMode, AgentConfig, Batch, TwinCritics};
use crate::error::{Error, Result};
use crate::nn::{mlp_forward_batch, mlp_predict, Adam, InputGrad, Matrix, NetParams, OutputActivation, PolicySpec};
use crate::sim::Action;

#[derive(Clone, Debug, PartialEq)]
pub struct Td3Targets {
    pub y: Vec<f64>,
    pub q1_next: Vec<f64>,
    pub q2_next: Vec<f64>,
}

/// Actor loss split into its two terms; `total = rl_term + bc_weight·bc_term`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BcLoss {
    pub total: f64,
    pub rl_term: f64,
    pub bc_term: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Td3ActorStep {
    pub loss: BcLoss,
    pub grad: Vec<f64>,
}

/// Twin delayed deep deterministic policy gradient.
#[derive(Clone, Debug)]
pub struct Td3Agent {
    pub config: AgentConfig,
    pub actor: NetParams,
    pub actor_target: NetParams,
    pub actor_opt: Adam,
    pub critics: TwinCritics,
    pub rng: ChaCha8Rng,
    pub actor_calls: u64,
}

pub(crate) fn td3_actor_spec(config: &AgentConfig) -> PolicySpec {
    PolicySpec::new(
        config.obs_dim,
        &config.hidden,
        3,
        OutputActivation::ScaledTanh { scale: 1.0 },
    )
}

impl Td3Agent {
    pub fn new(config: AgentConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let actor = NetParams::init(td3_actor_spec(&config), config.final_layer_init, &mut rng)?;
        let critics = TwinCritics::new(&config, &mut rng)?;
        Ok(Self {
            actor_target: actor.clone(),
            actor_opt: Adam::new(actor.len(), adam_config(&config)),
            actor,
            critics,
            rng,
            actor_calls: 0,
            config,
        })
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

    pub fn select_action(&mut self, obs: &[f64], mode: ActMode) -> Result<Action> {
        let out = mlp_predict(&self.actor, &self.scaled_obs(obs)?)?;
        let a = out.row(0);
        let a_max = self.config.a_max;
        let std = self.config.td3.exploration_noise_std;
        let delta: [f64; 3] = match mode {
            ActMode::Eval => std::array::from_fn(|i| a_max * a[i]),
            ActMode::Train => std::array::from_fn(|i| {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                a_max * (a[i] + std * e).clamp(-1.0, 1.0)
            }),
        };
        Ok(Action::new(delta))
    }

    /// Clipped target-policy smoothing noise, normalised units.
    pub fn smoothing_noise(&mut self, rows: usize) -> Matrix {
        let (std, clip) = (self.config.td3.target_noise_std, self.config.td3.target_noise_clip);
        let data = (0..rows * 3)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                (std * e).clamp(-clip, clip)
            })
            .collect();
        Matrix::from_vec(rows, 3, data).expect("shape")
    }

    pub fn targets_with_noise(&self, batch: &Batch, noise: &Matrix) -> Result<Td3Targets> {
        let mut a_next = mlp_predict(&self.actor_target, &batch.next_obs)?;
        for (a, n) in a_next.as_mut_slice().iter_mut().zip(noise.as_slice()) {
            *a = (*a + n).clamp(-1.0, 1.0);
        }
        let (qmin, q1_next, q2_next) = self.critics.target_values(&batch.next_obs, &a_next)?;
        let y = (0..batch.len())
            .map(|i| self.config.reward_scale * batch.rewards[i] + self.config.gamma * (1.0 - batch.dones[i]) * qmin[i])
            .collect();
        Ok(Td3Targets { y, q1_next, q2_next })
    }

    pub fn td_targets(&mut self, batch: &Batch) -> Result<Vec<f64>> {
        let noise = self.smoothing_noise(batch.len());
        Ok(self.targets_with_noise(batch, &noise)?.y)
    }

    pub fn critic_update(&mut self, batch: &Batch) -> Result<(f64, f64)> {
        let y = self.td_targets(batch)?;
        self.critics.regress(&batch.obs, &batch.actions, &y)
    }

    /// `−mean Q1(s, π(s))` over `rl` plus `bc_weight · mean‖π(s_d) − u_d‖²`
    /// over `demo`, with the gradient with respect to `actor`.
    pub fn actor_loss_and_grad(
        actor: &NetParams,
        critics: &TwinCritics,
        rl: &Batch,
        demo: Option<(&Batch, f64)>,
    ) -> Result<Td3ActorStep> {
        let n = rl.len();
        let d = rl.obs.cols();
        let (a, tape) = mlp_forward_batch(actor, rl.obs.clone())?;
        let (q, tq) = mlp_forward_batch(&critics.q1, rl.obs.hcat(&a)?)?;
        let ones = Matrix::from_vec(n, 1, vec![1.0; n])?;
        let mut dqa = tq.backward_inputs(&ones, d, d + 3)?;
        let inv = 1.0 / n as f64;
        for v in dqa.as_mut_slice() {
            *v *= -inv;
        }
        let rl_term = -q.as_slice().iter().sum::<f64>() * inv;
        let mut grad = tape.backward_batch(&dqa, InputGrad::None)?.params;
        let mut loss = BcLoss {
            total: rl_term,
            rl_term,
            bc_term: 0.0,
        };
        if let Some((demo, w)) = demo {
            if demo.is_empty() {
                return Err(Error::EmptyDemoStore);
            }
            let m = demo.len();
            let (pa, tape) = mlp_forward_batch(actor, demo.obs.clone())?;
            let mut g = Matrix::zeros(m, 3);
            let mut bc = 0.0;
            for r in 0..m {
                for i in 0..3 {
                    let diff = pa.get(r, i) - demo.actions.get(r, i);
                    bc += diff * diff;
                    g.set(r, i, w * 2.0 * diff / m as f64);
                }
            }
            let bc_term = bc / m as f64;
            let gd = tape.backward_batch(&g, InputGrad::None)?.params;
            for (acc, v) in grad.iter_mut().zip(gd) {
                *acc += v;
            }
            loss = BcLoss {
                total: rl_term + w * bc_term,
                rl_term,
                bc_term,
            };
        }
        if !loss.total.is_finite() {
            return Err(Error::NonFinite("actor loss"));
        }
        Ok(Td3ActorStep { loss, grad })
    }

    /// Counts the call; every `policy_delay`-th call takes an actor step and
    /// moves all three target networks. Returns `None` on skipped calls.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<Option<f64>> {
        Ok(self.delayed_step(batch, None)?.map(|l| l.total))
    }

    pub fn bc_augmented_actor_update(&mut self, rl: &Batch, demo: &Batch, bc_weight: f64) -> Result<Option<BcLoss>> {
        if demo.is_empty() {
            return Err(Error::EmptyDemoStore);
        }
        self.delayed_step(rl, Some((demo, bc_weight)))
    }

    fn delayed_step(&mut self, rl: &Batch, demo: Option<(&Batch, f64)>) -> Result<Option<BcLoss>> {
        self.actor_calls += 1;
        if self.actor_calls % self.config.td3.policy_delay != 0 {
            return Ok(None);
        }
        let step = Self::actor_loss_and_grad(&self.actor, &self.critics, rl, demo)?;
        self.actor_opt.step(&mut self.actor.values, &step.grad)?;
        self.soft_update_targets();
        Ok(Some(step.loss))
    }

    pub fn soft_update_targets(&mut self) {
        let tau = self.config.tau;
        self.actor_target.soft_update_from(&self.actor, tau);
        self.critics.soft_update(tau);
    }
}
