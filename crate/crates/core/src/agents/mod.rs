//! Off-policy learners: replay storage, SAC, TD3 and TD3 with a
//! behaviour-cloning term.

mod buffer;
mod config;
mod critics;
mod sac;
mod td3;

pub use buffer::{buffer_sample, Batch, ReplayBuffer, Transition};
pub use config::{ActMode, AgentConfig, Algo, SacParams, Td3Params};
pub use critics::TwinCritics;
pub use sac::{squash_sample, squashed_log_prob, SacActorStep, SacAgent, SacTargets};
pub use td3::{BcLoss, Td3ActorStep, Td3Agent, Td3Targets};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::NetParams;
use crate::sim::Action;

/// Losses reported by one [`Agent::update`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub temperature: Option<f64>,
}

#[derive(Clone, Debug)]
pub enum Agent {
    Sac(SacAgent),
    Td3(Td3Agent),
}

impl Agent {
    pub fn new(algo: Algo, config: AgentConfig) -> Result<Self> {
        Ok(match algo {
            Algo::Sac => Self::Sac(SacAgent::new(config)?),
            Algo::Td3 => Self::Td3(Td3Agent::new(config)?),
        })
    }

    pub fn algo(&self) -> Algo {
        match self {
            Self::Sac(_) => Algo::Sac,
            Self::Td3(_) => Algo::Td3,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        match self {
            Self::Sac(a) => &a.config,
            Self::Td3(a) => &a.config,
        }
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        match self {
            Self::Sac(a) => &mut a.rng,
            Self::Td3(a) => &mut a.rng,
        }
    }

    pub fn actor(&self) -> &NetParams {
        match self {
            Self::Sac(a) => &a.actor,
            Self::Td3(a) => &a.actor,
        }
    }

    pub fn actor_mut(&mut self) -> &mut NetParams {
        match self {
            Self::Sac(a) => &mut a.actor,
            Self::Td3(a) => &mut a.actor,
        }
    }

    pub fn temperature(&self) -> Option<f64> {
        match self {
            Self::Sac(a) => Some(a.temperature()),
            Self::Td3(_) => None,
        }
    }

    pub fn select_action(&mut self, obs: &[f64], mode: ActMode) -> Result<Action> {
        match self {
            Self::Sac(a) => a.select_action(obs, mode),
            Self::Td3(a) => a.select_action(obs, mode),
        }
    }

    /// Draws a batch with the agent's own generator.
    pub fn sample_batch(&mut self, buffer: &ReplayBuffer, n: usize) -> Result<Batch> {
        let idx = buffer.sample_indices(n, self.rng_mut())?;
        let items: Vec<&Transition> = idx.into_iter().map(|i| buffer.get(i)).collect();
        let cfg = self.config();
        Batch::from_transitions(&items, &cfg.obs_scale, cfg.a_max)
    }

    /// One gradient update from `buffer`, optionally with a behaviour-cloning
    /// term drawn from `demos` at the given weight (TD3 only).
    pub fn update(&mut self, buffer: &ReplayBuffer, demos: Option<(&ReplayBuffer, f64)>) -> Result<UpdateStats> {
        let n = self.config().batch_size;
        let rl = self.sample_batch(buffer, n)?;
        let demo = match demos {
            Some((store, w)) => {
                if store.is_empty() {
                    return Err(Error::EmptyDemoStore);
                }
                Some((self.sample_batch(store, n)?, w))
            }
            None => None,
        };
        self.update_with(&rl, demo.as_ref().map(|(b, w)| (b, *w)))
    }

    pub fn update_with(&mut self, rl: &Batch, demo: Option<(&Batch, f64)>) -> Result<UpdateStats> {
        match self {
            Self::Sac(a) => {
                if demo.is_some() {
                    return Err(Error::InvalidConfig("behaviour cloning requires TD3".into()));
                }
                let (l1, l2) = a.critic_update(rl)?;
                let actor_loss = a.actor_update(rl)?;
                a.soft_update_targets();
                a.updates += 1;
                Ok(UpdateStats {
                    critic_loss: 0.5 * (l1 + l2),
                    actor_loss: Some(actor_loss),
                    temperature: Some(a.temperature()),
                })
            }
            Self::Td3(a) => {
                let (l1, l2) = a.critic_update(rl)?;
                let actor_loss = match demo {
                    Some((d, w)) => a.bc_augmented_actor_update(rl, d, w)?.map(|l| l.total),
                    None => a.actor_update(rl)?,
                };
                Ok(UpdateStats {
                    critic_loss: 0.5 * (l1 + l2),
                    actor_loss,
                    temperature: None,
                })
            }
        }
    }

    /// Named networks, in a fixed order, for checkpointing.
    pub fn networks(&self) -> Vec<(&'static str, &NetParams)> {
        match self {
            Self::Sac(a) => vec![
                ("actor", &a.actor),
                ("q1", &a.critics.q1),
                ("q2", &a.critics.q2),
                ("q1_target", &a.critics.q1_target),
                ("q2_target", &a.critics.q2_target),
            ],
            Self::Td3(a) => vec![
                ("actor", &a.actor),
                ("actor_target", &a.actor_target),
                ("q1", &a.critics.q1),
                ("q2", &a.critics.q2),
                ("q1_target", &a.critics.q1_target),
                ("q2_target", &a.critics.q2_target),
            ],
        }
    }

    /// Replaces the named network; its spec must match.
    pub fn set_network(&mut self, name: &str, params: NetParams) -> Result<()> {
        let slot = match (self, name) {
            (Self::Sac(a), "actor") => &mut a.actor,
            (Self::Td3(a), "actor") => &mut a.actor,
            (Self::Td3(a), "actor_target") => &mut a.actor_target,
            (Self::Sac(a), "q1") => &mut a.critics.q1,
            (Self::Td3(a), "q1") => &mut a.critics.q1,
            (Self::Sac(a), "q2") => &mut a.critics.q2,
            (Self::Td3(a), "q2") => &mut a.critics.q2,
            (Self::Sac(a), "q1_target") => &mut a.critics.q1_target,
            (Self::Td3(a), "q1_target") => &mut a.critics.q1_target,
            (Self::Sac(a), "q2_target") => &mut a.critics.q2_target,
            (Self::Td3(a), "q2_target") => &mut a.critics.q2_target,
            (_, other) => return Err(Error::Checkpoint(format!("unknown network {other:?}"))),
        };
        if slot.spec != params.spec {
            return Err(Error::Checkpoint(format!("architecture mismatch for {name}")));
        }
        *slot = params;
        Ok(())
    }

    /// Temperature (SAC) in log space, for checkpointing.
    pub fn log_temperature(&self) -> Option<f64> {
        match self {
            Self::Sac(a) => Some(a.log_alpha),
            Self::Td3(_) => None,
        }
    }

    pub fn set_log_temperature(&mut self, v: f64) {
        if let Self::Sac(a) = self {
            a.log_alpha = v;
        }
    }
}

#[cfg(test)]
mod tests;
