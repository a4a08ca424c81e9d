use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// One off-policy transition; `action` is in metres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: [f64; 3],
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring of transitions; the oldest item is evicted first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Stored items, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Indices drawn i.i.d. uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = self.items.len();
        Ok((0..batch_size).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.items[idx]
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

/// Free-function form of [`ReplayBuffer::sample`].
pub fn buffer_sample<'a, R: Rng + ?Sized>(
    buffer: &'a ReplayBuffer,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<&'a Transition>> {
    buffer.sample(batch_size, rng)
}

/// Network-ready batch: observations divided by the per-dimension scale and
/// actions divided by `a_max`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub obs: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub dones: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(items: &[&Transition], obs_scale: &[f64], a_max: f64) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyBuffer)?;
        let d = first.obs.len();
        if obs_scale.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: obs_scale.len(),
            });
        }
        let n = items.len();
        let mut obs = Vec::with_capacity(n * d);
        let mut next_obs = Vec::with_capacity(n * d);
        let mut actions = Vec::with_capacity(n * 3);
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        for t in items {
            if t.obs.len() != d || t.next_obs.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: t.obs.len().max(t.next_obs.len()),
                });
            }
            obs.extend(t.obs.iter().zip(obs_scale).map(|(o, s)| o * s));
            next_obs.extend(t.next_obs.iter().zip(obs_scale).map(|(o, s)| o * s));
            actions.extend(t.action.iter().map(|a| a / a_max));
            rewards.push(t.reward);
            dones.push(if t.done { 1.0 } else { 0.0 });
        }
        Ok(Self {
            obs: Matrix::from_vec(n, d, obs)?,
            actions: Matrix::from_vec(n, 3, actions)?,
            rewards,
            next_obs: Matrix::from_vec(n, d, next_obs)?,
            dones,
        })
    }
}
