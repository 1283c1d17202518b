//! Environment interface used by the trainer, plus a known-optimum toy task.

use crane_core::{CraneEnv, TerminationEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// The episode ended on the time limit rather than a terminal state;
    /// the trainer bootstraps from the value of `obs`.
    pub truncated: bool,
    /// Task success; meaningful on the final transition.
    pub success: bool,
}

pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<Transition>;
    /// Whether the next action has any effect; inactive steps are masked
    /// out of the policy loss.
    fn action_active(&self) -> bool {
        true
    }
}

impl Environment for CraneEnv {
    fn obs_dim(&self) -> usize {
        crane_core::OBS_DIM
    }

    fn act_dim(&self) -> usize {
        crane_core::ACT_DIM
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        Ok(CraneEnv::reset(self, seed)?.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let out = CraneEnv::step(self, action)?;
        let truncated = matches!(out.info.event, TerminationEvent::Horizon | TerminationEvent::SuccessEnd);
        Ok(Transition { obs: out.observation.to_vec(), reward: out.reward, done: out.done, truncated, success: out.info.success })
    }

    fn action_active(&self) -> bool {
        self.residual_active()
    }
}

/// Holds each action for `k` inner steps and sums the rewards, so the
/// policy acts at a lower rate than the plant.
#[derive(Debug, Clone)]
pub struct ActionRepeat<E> {
    pub inner: E,
    pub k: usize,
}

impl<E: Environment> ActionRepeat<E> {
    pub fn new(inner: E, k: usize) -> Self {
        Self { inner, k: k.max(1) }
    }
}

impl<E: Environment> Environment for ActionRepeat<E> {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn act_dim(&self) -> usize {
        self.inner.act_dim()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let mut reward = 0.0;
        for _ in 1..self.k {
            let tr = self.inner.step(action)?;
            reward += tr.reward;
            if tr.done {
                return Ok(Transition { reward, ..tr });
            }
        }
        let tr = self.inner.step(action)?;
        Ok(Transition { reward: reward + tr.reward, ..tr })
    }

    fn action_active(&self) -> bool {
        self.inner.action_active()
    }
}

/// One-dimensional bandit-like task: observation is uniform noise, reward
/// is `−a²`, so the optimal mean action is zero.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    rng: ChaCha8Rng,
    obs: f64,
    t: usize,
    pub horizon: usize,
}

impl Default for ToyEnv {
    fn default() -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(0), obs: 0.0, t: 0, horizon: 16 }
    }
}

impl Environment for ToyEnv {
    fn obs_dim(&self) -> usize {
        1
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.obs = self.rng.random_range(-1.0..1.0);
        Ok(vec![self.obs])
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let a = action[0];
        self.t += 1;
        self.obs = self.rng.random_range(-1.0..1.0);
        let done = self.t >= self.horizon;
        Ok(Transition { obs: vec![self.obs], reward: -a * a, done, truncated: false, success: done && a.abs() < 0.1 })
    }
}
