//! Gaussian residual policy with a separate value network.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, Result};
use crate::mlp::{Mlp, MlpCache};
use crate::normalizer::RunningNorm;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    /// Observation → pre-squash action mean.
    pub actor: Mlp,
    /// Observation → state value.
    pub critic: Mlp,
    pub log_std: Vec<f64>,
    /// Bound on the action mean (`u_res_max`).
    pub action_scale: f64,
    pub norm: RunningNorm,
}

impl ActorCritic {
    /// Hidden layers get scaled-normal weights; the action head starts at
    /// zero so the initial mean action is exactly zero.
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], action_scale: f64, init_log_std: f64, rng: &mut R) -> Self {
        let sizes = |out: usize| {
            let mut s = vec![obs_dim];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        Self {
            actor: Mlp::init(&sizes(act_dim), 1.0, 0.0, rng),
            critic: Mlp::init(&sizes(1), 1.0, 1.0, rng),
            log_std: vec![init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); act_dim],
            action_scale,
            norm: RunningNorm::new(obs_dim),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp()).collect()
    }

    /// Forward pass on an already-normalized observation.
    pub fn forward_normalized(&self, x: &[f64]) -> Result<PolicyOutput> {
        let head = self.actor.forward(x)?;
        let mean = head.iter().map(|h| self.action_scale * h.tanh()).collect();
        let value = self.critic.forward(x)?[0];
        Ok(PolicyOutput { mean, std: self.std(), value })
    }

    pub fn forward(&self, obs: &[f64]) -> Result<PolicyOutput> {
        if obs.len() != self.obs_dim() {
            return Err(PolicyError::Dimension { expected: self.obs_dim(), got: obs.len() });
        }
        self.forward_normalized(&self.norm.normalize(obs))
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std.iter_mut().for_each(|l| *l = l.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }
}

pub fn sample_action<R: Rng + ?Sized>(mean: &[f64], std: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(std)
        .map(|(m, s)| {
            let e: f64 = StandardNormal.sample(rng);
            m + s * e
        })
        .collect()
}

/// Log-density of a diagonal Gaussian.
pub fn log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, l), a)| {
            let z = (a - m) / l.exp();
            -0.5 * z * z - l - HALF_LOG_2PI
        })
        .sum()
}

pub fn entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|l| l + 0.5 + HALF_LOG_2PI).sum()
}

/// Caches needed to backpropagate through one policy evaluation.
#[derive(Debug, Default)]
pub(crate) struct EvalCache {
    pub actor: MlpCache,
    pub critic: MlpCache,
    pub head: Vec<f64>,
}

impl ActorCritic {
    pub(crate) fn forward_train(&self, x: &[f64], cache: &mut EvalCache) -> Result<PolicyOutput> {
        cache.head = self.actor.forward_cached(x, &mut cache.actor)?;
        let mean = cache.head.iter().map(|h| self.action_scale * h.tanh()).collect();
        let value = self.critic.forward_cached(x, &mut cache.critic)?[0];
        Ok(PolicyOutput { mean, std: self.std(), value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn density_integrates_to_one() {
        for (m, l) in [(0.0, 0.0), (0.3, -1.5), (-1.0, 0.7)] {
            let (lo, hi, n) = (-30.0, 30.0, 200_000);
            let h = (hi - lo) / n as f64;
            let total: f64 = (0..n).map(|i| log_prob(&[m], &[l], &[lo + (i as f64 + 0.5) * h]).exp() * h).sum();
            assert!((total - 1.0).abs() < 1e-3, "{total}");
        }
    }

    #[test]
    fn entropy_matches_numeric_integral() {
        let l = -0.4;
        let (lo, hi, n) = (-12.0, 12.0, 100_000);
        let h = (hi - lo) / n as f64;
        let numeric: f64 = (0..n)
            .map(|i| {
                let lp = log_prob(&[0.0], &[l], &[lo + (i as f64 + 0.5) * h]);
                -lp.exp() * lp * h
            })
            .sum();
        assert!((numeric - entropy(&[l])).abs() < 1e-6);
    }

    #[test]
    fn zero_network_gives_zero_mean_and_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ac = ActorCritic::new(6, 2, &[8], 0.2, -1.0, &mut rng);
        ac.critic.params.iter_mut().for_each(|p| *p = 0.0);
        let out = ac.forward(&[0.5; 6]).unwrap();
        assert_eq!(out.mean, vec![0.0; 2]);
        assert_eq!(out.value, 0.0);
        assert!((out.std[0] - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn mean_is_bounded_by_action_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ac = ActorCritic::new(3, 2, &[4], 0.2, 0.0, &mut rng);
        ac.actor.params.iter_mut().for_each(|p| *p = 50.0);
        for x in [[1.0, 2.0, 3.0], [-5.0, 0.0, 9.0]] {
            let out = ac.forward(&x).unwrap();
            assert!(out.mean.iter().all(|m| m.abs() <= 0.2));
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ac = ActorCritic::new(3, 2, &[4], 0.2, 0.0, &mut rng);
        assert!(ac.forward(&[1.0; 4]).is_err());
    }
}
