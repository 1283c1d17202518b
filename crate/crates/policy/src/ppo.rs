//! Clipped-surrogate PPO with generalized advantage estimation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::error::{PolicyError, Result};
use crate::policy::{entropy, log_prob, ActorCritic, EvalCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Steps collected per environment per iteration.
    pub rollout_len: usize,
    pub num_envs: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Multiplier on environment rewards before advantage estimation, so
    /// that values stay O(1).
    pub reward_scale: f64,
    /// Environment steps per policy decision.
    pub action_repeat: usize,
    pub seed: u64,
    pub iterations: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Deterministic evaluation episodes per curve point (0 disables).
    pub eval_episodes: usize,
    pub eval_every: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 3e-4,
            epochs: 5,
            minibatch_size: 256,
            rollout_len: 512,
            num_envs: 16,
            entropy_coef: 0.003,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            reward_scale: 1.0,
            action_repeat: 1,
            seed: 0,
            iterations: 100,
            hidden: vec![128, 64, 32],
            init_log_std: -3.0,
            eval_episodes: 0,
            eval_every: 1,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.learning_rate >= 0.0 && self.max_grad_norm > 0.0 && self.reward_scale > 0.0) {
            return bad("learning_rate must be >= 0, max_grad_norm and reward_scale > 0");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.rollout_len == 0 || self.num_envs == 0 || self.action_repeat == 0 {
            return bad("epochs, minibatch_size, rollout_len, num_envs and action_repeat must be positive");
        }
        Ok(())
    }
}

/// `A_t = Σ_k (γλ)^k δ_{t+k}` with `δ_t = r_t + γ V_{t+1} (1 − done_t) − V_t`,
/// where `V_T` is `last_value`. Returns (advantages, returns = A + V).
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Zero-mean, unit-variance advantages over the entries selected by `mask`;
/// the others are left untouched.
pub fn normalize_advantages(adv: &mut [f64], mask: &[bool]) {
    let sel: Vec<usize> = (0..adv.len()).filter(|&i| mask[i]).collect();
    if sel.len() < 2 {
        return;
    }
    let n = sel.len() as f64;
    let mean = sel.iter().map(|&i| adv[i]).sum::<f64>() / n;
    let var = sel.iter().map(|&i| (adv[i] - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for &i in &sel {
        adv[i] = (adv[i] - mean) / std;
    }
}

/// Flattened on-policy data for one update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    /// Normalized observations, as seen by the policy during collection.
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Whether the action took effect (policy-loss mask).
    pub active: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub actor: Vec<f64>,
    pub log_std: Vec<f64>,
    pub critic: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &ActorCritic) -> Self {
        Self { actor: vec![0.0; model.actor.params.len()], log_std: vec![0.0; model.log_std.len()], critic: vec![0.0; model.critic.params.len()] }
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in [(&mut self.actor, &other.actor), (&mut self.log_std, &other.log_std), (&mut self.critic, &other.critic)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn is_finite(&self) -> bool {
        self.actor.iter().chain(&self.log_std).chain(&self.critic).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Surrogate objective E[min(ρA, clip(ρ)A)] over active samples.
    pub surrogate: f64,
}

const CHUNK: usize = 64;

/// Loss and its gradient over `idx`:
/// `−mean_active min(ρA, clip(ρ)A) + c_v mean (V − R)² − c_e H`.
pub fn loss_and_grad(model: &ActorCritic, batch: &RolloutBatch, idx: &[usize], cfg: &PpoConfig) -> Result<(LossStats, Gradients)> {
    let n = idx.len() as f64;
    let n_active = idx.iter().filter(|&&i| batch.active[i]).count();
    let pa = n_active.max(1) as f64;
    let log_std: Vec<f64> = model.log_std.clone();
    let var: Vec<f64> = log_std.iter().map(|l| (2.0 * l).exp()).collect();

    // fixed chunking keeps the summation order independent of thread count
    let parts: Vec<Result<(LossStats, Gradients)>> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Gradients::zeros(model);
            let mut s = LossStats::default();
            let mut cache = EvalCache::default();
            for &i in chunk {
                let out = model.forward_train(&batch.obs[i], &mut cache)?;
                let dv = out.value - batch.returns[i];
                s.value_loss += dv * dv / n;
                model.critic.backward(&cache.critic, &[cfg.value_coef * 2.0 * dv / n], &mut g.critic);
                if !batch.active[i] {
                    continue;
                }
                let a = &batch.actions[i];
                let lp = log_prob(&out.mean, &log_std, a);
                let ratio = (lp - batch.log_probs[i]).exp();
                let adv = batch.advantages[i];
                let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                let (s1, s2) = (ratio * adv, clipped * adv);
                s.surrogate += s1.min(s2) / pa;
                s.approx_kl += ((ratio - 1.0) - (lp - batch.log_probs[i])) / pa;
                if (ratio - 1.0).abs() > cfg.clip_eps {
                    s.clip_fraction += 1.0 / pa;
                }
                if s1 <= s2 {
                    // d(−ρA/pa)/d(log π) = −ρA/pa
                    let dlp = -ratio * adv / pa;
                    let mut d_head = vec![0.0; a.len()];
                    for k in 0..a.len() {
                        let diff = a[k] - out.mean[k];
                        let th = cache.head[k].tanh();
                        d_head[k] = dlp * diff / var[k] * model.action_scale * (1.0 - th * th);
                        g.log_std[k] += dlp * (diff * diff / var[k] - 1.0);
                    }
                    model.actor.backward(&cache.actor, &d_head, &mut g.actor);
                }
            }
            Ok((s, g))
        })
        .collect();

    let mut grads = Gradients::zeros(model);
    let mut stats = LossStats::default();
    for part in parts {
        let (s, g) = part?;
        grads.add(&g);
        stats.value_loss += s.value_loss;
        stats.surrogate += s.surrogate;
        stats.approx_kl += s.approx_kl;
        stats.clip_fraction += s.clip_fraction;
    }
    stats.policy_loss = -stats.surrogate;
    stats.entropy = entropy(&log_std);
    grads.log_std.iter_mut().for_each(|g| *g -= cfg.entropy_coef);
    stats.loss = stats.policy_loss + cfg.value_coef * stats.value_loss - cfg.entropy_coef * stats.entropy;
    Ok((stats, grads))
}

fn clip_norm(grads: &mut [&mut Vec<f64>], max_norm: f64) {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }
}

/// Optimizer state for actor (network and log-std) and critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub actor: Adam,
    pub log_std: Adam,
    pub critic: Adam,
}

impl Optimizers {
    pub fn new(model: &ActorCritic) -> Self {
        Self { actor: Adam::new(model.actor.params.len()), log_std: Adam::new(model.log_std.len()), critic: Adam::new(model.critic.params.len()) }
    }
}

/// Means of the per-minibatch statistics over the whole update.
pub fn ppo_update(model: &mut ActorCritic, opt: &mut Optimizers, batch: &RolloutBatch, cfg: &PpoConfig, shuffle_seed: u64) -> Result<LossStats> {
    let backup = (model.clone(), opt.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut total = LossStats::default();
    let mut count = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for mb in order.chunks(cfg.minibatch_size) {
            let (stats, mut g) = loss_and_grad(model, batch, mb, cfg)?;
            if !stats.loss.is_finite() || !g.is_finite() {
                (*model, *opt) = backup;
                return Err(PolicyError::NonFiniteLoss { epoch });
            }
            clip_norm(&mut [&mut g.actor, &mut g.log_std], cfg.max_grad_norm);
            clip_norm(&mut [&mut g.critic], cfg.max_grad_norm);
            opt.actor.step(&mut model.actor.params, &g.actor, cfg.learning_rate);
            opt.log_std.step(&mut model.log_std, &g.log_std, cfg.learning_rate);
            opt.critic.step(&mut model.critic.params, &g.critic, cfg.learning_rate);
            model.clamp_log_std();
            for (t, s) in [
                (&mut total.loss, stats.loss),
                (&mut total.policy_loss, stats.policy_loss),
                (&mut total.value_loss, stats.value_loss),
                (&mut total.entropy, stats.entropy),
                (&mut total.approx_kl, stats.approx_kl),
                (&mut total.clip_fraction, stats.clip_fraction),
                (&mut total.surrogate, stats.surrogate),
            ] {
                *t += s;
            }
            count += 1.0;
        }
    }
    if count > 0.0 {
        for t in [
            &mut total.loss,
            &mut total.policy_loss,
            &mut total.value_loss,
            &mut total.entropy,
            &mut total.approx_kl,
            &mut total.clip_fraction,
            &mut total.surrogate,
        ] {
            *t /= count;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::sample_action;
    use proptest::prelude::*;
    use rand::Rng;

    #[allow(clippy::needless_range_loop)]
    fn double_loop(rewards: &[f64], values: &[f64], dones: &[bool], last: f64, g: f64, l: f64) -> Vec<f64> {
        let n = rewards.len();
        let v = |t: usize| if t < n { values[t] } else { last };
        let delta = |t: usize| rewards[t] + g * v(t + 1) * if dones[t] { 0.0 } else { 1.0 } - values[t];
        (0..n)
            .map(|t| {
                let mut sum = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    sum += w * delta(k);
                    if dones[k] {
                        break;
                    }
                    w *= g * l;
                }
                sum
            })
            .collect()
    }

    #[test]
    fn gae_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
            let d: Vec<bool> = (0..50).map(|_| rng.random_bool(0.1)).collect();
            let last = rng.random_range(-1.0..1.0);
            let (adv, ret) = gae(&r, &v, &d, last, 0.97, 0.9);
            for (t, want) in double_loop(&r, &v, &d, last, 0.97, 0.9).iter().enumerate() {
                assert!((adv[t] - want).abs() < 1e-10);
                assert!((ret[t] - (adv[t] + v[t])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gae_special_cases() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, -0.5, 0.25];
        let d = [false, false, false];
        let (adv, _) = gae(&r, &v, &d, 1.0, 0.9, 0.0);
        for t in 0..3 {
            let next = if t < 2 { v[t + 1] } else { 1.0 };
            assert_eq!(adv[t], r[t] + 0.9 * next - v[t]);
        }
        let (adv, _) = gae(&r, &[0.0; 3], &d, 0.0, 1.0, 1.0);
        assert_eq!(adv, vec![6.0, 5.0, 3.0]);
    }

    #[test]
    fn advantage_normalization_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut adv: Vec<f64> = (0..1000).map(|_| rng.random_range(-5.0..20.0)).collect();
        normalize_advantages(&mut adv, &[true; 1000]);
        let mean = adv.iter().sum::<f64>() / 1000.0;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 1000.0;
        assert!(mean.abs() < 1e-6);
        assert!((0.99..=1.01).contains(&var));
    }

    fn toy_batch(model: &ActorCritic, n: usize, rng: &mut ChaCha8Rng) -> RolloutBatch {
        let mut b = RolloutBatch::default();
        for i in 0..n {
            let obs: Vec<f64> = (0..model.obs_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = model.forward_normalized(&obs).unwrap();
            let a = sample_action(&out.mean, &out.std, rng);
            b.log_probs.push(log_prob(&out.mean, &model.log_std, &a));
            b.obs.push(obs);
            b.actions.push(a);
            b.values.push(out.value);
            b.rewards.push(rng.random_range(-1.0..1.0));
            b.dones.push(false);
            b.active.push(i % 3 != 0);
            b.advantages.push(rng.random_range(-2.0..2.0));
            b.returns.push(rng.random_range(-2.0..2.0));
        }
        b
    }

    /// Central differences of the full loss against the analytic gradient.
    fn check_gradient(model: &mut ActorCritic, batch: &RolloutBatch, cfg: &PpoConfig) {
        let idx: Vec<usize> = (0..batch.len()).collect();
        let (_, g) = loss_and_grad(model, batch, &idx, cfg).unwrap();
        let loss = |m: &ActorCritic| loss_and_grad(m, batch, &idx, cfg).unwrap().0.loss;
        let h = 1e-6;
        let check = |fd: f64, an: f64, what: &str| {
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "{what}: fd {fd} analytic {an}");
        };
        for i in 0..model.actor.params.len() {
            let orig = model.actor.params[i];
            model.actor.params[i] = orig + h;
            let up = loss(model);
            model.actor.params[i] = orig - h;
            let down = loss(model);
            model.actor.params[i] = orig;
            check((up - down) / (2.0 * h), g.actor[i], &format!("actor {i}"));
        }
        for i in 0..model.critic.params.len() {
            let orig = model.critic.params[i];
            model.critic.params[i] = orig + h;
            let up = loss(model);
            model.critic.params[i] = orig - h;
            let down = loss(model);
            model.critic.params[i] = orig;
            check((up - down) / (2.0 * h), g.critic[i], &format!("critic {i}"));
        }
        for i in 0..model.log_std.len() {
            let orig = model.log_std[i];
            model.log_std[i] = orig + h;
            let up = loss(model);
            model.log_std[i] = orig - h;
            let down = loss(model);
            model.log_std[i] = orig;
            check((up - down) / (2.0 * h), g.log_std[i], &format!("log_std {i}"));
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences_on_toy_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // 1 → 1 actor and critic without hidden layers: four weights
        let mut model = ActorCritic::new(1, 1, &[], 0.8, -0.3, &mut rng);
        model.actor.params = vec![0.7, -0.2];
        model.critic.params = vec![-0.4, 0.3];
        let batch = toy_batch(&model, 40, &mut rng);
        // perturb so that ratios move away from 1 and some clip
        model.actor.params = vec![0.9, -0.1];
        model.log_std[0] = -0.2;
        check_gradient(&mut model, &batch, &PpoConfig { clip_eps: 0.1, ..Default::default() });
    }

    #[test]
    fn loss_gradient_matches_finite_differences_on_hidden_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = ActorCritic::new(3, 2, &[5, 4], 0.5, -0.5, &mut rng);
        model.actor = crate::mlp::Mlp::init(&[3, 5, 4, 2], 1.0, 0.5, &mut rng);
        let batch = toy_batch(&model, 30, &mut rng);
        model.actor.params.iter_mut().for_each(|p| *p *= 1.05);
        check_gradient(&mut model, &batch, &PpoConfig::default());
    }

    #[test]
    fn on_policy_surrogate_equals_mean_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = ActorCritic::new(4, 2, &[6], 0.3, -1.0, &mut rng);
        let batch = toy_batch(&model, 64, &mut rng);
        let idx: Vec<usize> = (0..64).collect();
        let (stats, _) = loss_and_grad(&model, &batch, &idx, &PpoConfig::default()).unwrap();
        let active: Vec<f64> = idx.iter().filter(|&&i| batch.active[i]).map(|&i| batch.advantages[i]).collect();
        let mean = active.iter().sum::<f64>() / active.len() as f64;
        assert!((stats.surrogate - mean).abs() < 1e-12);
        assert_eq!(stats.clip_fraction, 0.0);
    }

    #[test]
    fn zero_advantages_leave_only_value_and_entropy_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = ActorCritic::new(4, 2, &[6], 0.3, -1.0, &mut rng);
        let mut batch = toy_batch(&model, 32, &mut rng);
        batch.advantages.iter_mut().for_each(|a| *a = 0.0);
        let idx: Vec<usize> = (0..32).collect();
        let cfg = PpoConfig::default();
        let (_, g) = loss_and_grad(&model, &batch, &idx, &cfg).unwrap();
        assert!(g.actor.iter().all(|v| *v == 0.0));
        assert!(g.log_std.iter().all(|v| *v == -cfg.entropy_coef));
        assert!(g.critic.iter().any(|v| *v != 0.0));
    }

    proptest! {
        #[test]
        fn clip_fraction_is_a_fraction(shift in -1.0f64..1.0, eps in 0.05f64..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut model = ActorCritic::new(2, 1, &[3], 1.0, -0.5, &mut rng);
            model.actor = crate::mlp::Mlp::init(&[2, 3, 1], 1.0, 0.5, &mut rng);
            let mut batch = toy_batch(&model, 50, &mut rng);
            batch.log_probs.iter_mut().for_each(|l| *l += shift);
            let idx: Vec<usize> = (0..50).collect();
            let (stats, _) = loss_and_grad(&model, &batch, &idx, &PpoConfig { clip_eps: eps, ..Default::default() }).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&stats.clip_fraction));
            // every ratio equals exp(−shift); no clipping once ε covers it
            if eps >= ((-shift).exp() - 1.0).abs() + 1e-9 {
                prop_assert_eq!(stats.clip_fraction, 0.0);
            }
        }
    }
}
