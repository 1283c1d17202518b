//! Vectorized rollouts and the PPO training loop.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{ActionRepeat, Environment};
use crate::error::{PolicyError, Result};
use crate::policy::{log_prob, sample_action, ActorCritic};
use crate::ppo::{gae, normalize_advantages, ppo_update, Optimizers, PpoConfig, RolloutBatch};

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub env_steps: u64,
    /// Episodes finished during this iteration's rollouts.
    pub episodes: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    /// Deterministic (mean-action) evaluation on fixed seeds; NaN if skipped.
    pub eval_return: f64,
    pub eval_success: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeResult {
    pub ret: f64,
    pub success: bool,
    pub steps: usize,
}

struct Worker<E> {
    env: E,
    obs: Vec<f64>,
    seeds: ChaCha8Rng,
    noise: ChaCha8Rng,
    ep_return: f64,
}

struct Segment {
    batch: RolloutBatch,
    raw_obs: Vec<Vec<f64>>,
    last_value: f64,
    finished: Vec<EpisodeResult>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<E: Environment> Worker<E> {
    fn collect(&mut self, model: &ActorCritic, steps: usize, cfg: &PpoConfig) -> Result<Segment> {
        let mut b = RolloutBatch::default();
        let mut raw_obs = Vec::with_capacity(steps);
        let mut finished = Vec::new();
        let mut ep_steps = 0;
        let act_dim = model.act_dim();
        for _ in 0..steps {
            let x = model.norm.normalize(&self.obs);
            let out = model.forward_normalized(&x)?;
            let active = self.env.action_active();
            let action = if active { sample_action(&out.mean, &out.std, &mut self.noise) } else { vec![0.0; act_dim] };
            let lp = log_prob(&out.mean, &model.log_std, &action);
            let tr = self.env.step(&action)?;
            let mut reward = tr.reward * cfg.reward_scale;
            if tr.truncated {
                reward += cfg.gamma * model.forward(&tr.obs)?.value;
            }
            self.ep_return += tr.reward;
            ep_steps += 1;
            raw_obs.push(std::mem::replace(&mut self.obs, tr.obs));
            b.obs.push(x);
            b.actions.push(action);
            b.log_probs.push(lp);
            b.rewards.push(reward);
            b.values.push(out.value);
            b.dones.push(tr.done);
            b.active.push(active);
            if tr.done {
                finished.push(EpisodeResult { ret: self.ep_return, success: tr.success, steps: ep_steps });
                self.ep_return = 0.0;
                ep_steps = 0;
                self.obs = self.env.reset(self.seeds.next_u64())?;
            }
        }
        let last_value = model.forward(&self.obs)?.value;
        Ok(Segment { batch: b, raw_obs, last_value, finished })
    }
}

/// Runs one episode per seed with the mean action. A policy trained with
/// `action_repeat` > 1 should be evaluated through [`ActionRepeat`].
pub fn evaluate<E: Environment>(model: &ActorCritic, env: &mut E, seeds: &[u64]) -> Result<Vec<EpisodeResult>> {
    let zero = vec![0.0; model.act_dim()];
    seeds
        .iter()
        .map(|&seed| {
            let mut obs = env.reset(seed)?;
            let mut ret = 0.0;
            let mut steps = 0;
            loop {
                let action = if env.action_active() { model.forward(&obs)?.mean } else { zero.clone() };
                let tr = env.step(&action)?;
                ret += tr.reward;
                steps += 1;
                obs = tr.obs;
                if tr.done {
                    return Ok(EpisodeResult { ret, success: tr.success, steps });
                }
            }
        })
        .collect()
}

/// Fixed evaluation seeds derived from the training seed.
pub fn eval_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = stream(seed, 0);
    (0..n).map(|_| rng.next_u64()).collect()
}

pub struct Trainer<E: Environment> {
    pub config: PpoConfig,
    pub model: ActorCritic,
    pub opt: Optimizers,
    pub iteration: usize,
    workers: Vec<Worker<ActionRepeat<E>>>,
    eval_env: ActionRepeat<E>,
    eval_seeds: Vec<u64>,
}

impl<E: Environment> Trainer<E> {
    /// Fresh model; `factory(i)` builds environment `i` (index `num_envs`
    /// is the evaluation environment).
    pub fn new(config: PpoConfig, factory: impl Fn(usize) -> Result<E>, action_scale: f64) -> Result<Self> {
        config.validate()?;
        let probe = factory(config.num_envs)?;
        let mut rng = stream(config.seed, u64::MAX);
        let model = ActorCritic::new(probe.obs_dim(), probe.act_dim(), &config.hidden, action_scale, config.init_log_std, &mut rng);
        let opt = Optimizers::new(&model);
        Self::resume(config, factory, model, opt, 0)
    }

    /// Continue from saved parameters and optimizer state.
    pub fn resume(config: PpoConfig, factory: impl Fn(usize) -> Result<E>, model: ActorCritic, opt: Optimizers, iteration: usize) -> Result<Self> {
        config.validate()?;
        let mut workers = Vec::with_capacity(config.num_envs);
        for i in 0..config.num_envs {
            let mut env = ActionRepeat::new(factory(i)?, config.action_repeat);
            if env.obs_dim() != model.obs_dim() || env.act_dim() != model.act_dim() {
                return Err(PolicyError::Dimension { expected: model.obs_dim(), got: env.obs_dim() });
            }
            let mut seeds = stream(config.seed, 2 * i as u64 + 1);
            let obs = env.reset(seeds.next_u64())?;
            workers.push(Worker { env, obs, seeds, noise: stream(config.seed, 2 * i as u64 + 2), ep_return: 0.0 });
        }
        let eval_env = ActionRepeat::new(factory(config.num_envs)?, config.action_repeat);
        let eval_seeds = eval_seeds(config.seed, config.eval_episodes);
        Ok(Self { config, model, opt, iteration, workers, eval_env, eval_seeds })
    }

    pub fn iterate(&mut self) -> Result<CurveRow> {
        let cfg = &self.config;
        let model = &self.model;
        let segments: Vec<Result<Segment>> = self.workers.par_iter_mut().map(|w| w.collect(model, cfg.rollout_len, cfg)).collect();

        let mut batch = RolloutBatch::default();
        let mut raw = Vec::new();
        let mut finished = Vec::new();
        for seg in segments {
            let mut seg = seg?;
            let (adv, ret) = gae(&seg.batch.rewards, &seg.batch.values, &seg.batch.dones, seg.last_value, cfg.gamma, cfg.gae_lambda);
            seg.batch.advantages = adv;
            seg.batch.returns = ret;
            let b = seg.batch;
            batch.obs.extend(b.obs);
            batch.actions.extend(b.actions);
            batch.log_probs.extend(b.log_probs);
            batch.rewards.extend(b.rewards);
            batch.values.extend(b.values);
            batch.dones.extend(b.dones);
            batch.active.extend(b.active);
            batch.advantages.extend(b.advantages);
            batch.returns.extend(b.returns);
            raw.extend(seg.raw_obs);
            finished.extend(seg.finished);
        }
        normalize_advantages(&mut batch.advantages, &batch.active);

        let mut shuffle = stream(cfg.seed, (1 << 32) + self.iteration as u64);
        let stats = ppo_update(&mut self.model, &mut self.opt, &batch, cfg, shuffle.next_u64())?;
        self.model.norm.update(raw.iter().map(|r| r.as_slice()));

        let (eval_return, eval_success) = if !self.eval_seeds.is_empty() && self.iteration % cfg.eval_every.max(1) == 0 {
            let res = evaluate(&self.model, &mut self.eval_env, &self.eval_seeds)?;
            let n = res.len() as f64;
            (res.iter().map(|r| r.ret).sum::<f64>() / n, res.iter().filter(|r| r.success).count() as f64 / n)
        } else {
            (f64::NAN, f64::NAN)
        };

        let n = finished.len();
        let row = CurveRow {
            iteration: self.iteration,
            env_steps: (batch.len() * (self.iteration + 1)) as u64,
            episodes: n,
            mean_return: if n > 0 { finished.iter().map(|e| e.ret).sum::<f64>() / n as f64 } else { f64::NAN },
            success_rate: if n > 0 { finished.iter().filter(|e| e.success).count() as f64 / n as f64 } else { f64::NAN },
            eval_return,
            eval_success,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_fraction: stats.clip_fraction,
        };
        self.iteration += 1;
        Ok(row)
    }

    pub fn run(&mut self, iterations: usize, mut on_row: impl FnMut(&CurveRow)) -> Result<Vec<CurveRow>> {
        (0..iterations)
            .map(|_| {
                let row = self.iterate()?;
                on_row(&row);
                Ok(row)
            })
            .collect()
    }
}

/// Train for `config.iterations` iterations from scratch.
pub fn train<E: Environment>(factory: impl Fn(usize) -> Result<E>, config: PpoConfig, action_scale: f64) -> Result<(Trainer<E>, Vec<CurveRow>)> {
    let iterations = config.iterations;
    let mut trainer = Trainer::new(config, factory, action_scale)?;
    let curve = trainer.run(iterations, |_| {})?;
    Ok((trainer, curve))
}
