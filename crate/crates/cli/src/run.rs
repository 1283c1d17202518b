//! Running batches of episodes with the nominal controller alone or with a
//! residual policy on top.

use anyhow::{Context, Result};
use crane_core::log::EpisodeLog;
use crane_core::{CraneEnv, EnvConfig, Side, ACT_DIM};
use crane_policy::ActorCritic;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Episode seeds and sides: alternating left/right, so `n` episodes give
/// ⌈n/2⌉ left and ⌊n/2⌋ right.
pub fn episode_plan(seed: u64, n: usize) -> Vec<(u64, Side)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    (0..n).map(|i| (rng.next_u64(), if i % 2 == 0 { Side::Left } else { Side::Right })).collect()
}

/// A trained residual policy acting every `action_repeat` steps with its
/// mean action.
#[derive(Debug, Clone)]
pub struct ResidualPolicy {
    pub model: ActorCritic,
    pub action_repeat: usize,
}

/// Runs one recorded episode. The action is chosen at the start of each
/// block of `action_repeat` steps and held, zero when the residual is
/// gated off at that moment.
pub fn run_episode(env: &mut CraneEnv, seed: u64, side: Side, policy: Option<&ResidualPolicy>) -> Result<EpisodeLog> {
    env.set_recording(true);
    env.reset_with_side(seed, Some(side))?;
    let zero = vec![0.0; ACT_DIM];
    let mut action = zero.clone();
    let mut obs = env.observe().to_vec();
    let mut t = 0usize;
    loop {
        if let Some(p) = policy {
            if t % p.action_repeat.max(1) == 0 {
                action = if env.residual_active() { p.model.forward(&obs)?.mean } else { zero.clone() };
            }
        }
        let out = env.step(&action)?;
        t += 1;
        if out.done {
            break;
        }
        obs = out.observation.to_vec();
    }
    env.take_log().context("episode log missing")
}

/// Runs the plan in parallel; results keep the plan's order.
pub fn run_episodes(config: &EnvConfig, plan: &[(u64, Side)], policy: Option<&ResidualPolicy>) -> Result<Vec<EpisodeLog>> {
    config.validate()?;
    plan.par_iter()
        .map_init(|| CraneEnv::new(config.clone()), |env, &(seed, side)| {
            let env = env.as_mut().map_err(|e| anyhow::anyhow!("{e}"))?;
            run_episode(env, seed, side, policy)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_splits_sides_evenly() {
        let p = episode_plan(1, 2);
        assert_eq!(p.iter().map(|x| x.1).collect::<Vec<_>>(), vec![Side::Left, Side::Right]);
        let p = episode_plan(1, 7);
        assert_eq!(p.iter().filter(|x| x.1 == Side::Left).count(), 4);
        assert_eq!(episode_plan(3, 5), episode_plan(3, 5));
        assert_ne!(episode_plan(3, 5), episode_plan(4, 5));
    }
}
