use crane_core::env::{run_nominal_episode, EnvConfig};
use crane_core::CraneEnv;
use crane_policy::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use crane_policy::env::{ActionRepeat, Environment, Transition};
use crane_policy::train::eval_seeds;
use crane_policy::{evaluate, PpoConfig, Result, ToyEnv, Trainer};

fn toy_config() -> PpoConfig {
    PpoConfig {
        num_envs: 4,
        rollout_len: 64,
        minibatch_size: 64,
        hidden: vec![8],
        learning_rate: 3e-3,
        init_log_std: -0.5,
        entropy_coef: 0.0,
        eval_episodes: 4,
        eval_every: 1,
        ..PpoConfig::default()
    }
}

fn toy_trainer(cfg: PpoConfig) -> Trainer<ToyEnv> {
    let mut t = Trainer::new(cfg, |_| Ok(ToyEnv::default()), 1.0).unwrap();
    // start away from the optimum: mean = tanh(0.6) ≈ 0.54
    t.model.actor.output_bias_mut()[0] = 0.6;
    t
}

fn toy_mean(t: &Trainer<ToyEnv>) -> f64 {
    let probes = [-0.9, -0.3, 0.0, 0.4, 0.8];
    probes.iter().map(|&x| t.model.forward(&[x]).unwrap().mean[0].abs()).fold(0.0, f64::max)
}

#[test]
fn toy_task_converges_to_zero_mean() {
    let mut t = toy_trainer(toy_config());
    assert!(toy_mean(&t) > 0.5);
    let mut converged = None;
    for it in 0..50 {
        t.iterate().unwrap();
        if toy_mean(&t) < 0.05 {
            converged = Some(it);
            break;
        }
    }
    assert!(converged.is_some(), "mean still {}", toy_mean(&t));
}

#[test]
fn identical_seeds_give_identical_curves() {
    let run = |seed| {
        let mut t = toy_trainer(PpoConfig { seed, ..toy_config() });
        let curve = t.run(5, |_| {}).unwrap();
        (curve, t.model)
    };
    let (a, ma) = run(3);
    let (b, mb) = run(3);
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    assert_eq!(ma, mb);
    let (c, _) = run(4);
    assert_ne!(format!("{a:?}"), format!("{c:?}"));
}

#[test]
fn resume_continues_the_iteration_counter_and_trajectory() {
    let mut full = toy_trainer(toy_config());
    let curve = full.run(4, |_| {}).unwrap();

    let mut first = toy_trainer(toy_config());
    first.run(2, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    Checkpoint {
        version: CHECKPOINT_VERSION,
        iteration: first.iteration,
        config_hash: String::new(),
        manifest: String::new(),
        ppo: first.config.clone(),
        model: first.model.clone(),
        optimizer: first.opt.clone(),
    }
    .save(&path)
    .unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    let mut resumed = Trainer::resume(ck.ppo, |_| Ok(ToyEnv::default()), ck.model, ck.optimizer, ck.iteration).unwrap();
    let rest = resumed.run(2, |_| {}).unwrap();
    assert_eq!(rest.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![2, 3]);
    assert_eq!(resumed.iteration, 4);
    assert!(rest.iter().zip(&curve[2..]).all(|(a, b)| a.iteration == b.iteration && a.env_steps == b.env_steps));
    assert!(rest.iter().all(|r| r.policy_loss.is_finite() && r.value_loss.is_finite()));
}

#[test]
fn zero_learning_rate_policy_matches_the_nominal_controller() {
    let cfg = PpoConfig {
        num_envs: 1,
        rollout_len: 32,
        minibatch_size: 32,
        epochs: 1,
        learning_rate: 0.0,
        hidden: vec![16],
        eval_episodes: 0,
        ..PpoConfig::default()
    };
    let env_cfg = EnvConfig::default();
    let u_max = env_cfg.task.u_res_max;
    let mut t = Trainer::new(cfg, |_| Ok(CraneEnv::new(env_cfg.clone())?), u_max).unwrap();
    t.iterate().unwrap();

    let seeds = eval_seeds(0, 2);
    let mut env = ActionRepeat::new(CraneEnv::new(env_cfg.clone()).unwrap(), 1);
    let res = evaluate(&t.model, &mut env, &seeds).unwrap();
    let mut nominal = CraneEnv::new(env_cfg).unwrap();
    for (r, &seed) in res.iter().zip(&seeds) {
        let infos = run_nominal_episode(&mut nominal, seed, None).unwrap();
        assert_eq!(r.steps, infos.len());
        assert_eq!(r.success, infos.last().unwrap().success);
        let ret: f64 = infos.iter().map(|i| i.reward.total).sum();
        assert!((r.ret - ret).abs() < 1e-9 * ret.abs().max(1.0));
    }
}

/// Records every action it receives; reward is the step count.
struct Counter {
    t: usize,
    seen: Vec<f64>,
    end: usize,
}

impl Environment for Counter {
    fn obs_dim(&self) -> usize {
        1
    }
    fn act_dim(&self) -> usize {
        1
    }
    fn reset(&mut self, _seed: u64) -> Result<Vec<f64>> {
        self.t = 0;
        Ok(vec![0.0])
    }
    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        self.t += 1;
        self.seen.push(action[0]);
        let done = self.t >= self.end;
        Ok(Transition { obs: vec![self.t as f64], reward: 1.0, done, truncated: done, success: done })
    }
}

#[test]
fn action_repeat_holds_actions_and_sums_rewards() {
    let mut env = ActionRepeat::new(Counter { t: 0, seen: vec![], end: 7 }, 3);
    env.reset(0).unwrap();
    let a = env.step(&[0.5]).unwrap();
    assert_eq!((a.reward, a.done, a.obs[0]), (3.0, false, 3.0));
    let b = env.step(&[-1.0]).unwrap();
    assert_eq!(b.reward, 3.0);
    // stops early on termination
    let c = env.step(&[2.0]).unwrap();
    assert_eq!((c.reward, c.done, c.truncated), (1.0, true, true));
    assert_eq!(env.inner.seen, vec![0.5, 0.5, 0.5, -1.0, -1.0, -1.0, 2.0]);
    assert_eq!(ActionRepeat::new(Counter { t: 0, seen: vec![], end: 1 }, 0).k, 1);
}
