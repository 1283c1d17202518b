//! The five subcommands. Each writes its artifacts plus `manifest.json`
//! into the output directory and returns what it wrote for programmatic
//! use.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crane_core::log::EpisodeLog;
use crane_core::{CraneEnv, EnvConfig, ACT_DIM, OBS_DIM};
use crane_policy::checkpoint::CHECKPOINT_VERSION;
use crane_policy::train::eval_seeds;
use crane_policy::{evaluate, ActionRepeat, Checkpoint, CurveRow, Trainer};

use crate::config::ExperimentConfig;
use crate::manifest::ExperimentManifest;
use crate::metrics::{aggregate, effective_window, MetricsTable, CSV_HEADER};
use crate::output::{csv_with_manifest, episodes_jsonl, f6, write_atomic};
use crate::run::{episode_plan, run_episodes, ResidualPolicy};

/// A resolved configuration and where to put the results.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: ExperimentConfig,
    pub config_path: Option<PathBuf>,
    pub out: PathBuf,
}

impl Invocation {
    fn manifest(&self, command: &str, seed: u64) -> ExperimentManifest {
        ExperimentManifest::new(command, self.config_path.as_deref(), self.config.hash(), seed, &self.out)
    }
}

/// Loads a checkpoint as an evaluation policy. A config hash that differs
/// from the current one is recorded as a warning.
pub fn load_policy(path: &Path, config: &ExperimentConfig, warnings: &mut Vec<String>) -> Result<ResidualPolicy> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if ck.model.obs_dim() != OBS_DIM || ck.model.act_dim() != ACT_DIM {
        bail!("checkpoint {} has dimensions {}→{}, expected {OBS_DIM}→{ACT_DIM}", path.display(), ck.model.obs_dim(), ck.model.act_dim());
    }
    if ck.config_hash != config.hash() {
        warnings.push(format!("checkpoint {} was trained under config {} (current {})", path.display(), ck.config_hash, config.hash()));
    }
    Ok(ResidualPolicy { model: ck.model, action_repeat: ck.ppo.action_repeat })
}

fn write_table(dir: &Path, manifest_hash: &str, table: &MetricsTable) -> Result<()> {
    let rows: Vec<Vec<String>> = table.rows.iter().map(|r| r.csv_record()).collect();
    write_atomic(&dir.join("metrics.csv"), &csv_with_manifest(manifest_hash, &CSV_HEADER, &rows)?)
}

#[derive(Debug)]
pub struct TrainOutput {
    pub curve: Vec<CurveRow>,
    pub checkpoint: PathBuf,
    /// Checkpoint with the best evaluation score seen, including the
    /// untrained policy.
    pub best: PathBuf,
    pub best_iteration: usize,
}

pub const CURVE_HEADER: [&str; 12] = [
    "iteration",
    "env_steps",
    "episodes",
    "mean_return",
    "success_rate",
    "eval_return",
    "eval_success",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_fraction",
];

fn curve_record(r: &CurveRow) -> Vec<String> {
    let mut v = vec![r.iteration.to_string(), r.env_steps.to_string(), r.episodes.to_string()];
    for x in [r.mean_return, r.success_rate, r.eval_return, r.eval_success, r.policy_loss, r.value_loss, r.entropy, r.approx_kl, r.clip_fraction] {
        v.push(f6(x));
    }
    v
}

/// Trains for `config.ppo.iterations` iterations, from scratch or
/// continuing `resume`.
pub fn cmd_train(inv: &Invocation, resume: Option<&Path>, mut on_row: impl FnMut(&CurveRow)) -> Result<TrainOutput> {
    let cfg = &inv.config;
    let manifest = inv.manifest("train", cfg.ppo.seed);
    let mhash = manifest.hash();
    let env_cfg = cfg.env.clone();
    let factory = |_| CraneEnv::new(env_cfg.clone()).map_err(Into::into);
    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            Trainer::resume(cfg.ppo.clone(), factory, ck.model, ck.optimizer, ck.iteration)?
        }
        None => Trainer::new(cfg.ppo.clone(), factory, cfg.env.task.u_res_max)?,
    };
    let checkpoint = |t: &Trainer<CraneEnv>| Checkpoint {
        version: CHECKPOINT_VERSION,
        iteration: t.iteration,
        config_hash: cfg.hash(),
        manifest: mhash.clone(),
        ppo: cfg.ppo.clone(),
        model: t.model.clone(),
        optimizer: t.opt.clone(),
    };

    let seeds = eval_seeds(cfg.ppo.seed, cfg.ppo.eval_episodes);
    let score = |t: &Trainer<CraneEnv>| -> Result<(f64, f64)> {
        let mut env = ActionRepeat::new(CraneEnv::new(cfg.env.clone())?, cfg.ppo.action_repeat);
        let res = evaluate(&t.model, &mut env, &seeds)?;
        let n = res.len().max(1) as f64;
        Ok((res.iter().filter(|r| r.success).count() as f64 / n, res.iter().map(|r| r.ret).sum::<f64>() / n))
    };
    let mut best = (checkpoint(&trainer), if seeds.is_empty() { (f64::NEG_INFINITY, f64::NEG_INFINITY) } else { score(&trainer)? });

    let mut curve = Vec::with_capacity(cfg.ppo.iterations);
    for _ in 0..cfg.ppo.iterations {
        let row = trainer.iterate()?;
        on_row(&row);
        if row.eval_success.is_finite() && (row.eval_success, row.eval_return) > best.1 {
            best = (checkpoint(&trainer), (row.eval_success, row.eval_return));
        }
        curve.push(row);
    }

    let ck_path = inv.out.join("checkpoint.json");
    let best_path = inv.out.join("best.json");
    std::fs::create_dir_all(&inv.out)?;
    checkpoint(&trainer).save(&ck_path)?;
    best.0.save(&best_path)?;
    let rows: Vec<Vec<String>> = curve.iter().map(curve_record).collect();
    write_atomic(&inv.out.join("curve.csv"), &csv_with_manifest(&mhash, &CURVE_HEADER, &rows)?)?;
    manifest.write(&inv.out)?;
    Ok(TrainOutput { curve, checkpoint: ck_path, best: best_path, best_iteration: best.0.iteration })
}

#[derive(Debug)]
pub struct EvalOutput {
    pub table: MetricsTable,
    /// Episode logs per table row, in row order.
    pub logs: Vec<Vec<EpisodeLog>>,
    pub manifest: ExperimentManifest,
}

pub fn cmd_eval(inv: &Invocation, checkpoint: Option<&Path>) -> Result<EvalOutput> {
    let cfg = &inv.config;
    let mut manifest = inv.manifest("eval", cfg.eval.seed);
    let policy = checkpoint.map(|p| load_policy(p, cfg, &mut manifest.warnings)).transpose()?;
    let plan = episode_plan(cfg.eval.seed, cfg.eval.episodes);
    let logs = run_episodes(&cfg.env, &plan, policy.as_ref())?;
    let label = if policy.is_some() { "rrl" } else { "nominal" };
    let table = MetricsTable { rows: vec![aggregate(label, &logs, effective_window(cfg.eval.window, cfg.env.task.horizon))], skipped: vec![] };
    let mhash = manifest.hash();
    write_table(&inv.out, &mhash, &table)?;
    write_atomic(&inv.out.join("episodes.jsonl"), &episodes_jsonl(&mhash, &logs)?)?;
    manifest.write(&inv.out)?;
    Ok(EvalOutput { table, logs: vec![logs], manifest })
}

pub fn band_label(band: [f64; 2]) -> String {
    format!("scale_{}_{}", band[0], band[1])
}

/// Evaluates one policy (or the nominal controller) under each scale band
/// of `eval.bands`, with shared episode seeds.
pub fn cmd_robust(inv: &Invocation, checkpoint: Option<&Path>) -> Result<EvalOutput> {
    let cfg = &inv.config;
    let mut manifest = inv.manifest("robust", cfg.eval.seed);
    let policy = checkpoint.map(|p| load_policy(p, cfg, &mut manifest.warnings)).transpose()?;
    let plan = episode_plan(cfg.eval.seed, cfg.eval.episodes);
    let mhash = manifest.hash();
    let mut table = MetricsTable::default();
    let mut all = Vec::new();
    for &band in &cfg.eval.bands {
        let mut env = cfg.env.clone();
        env.randomization.scale_range = band;
        let logs = run_episodes(&env, &plan, policy.as_ref())?;
        let label = band_label(band);
        table.rows.push(aggregate(&label, &logs, effective_window(cfg.eval.window, cfg.env.task.horizon)));
        write_atomic(&inv.out.join(format!("episodes_{label}.jsonl")), &episodes_jsonl(&mhash, &logs)?)?;
        all.push(logs);
    }
    write_table(&inv.out, &mhash, &table)?;
    manifest.write(&inv.out)?;
    Ok(EvalOutput { table, logs: all, manifest })
}

pub const ABLATION_LABELS: [&str; 4] = ["tracking", "tracking+rrl", "tracking+anti_swing", "tracking+anti_swing+rrl"];

/// Environment config for an ablation variant.
pub fn variant_env(base: &EnvConfig, anti_sway: bool) -> EnvConfig {
    let mut env = base.clone();
    env.ablation.anti_sway = anti_sway;
    env
}

/// The four controller variants with shared seeds. `rrl_anti_sway` and
/// `rrl_plain` are policies trained with and without anti-sway; a missing
/// one skips its row.
pub fn cmd_ablate(inv: &Invocation, rrl_anti_sway: Option<&Path>, rrl_plain: Option<&Path>) -> Result<EvalOutput> {
    let cfg = &inv.config;
    let mut manifest = inv.manifest("ablate", cfg.eval.seed);
    let plan = episode_plan(cfg.eval.seed, cfg.eval.episodes);
    let mhash = manifest.hash();
    let mut table = MetricsTable::default();
    let mut all = Vec::new();
    for (label, anti_sway, ck) in [
        (ABLATION_LABELS[0], false, None),
        (ABLATION_LABELS[1], false, Some(rrl_plain)),
        (ABLATION_LABELS[2], true, None),
        (ABLATION_LABELS[3], true, Some(rrl_anti_sway)),
    ] {
        let policy = match ck {
            None => None,
            Some(None) => {
                let reason = "no checkpoint given".to_string();
                manifest.warnings.push(format!("row {label} skipped: {reason}"));
                table.skipped.push((label.to_string(), reason));
                continue;
            }
            Some(Some(path)) => {
                let ck = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
                Some(ResidualPolicy { model: ck.model, action_repeat: ck.ppo.action_repeat })
            }
        };
        let logs = run_episodes(&variant_env(&cfg.env, anti_sway), &plan, policy.as_ref())?;
        table.rows.push(aggregate(label, &logs, effective_window(cfg.eval.window, cfg.env.task.horizon)));
        let file = format!("episodes_{}.jsonl", label.replace('+', "_"));
        write_atomic(&inv.out.join(file), &episodes_jsonl(&mhash, &logs)?)?;
        all.push(logs);
    }
    write_table(&inv.out, &mhash, &table)?;
    manifest.write(&inv.out)?;
    Ok(EvalOutput { table, logs: all, manifest })
}

pub const DEMO_HEADER: [&str; 10] = ["step", "ref_x", "ref_y", "ref_z", "tcp_x", "tcp_y", "tcp_z", "tube_delta", "swing_deg", "segment"];

/// One episode as plotting-ready series plus its full log.
pub fn cmd_demo(inv: &Invocation, checkpoint: Option<&Path>) -> Result<EpisodeLog> {
    let cfg = &inv.config;
    let mut manifest = inv.manifest("demo", cfg.eval.seed);
    let policy = checkpoint.map(|p| load_policy(p, cfg, &mut manifest.warnings)).transpose()?;
    let plan = episode_plan(cfg.eval.seed, 1);
    let log = run_episodes(&cfg.env, &plan, policy.as_ref())?.remove(0);
    let rows: Vec<Vec<String>> = log
        .steps()
        .map(|s| {
            let mut r = vec![s.step.to_string()];
            r.extend(s.p_ref.iter().chain(&s.p_tcp).map(|&x| f6(x)));
            r.push(f6(s.tube_delta));
            r.push(f6(s.swing_angle.to_degrees()));
            r.push(format!("{:?}", s.segment));
            r
        })
        .collect();
    let mhash = manifest.hash();
    write_atomic(&inv.out.join("demo.csv"), &csv_with_manifest(&mhash, &DEMO_HEADER, &rows)?)?;
    write_atomic(&inv.out.join("episode.jsonl"), &episodes_jsonl(&mhash, std::slice::from_ref(&log))?)?;
    manifest.write(&inv.out)?;
    Ok(log)
}
