use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use crane_cli::commands::{cmd_ablate, cmd_demo, cmd_eval, cmd_robust, cmd_train};
use crane_cli::config::parse_band;
use crane_cli::{ExperimentConfig, Invocation};
use crane_core::env::ResidualMode;

#[derive(Parser)]
#[command(name = "crane-rrl", version, about = "Train and evaluate residual policies for crane container lifting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for training (train) or for the evaluation episodes (others).
    #[arg(long, global = true, env = "CRANE_RRL_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "CRANE_RRL_OUT", default_value = "out")]
    out: PathBuf,
    /// Episodes per evaluated condition.
    #[arg(long, global = true)]
    episodes: Option<usize>,
    /// Policy checkpoint; for `train` the run resumes from it.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Randomization scale band LO:HI (ignored by `robust`, which sweeps
    /// the configured bands).
    #[arg(long, global = true, value_parser = parse_band)]
    band: Option<[f64; 2]>,
    /// How the residual combines with the nominal command.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Disable the anti-sway term of the nominal controller.
    #[arg(long, global = true)]
    no_anti_sway: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a residual policy with PPO.
    Train {
        /// Override the iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Two iterations on two environments, for checking the pipeline.
        #[arg(long)]
        smoke: bool,
    },
    /// Evaluate the nominal controller or a checkpoint.
    Eval,
    /// Evaluate under each configured scale band.
    Robust,
    /// Compare tracking-only, anti-sway and residual variants.
    Ablate {
        /// Residual policy trained without anti-sway.
        #[arg(long)]
        checkpoint_no_anti_sway: Option<PathBuf>,
    },
    /// Run one episode and dump its series for plotting.
    Demo,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Additive,
    Blend,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::Train { .. } => config.ppo.seed = seed,
            _ => config.eval.seed = seed,
        }
    }
    if let Some(n) = cli.episodes {
        config.eval.episodes = n;
    }
    if let Some(band) = cli.band {
        config.env.randomization.scale_range = band;
    }
    if let Some(mode) = cli.mode {
        config.env.task.residual_mode = match mode {
            Mode::Additive => ResidualMode::Additive,
            Mode::Blend => ResidualMode::Blend,
        };
    }
    if cli.no_anti_sway {
        config.env.ablation.anti_sway = false;
    }
    if let Command::Train { iterations, smoke } = &cli.command {
        if *smoke {
            config.ppo.iterations = 2;
            config.ppo.num_envs = 2;
            config.ppo.rollout_len = config.ppo.rollout_len.min(64);
            config.ppo.eval_episodes = config.ppo.eval_episodes.min(2);
        }
        if let Some(n) = iterations {
            config.ppo.iterations = *n;
        }
    }
    config.validate()?;
    let inv = Invocation { config, config_path: cli.config.clone(), out: cli.out.clone() };
    let ck = cli.checkpoint.as_deref();
    match &cli.command {
        Command::Train { .. } => {
            let out = cmd_train(&inv, ck, |r| {
                eprintln!(
                    "iteration {:4}  return {:9.2}  success {:.3}  eval success {:.3}  kl {:.4}  clip {:.3}",
                    r.iteration, r.mean_return, r.success_rate, r.eval_success, r.approx_kl, r.clip_fraction
                )
            })?;
            eprintln!("wrote {} (best: iteration {}, {})", out.checkpoint.display(), out.best_iteration, out.best.display());
        }
        Command::Eval => print_table(&cmd_eval(&inv, ck)?.table),
        Command::Robust => print_table(&cmd_robust(&inv, ck)?.table),
        Command::Ablate { checkpoint_no_anti_sway } => print_table(&cmd_ablate(&inv, ck, checkpoint_no_anti_sway.as_deref())?.table),
        Command::Demo => {
            let log = cmd_demo(&inv, ck)?;
            if let Some(s) = log.summary() {
                eprintln!("seed {} {:?}: {:?} after {} steps, success {}", s.seed, s.side, s.event, s.steps, s.success);
            }
        }
    }
    Ok(())
}

fn print_table(table: &crane_cli::metrics::MetricsTable) {
    println!("{:<26} {:>8} {:>10} {:>10} {:>10} {:>10}", "condition", "success", "track[m]", "track_win", "swing@lift", "swing_win");
    for r in &table.rows {
        println!(
            "{:<26} {:>8.3} {:>10.4} {:>10.4} {:>10.3} {:>10.3}",
            r.label, r.success_rate, r.tracking.mean, r.tracking_window.mean, r.swing_lift.mean, r.swing_window.mean
        );
    }
    for (label, reason) in &table.skipped {
        println!("{label:<26} skipped: {reason}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": e.to_string(),
                "causes": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
