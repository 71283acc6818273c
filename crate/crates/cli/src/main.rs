//! `spry` — sparse-view volume rendering pipeline.
//!
//! Subcommands: `synth` (generate an analytic scene), `pretrain`,
//! `finetune`, `render`, `eval`. Exit codes: 0 success, 1 usage error,
//! 2 runtime failure.

mod commands;
mod config;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::UsageError;
use config::{Overrides, RunConfig};
use spry_core::trainer::{FreezePolicy, Stage};

#[derive(Parser)]
#[command(
    name = "spry",
    about = "Sparse-view neural volume rendering: synthesize, pretrain, fine-tune, render, evaluate",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override train.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the stage-appropriate iteration count.
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Override train.rays_per_batch.
    #[arg(long, global = true)]
    rays_per_batch: Option<usize>,
    /// Override the stage-appropriate learning rate.
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Override train.lambda_depth (0 disables depth supervision).
    #[arg(long, global = true)]
    lambda_depth: Option<f64>,
    /// Override train.freeze_policy.
    #[arg(long, global = true, value_enum)]
    freeze: Option<FreezeArg>,
    /// Override render.n_samples.
    #[arg(long, global = true)]
    n_samples: Option<usize>,
    /// Override train.eval_every.
    #[arg(long, global = true)]
    eval_every: Option<usize>,
    /// Enable or disable the coarse-to-fine encoding window.
    #[arg(long, global = true)]
    c2f: Option<bool>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum FreezeArg {
    None,
    FreezeEncoder,
    FreezeRendering,
}

impl From<FreezeArg> for FreezePolicy {
    fn from(f: FreezeArg) -> Self {
        match f {
            FreezeArg::None => FreezePolicy::None,
            FreezeArg::FreezeEncoder => FreezePolicy::FreezeEncoder,
            FreezeArg::FreezeRendering => FreezePolicy::FreezeRendering,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sphere scene with analytic ground truth.
    Synth {
        /// Output scene directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Pretrain across scene directories.
    Pretrain {
        /// Scene directories (each holding scene.json).
        #[arg(long, required = true, num_args = 1..)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fine-tune a pretrained checkpoint on one scene's input views.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Number of input views (the 1/2/3-view tracks).
        #[arg(long, default_value_t = 3)]
        views: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Render RGB + depth at scene poses from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Pose (frame) indices; all frames when omitted.
        #[arg(long, num_args = 0.., value_delimiter = ',')]
        poses: Vec<usize>,
        /// Conditioning views for the render.
        #[arg(long, default_value_t = 3)]
        views: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate PSNR and Chamfer distance per view-count condition.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// View-count conditions, e.g. 1,2,3.
        #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = [1usize, 2, 3])]
        views: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn resolved_config(common: &CommonArgs, stage: Option<Stage>) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())
        .map_err(|e| anyhow::Error::new(UsageError(format!("{e:#}"))))?;
    let overrides = Overrides {
        seed: common.seed,
        iterations: common.iterations,
        rays_per_batch: common.rays_per_batch,
        lr: common.lr,
        lambda_depth: common.lambda_depth,
        freeze: common.freeze.map(Into::into),
        n_samples: common.n_samples,
        eval_every: common.eval_every,
        c2f: common.c2f,
    };
    cfg.apply(&overrides, stage);
    cfg.validate()
        .map_err(|e| anyhow::Error::new(UsageError(format!("{e:#}"))))?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { out, common } => {
            let cfg = resolved_config(&common, None)?;
            commands::cmd_synth(&cfg, &out, cfg.train.seed)
        }
        Command::Pretrain { scenes, out, resume, common } => {
            let cfg = resolved_config(&common, Some(Stage::Pretrain))?;
            commands::cmd_pretrain(&cfg, &scenes, &out, resume.as_deref())
        }
        Command::Finetune { checkpoint, scene, views, out, common } => {
            let cfg = resolved_config(&common, Some(Stage::Finetune))?;
            commands::cmd_finetune(&cfg, &checkpoint, &scene, views, &out)
        }
        Command::Render { checkpoint, scene, poses, views, out, common } => {
            let cfg = resolved_config(&common, None)?;
            commands::cmd_render(&cfg, &checkpoint, &scene, &poses, views, &out)
        }
        Command::Eval { checkpoint, scene, views, out, common } => {
            let cfg = resolved_config(&common, None)?;
            commands::cmd_eval(&cfg, &checkpoint, &scene, &views, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is
            // a usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
