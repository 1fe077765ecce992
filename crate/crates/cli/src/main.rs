//! `depthcomp`: dataset generation, training, inference, evaluation,
//! gradient checks and timing.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure. Results go to
//! stdout, diagnostics to stderr.

mod bench;
mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// A bad invocation or configuration, reported with exit code 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser, Debug)]
#[command(name = "depthcomp", version, about = "Sparse-to-dense depth completion from RGB and sparse depth")]
#[command(after_long_help = after_help())]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Run configuration file (TOML). Defaults are listed at the end of `--help`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset root, overriding `data.path` in the config.
    #[arg(long, global = true, env = "DEPTHCOMP_DATA")]
    pub data: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "DEPTHCOMP_THREADS")]
    pub threads: Option<usize>,
    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render synthetic scenes into the dataset root.
    Generate {
        /// Number of scenes [default: data.count].
        #[arg(long)]
        count: Option<usize>,
        /// Seed of the first scene [default: data.scene.seed].
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the dataset root and write a checkpoint.
    Train {
        /// Checkpoint path, rewritten at every checkpoint epoch.
        #[arg(long)]
        out: PathBuf,
        /// [default: train.epochs]
        #[arg(long)]
        epochs: Option<usize>,
        /// [default: train.max_steps]
        #[arg(long)]
        max_steps: Option<u64>,
        /// [default: train.seed]
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict dense depth for every scene in the dataset root.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output root; predictions go to `<out>/scenes/<id>/pred.png`.
        #[arg(long)]
        out: PathBuf,
        /// Force flip test-time augmentation on [default: tta.enabled].
        #[arg(long, conflicts_with = "no_tta")]
        tta: bool,
        #[arg(long)]
        no_tta: bool,
        /// Also write a colorized `vis.png` per scene.
        #[arg(long)]
        visualize: bool,
    },
    /// Compare predictions against ground truth.
    Eval {
        /// Root holding `scenes/<id>/<pred-name>`.
        #[arg(long)]
        pred: PathBuf,
        /// Root holding `scenes/<id>/gt.png` [default: dataset root].
        #[arg(long)]
        gt: Option<PathBuf>,
        /// File name of the prediction inside each scene directory.
        #[arg(long, default_value = dataset::PRED)]
        pred_name: String,
        /// Print one line of metrics per scene before the pooled report.
        #[arg(long)]
        per_sample: bool,
    },
    /// Finite-difference check of every differentiable operator.
    Gradcheck {
        /// Random instances per operator.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        /// Check a single operator.
        #[arg(long)]
        op: Option<String>,
    },
    /// Time the main kernels and a forward pass.
    Bench {
        /// Repetitions per measurement.
        #[arg(long, default_value_t = 10)]
        iters: usize,
    },
}

fn after_help() -> String {
    format!(
        "Environment: DEPTHCOMP_DATA and DEPTHCOMP_THREADS mirror --data and --threads; flags win.\n\n\
         Default configuration:\n\n{}",
        config::RunConfig::default_text()
    )
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
