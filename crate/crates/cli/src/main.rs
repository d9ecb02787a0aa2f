//! Batch experiment driver for cavity-recovery phantoms.
//!
//! Exit codes: 0 on success, 1 on validation failure (bad config, missing
//! inputs), 2 on runtime error (a failed run or check).

mod commands;
mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cavitylab",
    version,
    about = "Self-supervised cavity recovery and robust-loss ablations on synthetic phantoms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<String>,
    /// Global seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path overrides, e.g. `fit.lambda_smooth=5e-5`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded phantom pairs.
    Phantom(CommonArgs),
    /// Self-supervised cavity recovery on each pair.
    Fit(CommonArgs),
    /// Run the weak-label loss battery and/or the similarity-loss battery.
    Ablate(CommonArgs),
    /// Verify every analytic gradient against finite differences.
    Gradcheck(CommonArgs),
    /// Metrics between two mask files.
    Eval(CommonArgs),
    /// Aggregate a metrics CSV into mean/std summaries.
    Report(CommonArgs),
}

fn load(args: &CommonArgs) -> anyhow::Result<config::ExperimentConfig> {
    config::load_config(
        args.config.as_deref(),
        args.out.as_deref(),
        args.seed,
        &args.overrides,
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, run): (_, fn(&config::ExperimentConfig) -> anyhow::Result<()>) = match &cli.command {
        Command::Phantom(a) => (load(a), commands::run_phantom),
        Command::Fit(a) => (load(a), commands::run_fit),
        Command::Ablate(a) => (load(a), commands::run_ablate),
        Command::Gradcheck(a) => (load(a), |_| commands::run_gradcheck()),
        Command::Eval(a) => (load(a), commands::run_eval),
        Command::Report(a) => (load(a), commands::run_report),
    };
    let cfg = match cfg {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    // input-validation failures exit 1, runtime failures exit 2
    match run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e.to_string().contains("requires")
                || e.to_string().contains("unknown")
                || e.to_string().contains("expected");
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}
