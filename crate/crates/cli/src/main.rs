use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod options;
mod run;

use options::Options;

type Action = fn(&Options) -> anyhow::Result<()>;

/// Prevalence curves from pooled binary tests.
#[derive(Parser)]
#[command(name = "poolsmooth", version)]
struct Cli {
    /// TOML config; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate p(x) from an individual or pooled CSV.
    Estimate(Options),
    /// Monte Carlo table of median and IQR of 10^4 x ISE.
    Simulate(Options),
    /// Empirical convergence rate of median ISE in N.
    Rate(Options),
    /// DH error as the pool size grows at fixed N.
    Overpool(Options),
    /// First-order variance and bias of DH and DM along a grid.
    Diagnostics(Options),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (name, flags, action): (&str, Options, Action) = match cli.command {
        Command::Estimate(o) => ("estimate", o, run::estimate),
        Command::Simulate(o) => ("simulate", o, run::simulate),
        Command::Rate(o) => ("rate", o, run::rate),
        Command::Overpool(o) => ("overpool", o, run::overpool),
        Command::Diagnostics(o) => ("diagnostics", o, run::diagnostics),
    };
    let outcome = match &cli.config {
        Some(path) => Options::from_config(path, name).map(|cfg| flags.over(cfg)),
        None => Ok(flags),
    }
    .and_then(|opts| action(&opts));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
