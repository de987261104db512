use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nll_core::cli::{error_json, render_summary, run, CampaignConfig, CampaignKind};
use nll_core::Result;

#[derive(Parser)]
#[command(name = "nll", version, about = "Landau-de Gennes solutions on a square with a square hole")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Campaign TOML; missing sections take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_defaults: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Newton solve from one initial condition.
    Solve(Common),
    /// Implicit gradient flow with energy trace and snapshots.
    Flow(Common),
    /// Deflated search for distinct critical points.
    Deflate(Common),
    /// Second-variation report of a solved state.
    Stability(Common),
    /// Transition costs and the cost table over reduced temperature.
    Geodesics(Common),
    /// Limit energies and the winning configuration against ρ.
    Gamma(Common),
    /// BD/WORS energies over ρ and their crossing.
    SweepRho0(Common),
    /// Bisection for the largest ρ with a BD solution.
    SweepRho1(Common),
    /// Follow an escaped solution to larger ρ.
    EscapedContinuation(Common),
}

fn split(c: Command) -> (CampaignKind, Common) {
    match c {
        Command::Solve(a) => (CampaignKind::Solve, a),
        Command::Flow(a) => (CampaignKind::Flow, a),
        Command::Deflate(a) => (CampaignKind::Deflate, a),
        Command::Stability(a) => (CampaignKind::Stability, a),
        Command::Geodesics(a) => (CampaignKind::Geodesics, a),
        Command::Gamma(a) => (CampaignKind::Gamma, a),
        Command::SweepRho0(a) => (CampaignKind::SweepRho0, a),
        Command::SweepRho1(a) => (CampaignKind::SweepRho1, a),
        Command::EscapedContinuation(a) => (CampaignKind::EscapedContinuation, a),
    }
}

fn go(cli: Cli) -> Result<()> {
    let (kind, args) = split(cli.command);
    let mut cfg = match &args.config {
        Some(p) => CampaignConfig::load(p)?,
        None => CampaignConfig::default(),
    };
    cfg.campaign.kind = kind;
    if let Some(s) = args.seed {
        cfg.campaign.seed = s;
    }
    if let Some(o) = args.out {
        cfg.output.directory = o;
    }
    if args.print_defaults {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let summary = run(&cfg)?;
    print!("{}", render_summary(&summary));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match go(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
