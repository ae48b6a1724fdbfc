use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nonlocal_eikonal::cli::{self, RunContext, RunOutcome, Status};
use nonlocal_eikonal::config::LoadedConfig;
use nonlocal_eikonal::Result;

/// Weak solutions of nonlocal eikonal equations.
#[derive(Parser)]
#[command(name = "nleik", version)]
struct Args {
    /// Seed for randomised checks; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a weak solution by mollified fixed-point iteration.
    Simulate { config: PathBuf },
    /// Verify the explicit family of weak solutions and tabulate their gaps.
    Counterexample { config: PathBuf },
    /// Run the property batteries.
    Verify { config: PathBuf },
    /// Grid refinement study.
    Convergence {
        config: PathBuf,
        /// Comma-separated spacings, e.g. `1/50,1/100,1/200`.
        #[arg(long)]
        grids: String,
    },
}

fn run(args: &Args) -> Result<RunOutcome> {
    let root = std::env::var_os("NLEIK_OUTPUT_ROOT").map(PathBuf::from);
    let path = match &args.command {
        Command::Simulate { config }
        | Command::Counterexample { config }
        | Command::Verify { config }
        | Command::Convergence { config, .. } => config,
    };
    let ctx = RunContext::new(LoadedConfig::from_path(path)?, args.seed, root);
    match &args.command {
        Command::Simulate { .. } => cli::run_simulate(&ctx),
        Command::Counterexample { .. } => cli::run_counterexample(&ctx),
        Command::Verify { .. } => cli::run_verify(&ctx),
        Command::Convergence { grids, .. } => cli::run_convergence(&ctx, &cli::parse_grids(grids)?),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if let Some(dir) = &outcome.output {
                println!("output: {}", dir.display());
            }
            ExitCode::from(outcome.status.code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Status::of_error(&e).code() as u8)
        }
    }
}
