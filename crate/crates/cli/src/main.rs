mod commands;
mod config;
mod help;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use commands::Status;

/// Temperature accelerated dynamics for 1D overdamped Langevin dynamics.
#[derive(Debug, Parser)]
#[command(name = "tadlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Principal eigenpairs and exit probabilities; writes eigen.csv.
    Solve,
    /// One metastable path (direct, kmc, original, modified, idealized);
    /// writes path.csv and events.csv.
    Run,
    /// Runs verification studies; writes one CSV per study and summary.csv.
    Verify {
        /// Study to run (repeatable); overrides `verify.studies`.
        #[arg(long = "study", value_name = "NAME")]
        studies: Vec<String>,
    },
    /// Prints summary.csv from the output directory.
    Report,
}

fn main() -> ExitCode {
    let cmd = Cli::command().after_long_help(help::config_help());
    let cli = match Cli::from_arg_matches(&cmd.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(Status::Invalid as u8);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(Status::Invalid as u8);
        }
    }
    let result =
        config::load(cli.config.as_deref(), cli.out, cli.seed).and_then(|p| match &cli.command {
            Command::Solve => commands::solve(&p),
            Command::Run => commands::run(&p),
            Command::Verify { studies } => commands::verify(&p, studies),
            Command::Report => commands::report(&p),
        });
    let status = match result {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            Status::from_error(&e)
        }
    };
    ExitCode::from(status as u8)
}
