use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mccpde_core::cli;

#[derive(Parser)]
#[command(name = "mccpde", version, about = "Certified lower bounds for a bilinear PDE-constrained control problem")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline described by a TOML config.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suites.
    Check {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Write the relaxation QP of a config in the text dump format.
    DumpQp { config: PathBuf, out: PathBuf },
}

fn main() -> ExitCode {
    let code = match Args::parse().command {
        Command::Run { config, out } => cli::run(&config, out.as_deref()),
        Command::Check { seed } => cli::check(seed),
        Command::DumpQp { config, out } => cli::dump_qp(&config, &out),
    };
    ExitCode::from(code as u8)
}
