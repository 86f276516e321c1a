use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fourpi::commands::{execute, Command};
use fourpi::config::{Overrides, RunConfig, VariantName};

#[derive(Debug, Parser)]
#[command(name = "fourpi", about = "Constrained IRGNM reconstruction for 4Pi microscopy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    variant: Option<VariantName>,
    /// Worker threads for independent runs (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides { seed: cli.seed, out: cli.out, variant: cli.variant, threads: cli.threads };
    let cfg = match RunConfig::load(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(cli.command, &cfg) {
        Ok(failed) if failed.is_empty() => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("failed checks: {}", failed.join(", "));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
