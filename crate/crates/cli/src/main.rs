//! `philap`: run an experiment config and write its reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::error;
use philap::config::RunConfig;
use philap::runner::{run, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "philap", version, about = "Solve and verify singular Phi-Laplacian systems")]
struct Args {
    /// TOML experiment config.
    config: PathBuf,

    /// Write artifacts here instead of the config's output_dir.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,

    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Validate the config and the system without solving.
    #[arg(long)]
    check_only: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let mut cfg = match RunConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => {
            error!("{}: {e}", args.config.display());
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    let outcome = run(&cfg, args.check_only);
    print!("{}", outcome.summary);
    println!("artifacts: {}", outcome.artifacts.display());
    ExitCode::from(outcome.exit_code as u8)
}
