//! `onepixel`: single-pixel adversarial attacks against image classifiers.
//!
//! Machine-readable results go to stdout as JSON; progress and diagnostics
//! go to stderr. Exit codes: 0 success, 1 attack failed, 2 error,
//! 3 campaign stopped early by its budget or Ctrl-C.

mod args;
mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(
    name = "onepixel",
    version,
    about = "One-pixel adversarial attacks against image classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Attack a single image and print the attack record as JSON
    Attack(commands::attack::AttackArgs),
    /// Filter a dataset, attack every eligible image and summarize
    Campaign(commands::campaign::CampaignArgs),
    /// Score a dataset and report which images pass the confidence filter
    Filter(commands::filter::FilterArgs),
    /// Recompute campaign statistics from a results CSV
    Stats(commands::report::StatsArgs),
    /// Render box plots, convergence traces and adversarial images
    Render(commands::report::RenderArgs),
    /// Run the mock model server
    Serve(commands::serve::ServeArgs),
}

pub const EXIT_FAILED: u8 = 1;
pub const EXIT_ERROR: u8 = 2;
pub const EXIT_TRUNCATED: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();

    let result = match cli.command {
        Command::Attack(a) => commands::attack::run(a),
        Command::Campaign(a) => commands::campaign::run(a),
        Command::Filter(a) => commands::filter::run(a),
        Command::Stats(a) => commands::report::stats(a),
        Command::Render(a) => commands::report::render(a),
        Command::Serve(a) => commands::serve::run(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
