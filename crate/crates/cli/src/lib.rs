pub mod bench;
pub mod commands;
pub mod config;
pub mod review_server;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;

#[derive(Parser)]
#[command(name = "pagebench", version, about = "Unit-test benchmark and tooling for PDF-to-text converters")]
struct Cli {
    /// TOML config file; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or rescore the benchmark.
    #[command(subcommand)]
    Bench(bench::BenchCommand),
    /// Word-alignment agreement between two directories of outputs.
    Align(commands::AlignArgs),
    /// Elo ratings from pairwise judgments.
    Elo(commands::EloArgs),
    /// Inspect document anchoring.
    #[command(subcommand)]
    Anchor(commands::AnchorCommand),
    /// Convert corpus pages with a vision-language model endpoint.
    Convert(commands::ConvertArgs),
    /// Pairwise human review.
    #[command(subcommand)]
    Review(review_server::ReviewCommand),
}

/// How a command finished when it did not hit a fatal error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    Warnings,
}

/// Parse the process arguments, run the command and map the result to an
/// exit code.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = Config::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Bench(c) => bench::run(c, &cfg),
        Command::Align(a) => commands::align(a),
        Command::Elo(a) => commands::elo(a, &cfg),
        Command::Anchor(c) => commands::anchor(c),
        Command::Convert(a) => commands::convert(a, &cfg),
        Command::Review(c) => review_server::run(c, &cfg),
    });
    match result {
        Ok(Status::Clean) => ExitCode::SUCCESS,
        Ok(Status::Warnings) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
