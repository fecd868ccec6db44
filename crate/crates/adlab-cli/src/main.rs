//! Command-line front end for the adlab benchmark.

mod augment;
mod baselines;
mod detect;
mod manifest;
mod provider;
mod report;
mod select;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adlab",
    version,
    about = "LLM-assisted text anomaly detection benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Zero-shot anomaly detection over the test split.
    Detect(detect::DetectArgs),
    /// Synthetic sample generation and category descriptions.
    Augment(augment::AugmentArgs),
    /// Classical detectors on small vs. augmented training data.
    Baselines(baselines::BaselinesArgs),
    /// LLM-driven unsupervised model selection.
    Select(select::SelectArgs),
    /// Merge two runs into a delta comparison table.
    Report(report::ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Detect(args) => detect::cmd_detect(args),
        Command::Augment(args) => augment::cmd_augment(args),
        Command::Baselines(args) => baselines::cmd_baselines(args),
        Command::Select(args) => select::cmd_select(args),
        Command::Report(args) => report::cmd_report(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
