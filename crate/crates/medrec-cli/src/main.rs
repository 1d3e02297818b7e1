//! `medrec`: medication recommendation from longitudinal patient records.
//!
//! Subcommands cover the full loop: synthesize or ingest a dataset, train
//! the recommender, bootstrap-evaluate a checkpoint, export copy-mechanism
//! explanations, and describe the corpus. Every run writes a manifest
//! recording resolved configuration, seeds, input hashes, and outputs.
//!
//! Exit codes: 0 ok, 2 validation failure, 3 training divergence.

mod commands;
mod fileio;
mod manifest;
mod plot;

use clap::{Parser, Subcommand};
use medrec_core::error::Error;

#[derive(Parser)]
#[command(name = "medrec", version, about, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic cohort with controllable medication persistence.
    GenData(commands::gen_data::GenDataArgs),
    /// Build a dataset from exported clinical tables.
    Ingest(commands::ingest::IngestArgs),
    /// Train the recommender; writes checkpoints and a metric log.
    Train(commands::train::TrainArgs),
    /// Bootstrap-evaluate a checkpoint on a dataset split.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Export the copy-probability trace for one patient visit.
    Explain(commands::explain::ExplainArgs),
    /// Corpus statistics and medication-repetition histograms.
    Stats(commands::stats::StatsArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::GenData(args) => commands::gen_data::run(args),
        Cmd::Ingest(args) => commands::ingest::run(args),
        Cmd::Train(args) => commands::train::run(args),
        Cmd::Evaluate(args) => commands::evaluate::run(args),
        Cmd::Explain(args) => commands::explain::run(args),
        Cmd::Stats(args) => commands::stats::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        let code = match e {
            Error::Divergence { .. } => 3,
            _ => 2,
        };
        std::process::exit(code);
    }
}
