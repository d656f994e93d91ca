//! Command-line pipeline: `synth`, `train`, `detect`, `eval`, `report`.
//!
//! Each command writes its outputs plus a JSON run manifest recording the
//! resolved options, seeds, artifact hashes and timestamps.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{cmd_detect, cmd_eval, cmd_replay, cmd_report, cmd_synth, cmd_train};
pub use error::{CliError, Result};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "mpcd", version, about = "Multipath-component detection in power delay profiles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset
    Synth(commands::SynthArgs),
    /// Train an autoencoder on a dataset split
    Train(commands::TrainArgs),
    /// Detect peaks with a trained model
    Detect(commands::DetectArgs),
    /// Score detections with relaxed precision/recall/F1
    Eval(commands::EvalArgs),
    /// Plot one record's trace as SVG
    Report(commands::ReportArgs),
    /// Rerun a command from its manifest
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Runs a parsed command and returns the path of its main output.
pub fn run(cli: Cli) -> Result<PathBuf> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Replay { manifest, out } => cmd_replay(&manifest, out),
    }
}
