mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] geolatent::Error),
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        use geolatent::Error as E;
        match self {
            CliError::Config { .. } => "config",
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                E::Config(_) => "config",
                E::Io { .. } => "io",
                E::Format { .. } => "format",
                E::EmptySplit(_) => "empty_split",
                E::DimensionMismatch { .. } | E::Shape(_) => "shape",
                E::Domain(_) | E::Antipodal | E::NoRelevantPixels => "domain",
                E::NonFinite(_) => "non_finite",
                E::IterationLimit { .. } | E::Singular { .. } | E::Divergence(_) => "numerical",
            },
        }
    }

    /// 1 for problems with the operator's input, 2 for failures inside a
    /// computation.
    fn exit_code(&self) -> u8 {
        match self.kind() {
            "non_finite" | "numerical" => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "geolatent", version, about = "Train and evaluate geometric latent-variable autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labelled tile corpus.
    Synth(commands::SynthArgs),
    /// Label, stratify and split a tile corpus into a manifest.
    Preprocess(commands::PreprocessArgs),
    /// Train a model from a config file into a run directory.
    Train(commands::TrainArgs),
    /// Masked reconstruction error of a run on one split.
    Eval(commands::EvalArgs),
    /// Latent-space classifier (or the supervised CNN baseline).
    Probe(commands::ProbeArgs),
    /// Decode prior samples into a tile grid.
    Sample(commands::SampleArgs),
    /// Decode the latent path between two images.
    Interp(commands::InterpArgs),
    /// Export m = 3 latent codes as a point cloud.
    Export3d(commands::Export3dArgs),
    /// Pivot metrics logs into per-metric tables.
    Report(commands::ReportArgs),
}

fn fail(err: &CliError) -> ExitCode {
    let line = serde_json::json!({ "error": err.kind(), "message": err.to_string() });
    eprintln!("{line}");
    ExitCode::from(err.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.render().to_string().trim_end().to_string())),
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Probe(a) => commands::probe(a),
        Command::Sample(a) => commands::sample(a),
        Command::Interp(a) => commands::interp(a),
        Command::Export3d(a) => commands::export3d(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
