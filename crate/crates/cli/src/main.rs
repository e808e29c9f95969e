//! `msvade` command-line tool.
//!
//! Exit codes: 0 on success, 1 on invalid input or arguments, 2 on runtime failure.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;

#[derive(Debug, Parser)]
#[command(name = "msvade", version, about = "EEG microstate clustering with a convolutional VaDE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic microstate recording with known templates.
    GenSynthetic(GenSyntheticArgs),
    /// Rasterize, split, normalize and augment one recording into a subject directory.
    Preprocess(PreprocessArgs),
    /// Train one architecture on one prepared subject.
    Train(TrainArgs),
    /// Run (or resume) an architecture sweep over prepared subjects.
    Sweep(SweepArgs),
    /// Evaluate a trained model on a prepared subject's evaluation split.
    Evaluate(EvaluateArgs),
    /// Assign every sample of a recording to its best-matching template.
    Backfit(BackfitArgs),
    /// Decode the mixture centroids to scalp maps and electrode templates.
    DecodeCentroids(DecodeArgs),
    /// Summarize a sweep record store into tables and heatmaps.
    Report(ReportArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MSVADE_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Backfit(a) => backfit(a),
        Command::DecodeCentroids(a) => decode_centroids(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
