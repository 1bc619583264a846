//! `aft`: synthesize datasets, train, evaluate, predict, and benchmark the
//! axial fusion segmentation network.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! failure. Every failure prints one machine-parseable line to stderr:
//! `error: <usage|data|numeric>: <reason>`.

mod ckpt;
mod commands;
mod config;
mod dataio;
mod error;
mod logger;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::{BenchArgs, EvalArgs, PredictArgs, SynthArgs, TrainArgs};
use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "aft",
    version,
    about = "Axial fusion volumetric segmentation toolkit",
    after_help = "Set AFT_LOG=quiet|info|debug to control stderr logging."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic CT-like dataset
    Synth(SynthArgs),
    /// Train a model on a dataset directory
    Train(TrainArgs),
    /// Score a checkpoint against a labeled dataset
    Eval(EvalArgs),
    /// Segment one volume with a checkpoint
    Predict(PredictArgs),
    /// Report attention cost and memory for token grids
    Bench(BenchArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => {
            // Full clap rendering for the human, then the one-line
            // machine-parseable reason as the final stderr line.
            eprintln!("{e}");
            let first_line = e
                .render()
                .to_string()
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ")
                .to_string();
            eprintln!("{}", CliError::Usage(first_line).report_line());
            std::process::exit(1);
        }
    };

    logger::init();

    let result = match &cli.command {
        Command::Synth(args) => commands::run_synth(args),
        Command::Train(args) => commands::run_train(args),
        Command::Eval(args) => commands::run_eval(args),
        Command::Predict(args) => commands::run_predict(args),
        Command::Bench(args) => commands::run_bench(args),
    };

    if let Err(e) = result {
        eprintln!("{}", e.report_line());
        std::process::exit(e.exit_code());
    }
}
