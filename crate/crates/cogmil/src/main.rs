use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cogmil::pipeline::{run_all, run_stage, ExperimentConfig, Stage};

#[derive(Parser)]
#[command(name = "cogmil", version, about = "Cognitive-distortion MIL experiment pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Extract emotion/logic/behavior components for every utterance.
    ExtractElb(StageArgs),
    /// Mine distortion instances, with and without components.
    Infer(StageArgs),
    /// Aggregate instances into bags with normalized salience.
    BuildBags(StageArgs),
    /// Materialize embeddings for every text into a lookup file.
    Embed(StageArgs),
    /// Train the attention classifier for each condition and run.
    Train(StageArgs),
    /// Score checkpoints on the validation and test splits.
    Evaluate(StageArgs),
    /// Render the condition and per-type result tables.
    Report(StageArgs),
    /// Instance statistics and missing-rate reports.
    Stats(StageArgs),
    /// Every stage in order.
    RunAll(StageArgs),
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let user_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if user_error { 1 } else { 0 });
        }
    };
    let (stage, args) = match &cli.command {
        Command::ExtractElb(a) => (Some(Stage::ExtractElb), a),
        Command::Infer(a) => (Some(Stage::Infer), a),
        Command::BuildBags(a) => (Some(Stage::BuildBags), a),
        Command::Embed(a) => (Some(Stage::Embed), a),
        Command::Train(a) => (Some(Stage::Train), a),
        Command::Evaluate(a) => (Some(Stage::Evaluate), a),
        Command::Report(a) => (Some(Stage::Report), a),
        Command::Stats(a) => (Some(Stage::Stats), a),
        Command::RunAll(a) => (None, a),
    };
    let result = ExperimentConfig::load(&args.config).and_then(|cfg| match stage {
        Some(stage) => run_stage(stage, &cfg),
        None => run_all(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
