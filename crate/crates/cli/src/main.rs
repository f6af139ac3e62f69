//! `bistet`: generate data, train, evaluate, predict, dump attention and
//! count parameters.

mod commands;
mod config;
mod error;

use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "bistet", version, about = "Bidirectional scene-text recognition with one decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArg {
    /// JSON run configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic word-image corpus.
    GenData(GenDataArgs),
    /// Train a model from a seeded initialization.
    Train(TrainArgs),
    /// Word accuracy of a checkpoint on a dataset, per length.
    Eval(EvalArgs),
    /// Transcribe PGM images.
    Predict(PredictArgs),
    /// Dump decoder attention maps of one image.
    Attention(AttentionArgs),
    /// Trainable parameter counts per component.
    Params(ParamsArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of images.
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the log and checkpoints.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Training dataset directory.
    #[arg(long, value_name = "DIR")]
    pub train_data: Option<PathBuf>,
    /// Held-out dataset directory for periodic evaluation.
    #[arg(long, value_name = "DIR")]
    pub eval_data: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory to score.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "bi", value_parser = ["ltr", "rtl", "bi"])]
    pub direction: String,
    #[arg(long, value_name = "PATH")]
    pub lexicon: Option<PathBuf>,
    /// Also write report.tsv and predictions.tsv here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "bi", value_parser = ["ltr", "rtl", "bi"])]
    pub direction: String,
    #[arg(long, value_name = "PATH")]
    pub lexicon: Option<PathBuf>,
    /// PGM files or directories containing them.
    #[arg(required = true, value_name = "IMAGE")]
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttentionArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// `bi` dumps both directions.
    #[arg(long, default_value = "bi", value_parser = ["ltr", "rtl", "bi"])]
    pub direction: String,
    /// Directory for the PGM and CSV dumps.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(value_name = "IMAGE")]
    pub image: PathBuf,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub config: ConfigArg,
}

fn threads_from_env() -> Result<(), CliError> {
    let Ok(value) = std::env::var("BISTET_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("BISTET_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    threads_from_env()?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Attention(a) => commands::attention(a),
        Command::Params(a) => commands::params(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    panic::set_hook(Box::new(|info| {
        if !closed_stdout(info.payload()) {
            eprintln!("bistet: internal error: {info}");
        }
    }));
    match panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("bistet: {e}");
            ExitCode::from(e.exit_code())
        }
        // reader went away (e.g. `| head`)
        Err(payload) if closed_stdout(payload.as_ref()) => ExitCode::SUCCESS,
        Err(_) => ExitCode::from(2),
    }
}

fn closed_stdout(payload: &(dyn std::any::Any + Send)) -> bool {
    let msg = payload
        .downcast_ref::<String>()
        .map(String::as_str)
        .or_else(|| payload.downcast_ref::<&str>().copied())
        .unwrap_or("");
    msg.starts_with("failed printing to stdout") && msg.contains("Broken pipe")
}
