mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pairdisc_core::Error;

/// Exit status for each failure class.
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Paraphrase generation with a shared-weight pairwise discriminator.
#[derive(Debug, Parser)]
#[command(name = "pairdisc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model into a run directory.
    Train(TrainArgs),
    /// Paraphrase one sentence per input line.
    Generate(GenerateArgs),
    /// Score generated paraphrases, or a pair of hypothesis/reference files.
    Eval(EvalArgs),
    /// Five-class sentiment probe on frozen encoder embeddings.
    #[command(subcommand)]
    Sentiment(SentimentCommand),
    /// Finite-difference check of the full training objective.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long, required_unless_present = "resume")]
    pub config: Option<PathBuf>,
    /// Paraphrase TSV: question1, question2, is_duplicate.
    #[arg(long, required_unless_present = "resume")]
    pub data: Option<PathBuf>,
    /// Run directory; all outputs are written here.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue the run in `--out` from its newest checkpoint.
    #[arg(long, conflicts_with_all = ["config", "data"])]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// One source sentence per line.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SmoothingArg {
    None,
    AddOne,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to generate with; requires `--test`.
    #[arg(long, requires = "test", conflicts_with_all = ["hyp", "reference"])]
    pub ckpt: Option<PathBuf>,
    /// Paraphrase TSV whose duplicate pairs are scored.
    #[arg(long, requires = "ckpt")]
    pub test: Option<PathBuf>,
    /// Hypotheses, one sentence per line.
    #[arg(long, requires = "reference", required_unless_present = "ckpt")]
    pub hyp: Option<PathBuf>,
    /// References, one sentence per line, parallel to `--hyp`.
    #[arg(long = "ref", requires = "hyp")]
    pub reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "none")]
    pub smoothing: SmoothingArg,
    /// Also write the generated hypotheses here (checkpoint mode).
    #[arg(long)]
    pub hyp_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum SentimentCommand {
    /// Fit the probe on embeddings from a trained encoder.
    Train(SentimentTrainArgs),
    /// Report the error rate of a trained probe.
    Eval(SentimentEvalArgs),
}

#[derive(Debug, Args)]
pub struct SentimentTrainArgs {
    /// Paraphrase-model checkpoint providing the frozen encoder.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Sentiment TSV: phrase_id, phrase, label (0..4).
    #[arg(long)]
    pub data: PathBuf,
    /// Probe output path; defaults to `probe.ckpt` next to `--ckpt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Held-out phrases scored after training.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 200)]
    pub batch_size: usize,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SentimentEvalArgs {
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Encoder checkpoint; defaults to the one recorded in the probe.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Vocabulary, embedding, hidden size and max length as `V,E,D,T`.
    #[arg(long, default_value = "20,8,8,5")]
    pub dims: String,
    #[arg(long, default_value = "EDD-LG-shared")]
    pub variant: String,
    #[arg(long, default_value_t = 3)]
    pub batch: usize,
    #[arg(long, default_value_t = 200)]
    pub coordinates: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Failure carrying its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            Error::NonFinite(_) | Error::Diverged { .. } | Error::NonDeterministic { .. } => {
                EXIT_NUMERIC
            }
            Error::Shape(_)
            | Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::Io(_) => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sentiment(SentimentCommand::Train(a)) => commands::sentiment_train(&a),
        Command::Sentiment(SentimentCommand::Eval(a)) => commands::sentiment_eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
