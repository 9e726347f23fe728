//! `sotkit` command-line front door. Every subcommand is a thin composition
//! of library calls; no metric or codec logic lives here.
//!
//! Exit codes: 0 success, 1 usage error, 2 input format error, 3
//! validation/metric error, 4 internal error.

mod cmds;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use sotkit::codec::CodecError;
use sotkit::manifest::ManifestError;
use sotkit::model::{ModelError, TrainError};
use sotkit::score::ScoreError;
use sotkit::segment::SegmentError;
use sotkit::simulate::SimError;
use sotkit::types::ValidationError;
use sotkit::vocab::VocabError;

#[derive(Parser, Debug)]
#[command(name = "sotkit", version, about = "Multi-talker label codec, simulation, scoring, and toy training")]
pub struct Cli {
    /// RNG seed for every randomized subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-group parallelism (0 = all cores). Never
    /// changes numeric output.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Strict codec mode: malformed sequences fail instead of being repaired.
    #[arg(long, global = true)]
    pub strict: bool,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Plain,
    Timestamped,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Encode grouped references into serialized token sequences.
    Encode(cmds::EncodeArgs),
    /// Decode token sequences into per-speaker hypotheses.
    Decode(cmds::DecodeArgs),
    /// Split reference sessions into utterance groups.
    Segment(cmds::SegmentArgs),
    /// Simulate overlapped utterance groups from a single-talker pool.
    Simulate(cmds::SimulateArgs),
    /// Score hypotheses: PI error rate, LDER, speaker counting.
    Score(cmds::ScoreArgs),
    /// Count speakers per token sequence.
    Count(cmds::CountArgs),
    /// Train the toy model on the synthetic overlapped-symbol task.
    DemoTrain(cmds::DemoTrainArgs),
    /// Finite-difference gradient verification of the toy model.
    Gradcheck(cmds::GradcheckArgs),
}

/// Error with its process exit code.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn internal(message: impl std::fmt::Display) -> Self {
        Failure::new(4, message.to_string())
    }
}

impl From<ManifestError> for Failure {
    fn from(e: ManifestError) -> Self {
        match &e {
            ManifestError::Format { .. } | ManifestError::Io { .. } => Failure::new(2, e.to_string()),
            ManifestError::Validation { .. } => Failure::new(3, e.to_string()),
        }
    }
}

impl From<VocabError> for Failure {
    fn from(e: VocabError) -> Self {
        match &e {
            VocabError::Invalid(_) => Failure::new(2, e.to_string()),
            _ => Failure::new(3, e.to_string()),
        }
    }
}

impl From<ValidationError> for Failure {
    fn from(e: ValidationError) -> Self {
        Failure::new(3, e.to_string())
    }
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        Failure::new(3, e.to_string())
    }
}

impl From<SegmentError> for Failure {
    fn from(e: SegmentError) -> Self {
        Failure::new(3, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::new(3, e.to_string())
    }
}

impl From<ScoreError> for Failure {
    fn from(e: ScoreError) -> Self {
        Failure::new(3, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::new(4, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        Failure::new(4, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(4, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };

    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .init();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }

    match cmds::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
