//! `sleepmeta`: preprocessing, synthetic corpora, training, evaluation and
//! gradient checks driven by one TOML run configuration.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sleepmeta::error::ErrorClass;
use sleepmeta::eval::Protocol;
use sleepmeta::meta::Mode;
use sleepmeta::Exec;

#[derive(Parser, Debug)]
#[command(name = "sleepmeta", version, about = "Self-supervised meta-learning for sleep staging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// Published hyperparameters and the full-size encoder.
    Default,
    /// Narrow encoder and a short schedule for single-core runs.
    Desk,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration, layered over the preset.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    /// Output directory (overrides `output.dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Training and evaluation seed (overrides `meta.seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    exec: Option<ExecArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExecArg {
    Sequential,
    Parallel,
}

impl From<ExecArg> for Exec {
    fn from(e: ExecArg) -> Self {
        match e {
            ExecArg::Sequential => Exec::Sequential,
            ExecArg::Parallel => Exec::Parallel,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Generate the corpus from the `[synth]` section instead of reading data.
    #[arg(long)]
    synth: bool,
    /// Recording manifest (overrides `data.manifest`).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Sample cache (overrides `data.cache`).
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Preprocess the recordings of a manifest into a sample cache.
    Prep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write a synthetic corpus as EDF files, CSV hypnograms and a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and write a checkpoint and the loss history.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        /// Number of updates (overrides `meta.budget`).
        #[arg(long, conflicts_with = "epochs")]
        updates: Option<usize>,
        /// Passes over the training samples (overrides `meta.budget`).
        #[arg(long)]
        epochs: Option<usize>,
        /// Hold out subjects and samples as in the first fold of the
        /// evaluation protocol; `eval --split` then scores the held-out parts.
        #[arg(long)]
        holdout: bool,
    },
    /// Score a checkpoint, per dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Run an evaluation protocol end to end.
    Experiment {
        protocol: ProtocolArg,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated seeds (overrides `eval.seeds`).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated modes (overrides `eval.modes`).
        #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
        modes: Option<Vec<Mode>>,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Finite-difference check of every primitive and of the configured model's loss.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of random seeds for the primitive suite.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Coordinates checked per tensor of the configured model.
        #[arg(long, default_value_t = 2)]
        coords: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum SplitArg {
    All,
    Seen,
    Unseen,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ProtocolArg {
    ThreeVsFive,
    AllVsAll,
    OneVsAll,
    LambdaSweep,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::ThreeVsFive => Protocol::ThreeVsFive,
            ProtocolArg::AllVsAll => Protocol::AllVsAll,
            ProtocolArg::OneVsAll => Protocol::OneVsAll,
            ProtocolArg::LambdaSweep => Protocol::LambdaSweep,
        }
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.to_ascii_lowercase().parse::<Mode>().map_err(|e| e.to_string())
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Internal => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
