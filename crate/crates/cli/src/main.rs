//! `jointspeech`: corpus synthesis, noise mixing, LOSO training, evaluation
//! and reporting.

mod commands;
mod config;
mod log;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jointspeech::corpus::{CorpusError, TrainedOn};
use jointspeech::eval::EvalError;
use jointspeech::model::{Architecture, ModelError};
use jointspeech::training::TrainError;
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("fold {fold} is out of range: the corpus has {n} speakers (folds 0..{n})")]
    FoldRange { fold: usize, n: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("training worker for fold {fold} failed ({status})")]
    Worker { fold: usize, status: String },
    #[error("gradient check failed for {arch}: max relative error {max_rel_err:.3e} >= {tol:.0e}")]
    GradCheck {
        arch: Architecture,
        max_rel_err: f64,
        tol: f64,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Config(_) => "config",
            Self::FoldRange { .. } => "fold_range",
            Self::Io { .. } => "io",
            Self::Corpus(_) => "corpus",
            Self::Model(_) => "model",
            Self::Train(_) => "train",
            Self::Eval(EvalError::Leakage { .. } | EvalError::FoldMismatch { .. }) => "leakage",
            Self::Eval(EvalError::IncompleteReport(_)) => "incomplete_report",
            Self::Eval(_) => "eval",
            Self::Worker { .. } => "worker",
            Self::GradCheck { .. } => "gradcheck",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config(_) | Self::FoldRange { .. } => 2,
            _ => 1,
        }
    }
}

/// Options shared by every subcommand. Each flag overrides the matching
/// config field; each can also be set through a `JOINTSPEECH_*` variable.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true, env = "JOINTSPEECH_CONFIG")]
    pub config: Option<PathBuf>,
    /// Global seed (config: seed).
    #[arg(long, global = true, env = "JOINTSPEECH_SEED")]
    pub seed: Option<u64>,
    /// Output directory (config: out).
    #[arg(long, global = true, env = "JOINTSPEECH_OUT")]
    pub out: Option<PathBuf>,
    /// Clean corpus manifest (config: corpus.manifest).
    #[arg(long, global = true, env = "JOINTSPEECH_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Noise pool listing (config: corpus.noise).
    #[arg(long, global = true, env = "JOINTSPEECH_NOISE")]
    pub noise: Option<PathBuf>,
    /// Let training and test overlays draw from the same noise clips.
    #[arg(long, global = true, env = "JOINTSPEECH_SHARED_NOISE")]
    pub shared_noise: bool,
    /// Training epochs (config: train.epochs).
    #[arg(long, global = true, env = "JOINTSPEECH_EPOCHS")]
    pub epochs: Option<usize>,
    /// Adam learning rate (config: train.learning_rate).
    #[arg(long, global = true, env = "JOINTSPEECH_LR")]
    pub lr: Option<f64>,
    /// Emotion-loss weight of the joint objective (config: train.loss.alpha).
    #[arg(long, global = true, env = "JOINTSPEECH_ALPHA")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Parser)]
#[command(name = "jointspeech", version, about = "Joint ASR + emotion recognition experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic toy corpus and a noise pool.
    SynthCorpus {
        #[arg(long, default_value_t = 2)]
        speakers: usize,
        #[arg(long, default_value_t = 4)]
        per_speaker: usize,
        #[arg(long, default_value_t = 2)]
        noise_per_category: usize,
    },
    /// Build the noisy training set and the seven test scenarios.
    Mix,
    /// Train models for one fold, or for all folds in worker processes.
    Train {
        #[arg(long, conflicts_with = "all_folds", required_unless_present = "all_folds")]
        fold: Option<usize>,
        #[arg(long)]
        all_folds: bool,
        /// Concurrent fold workers for --all-folds.
        #[arg(long, default_value_t = 1, env = "JOINTSPEECH_JOBS")]
        jobs: usize,
        /// Only this architecture (default: all three).
        #[arg(long)]
        arch: Option<Architecture>,
        /// Only this training condition (default: both).
        #[arg(long)]
        trained_on: Option<TrainedOn>,
    },
    /// Score every fold's checkpoints on the seven scenarios.
    Evaluate,
    /// Finite-difference gradient verification on a tiny model.
    Gradcheck {
        #[arg(long)]
        arch: Option<Architecture>,
    },
    /// Render the evaluation report as Markdown, JSON and SVG.
    Report,
}

/// Config file, then flags (clap has already folded the environment in).
fn effective_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(m) = &c.manifest {
        cfg.corpus.manifest = m.clone();
    }
    if let Some(n) = &c.noise {
        cfg.corpus.noise = n.clone();
    }
    if c.shared_noise {
        cfg.corpus.noise_split = jointspeech::corpus::PoolSplit::Shared;
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = c.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(a) = c.alpha {
        cfg.train.loss.alpha = a;
    }
    let diags = cfg.diagnostics();
    if !diags.is_empty() {
        return Err(CliError::Config(diags));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = effective_config(&cli.common)?;
    match cli.command {
        Command::SynthCorpus {
            speakers,
            per_speaker,
            noise_per_category,
        } => commands::synth_corpus(&cfg, speakers, per_speaker, noise_per_category),
        Command::Mix => commands::mix(&cfg),
        Command::Train {
            fold,
            all_folds,
            jobs,
            arch,
            trained_on,
        } => match (fold, all_folds) {
            (Some(k), false) => commands::train_fold(&cfg, k, arch, trained_on),
            (None, true) => commands::train_all(&cfg, jobs, arch, trained_on),
            _ => Err(CliError::Usage("pass exactly one of --fold or --all-folds".into())),
        },
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Gradcheck { arch } => commands::gradcheck(&cfg, arch),
        Command::Report => commands::report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            log::error("usage", &e.render().to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error(e.kind(), &e.to_string());
            ExitCode::from(e.exit_code())
        }
    }
}
