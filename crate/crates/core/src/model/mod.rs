//! The three architectures: ASR baseline (encoder + CTC head), SER baseline
//! (encoder + mean pooling + MLP) and the joint model, which adds a text
//! encoder over the decoded transcript and skip-connection fusion in front of
//! the emotion head.

mod arch;
pub mod checkpoint;
pub mod ctc;
pub mod graph;
mod params;
pub mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arch::{
    ctc_log_probs, emotion_logits, encoder_forward, forward_asr_baseline, forward_joint,
    forward_ser_baseline, fusion_forward, mean_pool, text_encode, EmotionLogits, JointOutput, JointVars,
    Session, TranscriptChoice,
};
pub use ctc::{ctc_greedy_decode, ctc_loss, CtcOutput, LogitLattice};
pub use params::ParamStore;
pub use vocab::Vocab;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {frames} frames; the encoder needs at least 4")]
    TooFewFrames { frames: usize },
    #[error("feature dimension {got} does not match the model's {expected}")]
    FeatureDim { got: usize, expected: usize },
    #[error("CTC target is empty")]
    EmptyTarget,
    #[error("infeasible CTC target: {frames} frames cannot emit a target needing {required}")]
    InfeasibleTarget { frames: usize, required: usize },
    #[error("token id {0} is not a valid CTC target")]
    InvalidToken(usize),
    #[error("character {0:?} is outside the vocabulary")]
    OutOfVocab(char),
    #[error("cannot pool an empty sequence")]
    EmptySequence,
    #[error("reference transcript required when the linguistic source is `reference`")]
    ReferenceRequired,
    #[error("architecture {arch} has no {what}")]
    MissingBranch { arch: Architecture, what: &'static str },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("shape mismatch for {name}: expected {expected:?}, got {got:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    AsrBaseline,
    SerBaseline,
    Joint,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Self::AsrBaseline, Self::SerBaseline, Self::Joint];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AsrBaseline => "asr_baseline",
            Self::SerBaseline => "ser_baseline",
            Self::Joint => "joint",
        }
    }

    pub fn has_ctc(self) -> bool {
        matches!(self, Self::AsrBaseline | Self::Joint)
    }

    pub fn has_emotion(self) -> bool {
        matches!(self, Self::SerBaseline | Self::Joint)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown architecture {s:?}"))
    }
}

/// Where the joint model's text encoder gets its transcript during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinguisticSource {
    #[default]
    Decoded,
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

/// Layer sizes. The defaults give a 128-d acoustic and 64-d linguistic
/// embedding; tests shrink everything for finite-difference checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_feats: usize,
    pub conv_channels: usize,
    /// Per direction; the acoustic embedding is twice this.
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub text_embed: usize,
    /// Per direction; the linguistic embedding is twice this.
    pub text_hidden: usize,
    /// Width of the SER baseline's hidden layer.
    pub ser_hidden: usize,
    pub freeze_frontend: bool,
    pub freeze_text_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_feats: 80,
            conv_channels: 64,
            enc_hidden: 64,
            enc_layers: 2,
            text_embed: 32,
            text_hidden: 32,
            ser_hidden: 128,
            freeze_frontend: false,
            freeze_text_encoder: false,
        }
    }
}

impl ModelConfig {
    pub fn acoustic_dim(&self) -> usize {
        2 * self.enc_hidden
    }

    pub fn linguistic_dim(&self) -> usize {
        2 * self.text_hidden
    }

    /// A configuration small enough for exhaustive finite differences.
    pub fn tiny(n_feats: usize) -> Self {
        Self {
            n_feats,
            conv_channels: 3,
            enc_hidden: 2,
            enc_layers: 2,
            text_embed: 2,
            text_hidden: 2,
            ser_hidden: 3,
            freeze_frontend: false,
            freeze_text_encoder: false,
        }
    }
}

/// An architecture, its sizes and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
}

impl Model {
    pub fn new(arch: Architecture, config: ModelConfig, seed: u64) -> Self {
        let vocab = Vocab::default();
        let params = ParamStore::init(arch, &config, vocab.len(), seed);
        Self {
            arch,
            config,
            vocab,
            params,
        }
    }

    /// Whether the optimizer may update `name` under the freeze flags.
    pub fn is_trainable(&self, name: &str) -> bool {
        !(self.config.freeze_frontend && name.starts_with("encoder.conv")
            || self.config.freeze_text_encoder && name.starts_with("text."))
    }

    pub fn n_params(&self) -> usize {
        self.params.n_values()
    }
}
