//! Losses, the optimization loop and gradient verification.

pub mod gradcheck;
mod loss;
pub mod optim;
mod trainer;

use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckReport, GradCheckSample};
pub use loss::{cross_entropy, joint_loss, JointLossConfig, LossBreakdown};
pub use optim::{AdamConfig, clip_global_norm};
pub use trainer::{fit, utterance_loss, FitOutcome, TrainConfig, TrainItem, TrainStats, Trainer};

use crate::audio::AudioError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training split is empty")]
    EmptyTrainSet,
    #[error("non-finite loss on utterance {id}: {loss:?}")]
    NonFiniteLoss { id: String, loss: LossBreakdown },
    #[error("utterance {id}: {source}")]
    Model {
        id: String,
        #[source]
        source: ModelError,
    },
    #[error("utterance {id}: {source}")]
    Audio {
        id: String,
        #[source]
        source: AudioError,
    },
}

impl TrainError {
    pub(crate) fn model(id: &str, source: ModelError) -> Self {
        Self::Model {
            id: id.to_string(),
            source,
        }
    }

    pub(crate) fn audio(id: &str, source: AudioError) -> Self {
        Self::Audio {
            id: id.to_string(),
            source,
        }
    }
}
