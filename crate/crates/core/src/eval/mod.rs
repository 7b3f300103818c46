//! Pooled scoring across folds, the Rel Imp columns and report rendering.

mod evaluate;
mod metrics;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioError;
use crate::corpus::TrainedOn;
use crate::model::{Architecture, ModelError};

pub use evaluate::{evaluate_scenarios, CheckpointSet, TrainedModel};
pub use metrics::{
    align, confusion, corpus_wer, normalize_transcript, relative_improvement, ser_accuracy, transcript_distance,
    unweighted_average_recall, word_edit_distance, Confusion, EditOp, WerBreakdown,
};
pub use report::{
    emit_report, render_markdown, render_svg, ConfusionCell, EvalReport, FoldResult, RelImp, ScenarioResult,
    REPORT_SCHEMA,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference transcript is empty")]
    EmptyReference,
    #[error("{0}: no items to score")]
    EmptyInput(&'static str),
    #[error("{labels} labels but {preds} predictions")]
    LengthMismatch { labels: usize, preds: usize },
    #[error("relative WER improvement is undefined for a zero baseline")]
    ZeroBaseline,
    #[error("leakage: {arch}/{trained_on} checkpoint for fold {fold} was trained on test speaker {speaker}")]
    Leakage {
        fold: usize,
        speaker: String,
        arch: Architecture,
        trained_on: TrainedOn,
    },
    #[error("{arch}/{trained_on} checkpoint for fold {fold} holds out {found:?}, but the fold tests {expected}")]
    FoldMismatch {
        fold: usize,
        expected: String,
        found: Option<String>,
        arch: Architecture,
        trained_on: TrainedOn,
    },
    #[error("scenario {0} is missing")]
    MissingScenario(String),
    #[error("scenario {scenario} has no utterance {id}")]
    MissingUtterance { scenario: String, id: String },
    #[error("report is incomplete; {} missing cells: {}", .0.len(), summarize(.0))]
    IncompleteReport(Vec<String>),
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
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn summarize(names: &[String]) -> String {
    const SHOWN: usize = 6;
    let mut s = names.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if names.len() > SHOWN {
        s.push_str(&format!(", ... (+{} more)", names.len() - SHOWN));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Asr,
    Ser,
}

impl Task {
    pub const ALL: [Task; 2] = [Self::Asr, Self::Ser];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Asr => "asr",
            Self::Ser => "ser",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Column of the results table: the task's own baseline, or the joint model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Baseline,
    Joint,
}

impl System {
    pub const ALL: [System; 2] = [Self::Baseline, Self::Joint];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Joint => "joint",
        }
    }

    /// The architecture that produces this column for `task`.
    pub fn architecture(self, task: Task) -> Architecture {
        match (self, task) {
            (Self::Joint, _) => Architecture::Joint,
            (Self::Baseline, Task::Asr) => Architecture::AsrBaseline,
            (Self::Baseline, Task::Ser) => Architecture::SerBaseline,
        }
    }
}

impl std::fmt::Display for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
