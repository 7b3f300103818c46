//! Run configuration: JSON file, environment and flag overrides, hashing.

use std::fs;
use std::path::{Path, PathBuf};

use jointspeech::audio::{MelConfig, CANONICAL_SAMPLE_RATE};
use jointspeech::corpus::PoolSplit;
use jointspeech::model::ModelConfig;
use jointspeech::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusPaths {
    /// Clean utterance manifest (JSONL).
    pub manifest: PathBuf,
    /// Noise pool listing (`noise.jsonl`).
    pub noise: PathBuf,
    pub noise_split: PoolSplit,
}

impl Default for CorpusPaths {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("corpus/manifest.jsonl"),
            noise: PathBuf::from("corpus/noise/noise.jsonl"),
            noise_split: PoolSplit::Disjoint,
        }
    }
}

/// Everything a run depends on. `train.seed` always mirrors `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Run directory; every output lands beneath it.
    pub out: PathBuf,
    pub corpus: CorpusPaths,
    pub mel: MelConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            corpus: CorpusPaths::default(),
            mel: MelConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))
    }

    /// Field-level problems, empty when the config is usable.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.mel.validate(CANONICAL_SAMPLE_RATE) {
            out.push(format!("mel: {e}"));
        }
        if self.model.n_feats != self.mel.n_mels {
            out.push(format!(
                "model.n_feats: {} does not match mel.n_mels {}",
                self.model.n_feats, self.mel.n_mels
            ));
        }
        for (name, v) in [
            ("model.conv_channels", self.model.conv_channels),
            ("model.enc_hidden", self.model.enc_hidden),
            ("model.enc_layers", self.model.enc_layers),
            ("model.text_embed", self.model.text_embed),
            ("model.text_hidden", self.model.text_hidden),
            ("model.ser_hidden", self.model.ser_hidden),
        ] {
            if v == 0 {
                out.push(format!("{name}: must be positive"));
            }
        }
        if let Err(e) = self.train.validate() {
            out.push(format!("train: {e}"));
        }
        if self.train.seed != self.seed {
            out.push(format!("train.seed: {} differs from seed {}; set the top-level seed", self.train.seed, self.seed));
        }
        out
    }

    /// Hex sha256 of the canonical JSON of everything except the run
    /// directory, so relocating a run does not change its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_partial_files_fill_in() {
        assert!(RunConfig::default().diagnostics().is_empty());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 3, "train": {"seed": 3, "epochs": 5}}"#).unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.model, ModelConfig::default());
        assert!(c.diagnostics().is_empty());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"epoch": 1}}"#).is_err());
    }

    #[test]
    fn diagnostics_name_fields() {
        let mut c = RunConfig::default();
        c.model.n_feats = 40;
        c.train.learning_rate = -1.0;
        let d = c.diagnostics();
        assert!(d.iter().any(|m| m.starts_with("model.n_feats")));
        assert!(d.iter().any(|m| m.starts_with("train:")));
    }

    #[test]
    fn hash_ignores_run_dir() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
