//! Manifests, leave-one-speaker-out fold plans, noisy-set construction and
//! the synthetic toy corpus.

mod folds;
mod noise;
mod synth;

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio::{AudioBuffer, AudioError};
use crate::emotion::Emotion;

pub use folds::{make_loso_folds, Fold, FoldPlan};
pub use noise::{
    build_test_scenarios, corrupt_training_set, remix, write_mixed, MixedUtterance, NoiseClip, NoisePool,
    PoolSplit, Scenario, ScenarioSet, SNR_RANGE_DB,
};
pub use synth::{synth_noise_pool, synth_toy_corpus, write_corpus, SynthConfig};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown emotion label {value:?}")]
    UnknownEmotion { line: usize, value: String },
    #[error("need at least 2 distinct speakers, found {0}")]
    TooFewSpeakers(usize),
    #[error("noise pool has no {0} clips")]
    EmptyNoiseCategory(crate::audio::NoiseCategory),
    #[error("{what}: {source}")]
    Audio {
        what: String,
        #[source]
        source: AudioError,
    },
    #[error("unknown noise clip {0:?}")]
    UnknownClip(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn audio_err(what: impl Into<String>) -> impl FnOnce(AudioError) -> CorpusError {
    let what = what.into();
    move |source| CorpusError::Audio { what, source }
}

/// Training condition: clean audio only, or every utterance replaced by one
/// noisy overlay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainedOn {
    Clean,
    Noise,
}

impl TrainedOn {
    pub const ALL: [TrainedOn; 2] = [Self::Clean, Self::Noise];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Clean => "clean",
            Self::Noise => "noise",
        }
    }
}

impl std::fmt::Display for TrainedOn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TrainedOn {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown training condition {s:?} (expected clean or noise)"))
    }
}

/// One corpus item. `wav` is stored relative to the manifest's directory when
/// possible and resolved against it on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub wav: PathBuf,
    pub speaker: String,
    pub session: String,
    pub transcript: String,
    pub emotion: Emotion,
    pub duration_s: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    wav: PathBuf,
    speaker: String,
    session: String,
    transcript: String,
    emotion: String,
    duration_s: f64,
}

/// Lowercase letters, spaces and apostrophes; digits must be spelled out.
pub fn is_valid_transcript(t: &str) -> bool {
    !t.trim().is_empty() && t.chars().all(|c| c.is_ascii_lowercase() || c == ' ' || c == '\'')
}

/// Stable 64-bit seed derived from a base seed and string parts. Used for
/// per-utterance streams so that results do not depend on processing order.
pub fn stable_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Parses JSONL manifest text. Relative `wav` paths are joined onto `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<UtteranceRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(raw_line).map_err(|e| CorpusError::Malformed {
            line,
            msg: e.to_string(),
        })?;
        let emotion = Emotion::parse(&raw.emotion).ok_or_else(|| CorpusError::UnknownEmotion {
            line,
            value: raw.emotion.clone(),
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: raw.id });
        }
        if !is_valid_transcript(&raw.transcript) {
            return Err(CorpusError::Malformed {
                line,
                msg: format!("transcript {:?} must be non-empty lowercase letters, spaces and apostrophes", raw.transcript),
            });
        }
        if !(raw.duration_s > 0.0 && raw.duration_s.is_finite()) {
            return Err(CorpusError::Malformed {
                line,
                msg: format!("duration_s must be positive, got {}", raw.duration_s),
            });
        }
        let wav = if raw.wav.is_absolute() { raw.wav } else { base.join(raw.wav) };
        out.push(UtteranceRecord {
            id: raw.id,
            wav,
            speaker: raw.speaker,
            session: raw.session,
            transcript: raw.transcript,
            emotion,
            duration_s: raw.duration_s,
        });
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Writes records as JSONL, making `wav` paths relative to the manifest's
/// directory where they lie beneath it.
pub fn write_manifest(path: impl AsRef<Path>, records: &[UtteranceRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut buf = Vec::new();
    for r in records {
        let mut r = r.clone();
        if let Ok(rel) = r.wav.strip_prefix(base) {
            r.wav = rel.to_path_buf();
        }
        serde_json::to_writer(&mut buf, &r).expect("records serialize");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Writes via a temporary sibling and a rename so readers never see a
/// half-written file. Concurrent writers of the same path do not collide;
/// the last rename wins.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{}.{n}.tmp", std::process::id()));
    let tmp = path.with_file_name(name);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Loads each record's audio.
pub fn load_audio(records: &[UtteranceRecord]) -> Result<Vec<(UtteranceRecord, AudioBuffer)>> {
    records
        .iter()
        .map(|r| {
            let a = crate::audio::load_wav(&r.wav).map_err(audio_err(format!("utterance {}", r.id)))?;
            Ok((r.clone(), a))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, emotion: &str) -> String {
        format!(
            r#"{{"id":"{id}","wav":"wav/{id}.wav","speaker":"s1","session":"1","transcript":"hi there","emotion":"{emotion}","duration_s":1.5}}"#
        )
    }

    #[test]
    fn three_lines_three_records() {
        let text = [line("a", "neutral"), line("b", "sad"), line("c", "excited")].join("\n");
        let recs = parse_manifest(&text, Path::new("/data")).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].emotion, Emotion::Happy);
        assert_eq!(recs[0].wav, PathBuf::from("/data/wav/a.wav"));
    }

    #[test]
    fn unknown_emotion_names_line_and_value() {
        let text = [line("a", "neutral"), line("b", "fear")].join("\n");
        let err = parse_manifest(&text, Path::new(".")).unwrap_err();
        assert!(matches!(&err, CorpusError::UnknownEmotion { line: 2, value } if value == "fear"));
        assert!(err.to_string().contains("line 2") && err.to_string().contains("fear"));
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = [line("u1", "neutral"), line("u1", "sad")].join("\n");
        assert!(matches!(
            parse_manifest(&text, Path::new(".")),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_and_bad_transcript() {
        assert!(matches!(
            parse_manifest("{not json", Path::new(".")),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
        let bad = line("a", "sad").replace("hi there", "Hi 2");
        assert!(matches!(parse_manifest(&bad, Path::new(".")), Err(CorpusError::Malformed { .. })));
        let extra = line("a", "sad").replace("}", r#","extra":1}"#);
        assert!(parse_manifest(&extra, Path::new(".")).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let text = [line("a", "angry"), line("b", "happy")].join("\n");
        let recs = parse_manifest(&text, dir.path()).unwrap();
        let p = dir.path().join("manifest.jsonl");
        write_manifest(&p, &recs).unwrap();
        assert!(fs::read_to_string(&p).unwrap().contains(r#""wav":"wav/a.wav""#));
        assert_eq!(load_manifest(&p).unwrap(), recs);
    }

    #[test]
    fn stable_seed_separates_parts() {
        assert_eq!(stable_seed(1, &["a"]), stable_seed(1, &["a"]));
        assert_ne!(stable_seed(1, &["a"]), stable_seed(2, &["a"]));
        assert_ne!(stable_seed(1, &["ab", "c"]), stable_seed(1, &["a", "bc"]));
    }
}
