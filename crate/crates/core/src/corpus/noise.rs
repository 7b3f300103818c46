//! Noise pools, the noisy training set and the seven test scenarios.

use std::collections::BTreeMap;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{audio_err, io_err, stable_seed, write_atomic, write_manifest, CorpusError, Result, UtteranceRecord};
use crate::audio::{encode_wav, load_wav, mix_components, AudioBuffer, MixSpec, MixedComponents, NoiseCategory};

/// Training overlays draw integer SNRs uniformly from this range.
pub const SNR_RANGE_DB: RangeInclusive<i32> = 5..=35;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseClip {
    pub id: String,
    pub category: NoiseCategory,
    pub audio: AudioBuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NoiseEntry {
    id: String,
    category: NoiseCategory,
    wav: PathBuf,
}

/// How clips are shared between the training overlay and the test scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSplit {
    /// Within each category, clips at even positions (by id) go to training
    /// and the rest to testing.
    #[default]
    Disjoint,
    /// Both sides see every clip.
    Shared,
}

/// Background clips keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoisePool {
    clips: BTreeMap<String, NoiseClip>,
}

impl NoisePool {
    pub fn new(clips: impl IntoIterator<Item = NoiseClip>) -> Self {
        Self {
            clips: clips.into_iter().map(|c| (c.id.clone(), c)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&NoiseClip> {
        self.clips.get(id)
    }

    pub fn clips(&self) -> impl Iterator<Item = &NoiseClip> {
        self.clips.values()
    }

    /// Clips of one category in id order.
    pub fn category(&self, cat: NoiseCategory) -> Vec<&NoiseClip> {
        self.clips.values().filter(|c| c.category == cat).collect()
    }

    fn require_all(&self) -> Result<()> {
        for cat in NoiseCategory::ALL {
            if self.category(cat).is_empty() {
                return Err(CorpusError::EmptyNoiseCategory(cat));
            }
        }
        Ok(())
    }

    /// Returns (training pool, test pool).
    pub fn split(&self, how: PoolSplit) -> (NoisePool, NoisePool) {
        match how {
            PoolSplit::Shared => (self.clone(), self.clone()),
            PoolSplit::Disjoint => {
                let (mut train, mut test) = (Vec::new(), Vec::new());
                for cat in NoiseCategory::ALL {
                    for (i, c) in self.category(cat).into_iter().enumerate() {
                        if i % 2 == 0 { &mut train } else { &mut test }.push(c.clone());
                    }
                }
                (NoisePool::new(train), NoisePool::new(test))
            }
        }
    }

    /// Reads a `noise.jsonl` listing `{id, category, wav}` per line.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let base = manifest.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(manifest).map_err(io_err(manifest))?;
        let mut clips = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: NoiseEntry = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let audio = load_wav(base.join(&e.wav)).map_err(audio_err(format!("noise clip {}", e.id)))?;
            clips.push(NoiseClip {
                id: e.id,
                category: e.category,
                audio,
            });
        }
        Ok(Self::new(clips))
    }

    /// Writes `dir/noise.jsonl` and one WAV per clip; returns the manifest path.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let mut lines = Vec::new();
        for c in self.clips.values() {
            let wav = PathBuf::from("wav").join(format!("{}.wav", c.id));
            write_atomic(&dir.join(&wav), &encode_wav(&c.audio))?;
            serde_json::to_writer(
                &mut lines,
                &NoiseEntry {
                    id: c.id.clone(),
                    category: c.category,
                    wav,
                },
            )
            .expect("entry serializes");
            lines.push(b'\n');
        }
        let path = dir.join("noise.jsonl");
        write_atomic(&path, &lines)?;
        Ok(path)
    }
}

/// A clean or generated utterance together with how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedUtterance {
    pub record: UtteranceRecord,
    pub audio: AudioBuffer,
    /// `None` for untouched clean audio.
    pub provenance: Option<MixSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Clean,
    NoiseSnr15,
    NoiseSnr5,
    MusicSnr15,
    MusicSnr5,
    SpeechSnr15,
    SpeechSnr5,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Self::Clean,
        Self::NoiseSnr15,
        Self::NoiseSnr5,
        Self::MusicSnr15,
        Self::MusicSnr5,
        Self::SpeechSnr15,
        Self::SpeechSnr5,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Clean => "clean",
            Self::NoiseSnr15 => "noise_snr15",
            Self::NoiseSnr5 => "noise_snr5",
            Self::MusicSnr15 => "music_snr15",
            Self::MusicSnr5 => "music_snr5",
            Self::SpeechSnr15 => "speech_snr15",
            Self::SpeechSnr5 => "speech_snr5",
        }
    }

    /// Row label as printed in the results tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::Clean => "Clean",
            Self::NoiseSnr15 => "SNR 15 Noise",
            Self::NoiseSnr5 => "SNR 5 Noise",
            Self::MusicSnr15 => "SNR 15 Music",
            Self::MusicSnr5 => "SNR 5 Music",
            Self::SpeechSnr15 => "SNR 15 Speech",
            Self::SpeechSnr5 => "SNR 5 Speech",
        }
    }

    pub fn overlay(self) -> Option<(NoiseCategory, f64)> {
        use NoiseCategory::*;
        match self {
            Self::Clean => None,
            Self::NoiseSnr15 => Some((Noise, 15.0)),
            Self::NoiseSnr5 => Some((Noise, 5.0)),
            Self::MusicSnr15 => Some((Music, 15.0)),
            Self::MusicSnr5 => Some((Music, 5.0)),
            Self::SpeechSnr15 => Some((Speech, 15.0)),
            Self::SpeechSnr5 => Some((Speech, 5.0)),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub name: Scenario,
    pub utterances: Vec<MixedUtterance>,
}

/// Rebuilds an overlay from its provenance.
pub fn remix(clean: &AudioBuffer, pool: &NoisePool, spec: &MixSpec) -> Result<MixedComponents> {
    let clip = pool
        .get(&spec.noise_clip_id)
        .ok_or_else(|| CorpusError::UnknownClip(spec.noise_clip_id.clone()))?;
    mix_components(clean, &clip.audio, spec).map_err(audio_err(format!("clip {}", clip.id)))
}

fn overlay(
    record: &UtteranceRecord,
    clean: &AudioBuffer,
    pool: &NoisePool,
    seed: u64,
    category: NoiseCategory,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MixedUtterance> {
    let candidates = pool.category(category);
    if candidates.is_empty() {
        return Err(CorpusError::EmptyNoiseCategory(category));
    }
    let clip = candidates[rng.gen_range(0..candidates.len())];
    let spec = MixSpec {
        snr_db,
        noise_category: category,
        noise_clip_id: clip.id.clone(),
        noise_offset_samples: rng.gen_range(0..clip.audio.len().max(1)),
        seed,
    };
    let audio = mix_components(clean, &clip.audio, &spec)
        .map_err(audio_err(format!("utterance {}", record.id)))?
        .mixture();
    Ok(MixedUtterance {
        record: record.clone(),
        audio,
        provenance: Some(spec),
    })
}

/// Overlays every utterance once with a uniformly drawn category and integer
/// SNR. Each utterance's draw depends only on `(seed, id)`.
pub fn corrupt_training_set(
    items: &[(UtteranceRecord, AudioBuffer)],
    pool: &NoisePool,
    seed: u64,
) -> Result<Vec<MixedUtterance>> {
    pool.require_all()?;
    items
        .iter()
        .map(|(rec, audio)| {
            let s = stable_seed(seed, &["train", &rec.id]);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let cat = NoiseCategory::ALL[rng.gen_range(0..NoiseCategory::ALL.len())];
            let snr = rng.gen_range(SNR_RANGE_DB) as f64;
            overlay(rec, audio, pool, s, cat, snr, &mut rng)
        })
        .collect()
}

/// The clean set plus six fixed-SNR overlays, in [`Scenario::ALL`] order.
pub fn build_test_scenarios(
    items: &[(UtteranceRecord, AudioBuffer)],
    pool: &NoisePool,
    seed: u64,
) -> Result<Vec<ScenarioSet>> {
    pool.require_all()?;
    Scenario::ALL
        .into_iter()
        .map(|name| {
            let utterances = items
                .iter()
                .map(|(rec, audio)| match name.overlay() {
                    None => Ok(MixedUtterance {
                        record: rec.clone(),
                        audio: audio.clone(),
                        provenance: None,
                    }),
                    Some((cat, snr)) => {
                        let s = stable_seed(seed, &[name.as_str(), &rec.id]);
                        overlay(rec, audio, pool, s, cat, snr, &mut ChaCha8Rng::seed_from_u64(s))
                    }
                })
                .collect::<Result<_>>()?;
            Ok(ScenarioSet { name, utterances })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ProvenanceLine {
    id: String,
    source_wav: PathBuf,
    mix: MixSpec,
}

/// Writes `dir/wav/<id>.wav`, `dir/manifest.jsonl` and, for overlays,
/// `dir/provenance.jsonl`. Clean utterances are copied byte for byte from
/// their source file. Returns the records as written.
pub fn write_mixed(dir: impl AsRef<Path>, utterances: &[MixedUtterance]) -> Result<Vec<UtteranceRecord>> {
    let dir = dir.as_ref();
    let mut records = Vec::with_capacity(utterances.len());
    let mut prov = Vec::new();
    for u in utterances {
        let dest = dir.join("wav").join(format!("{}.wav", u.record.id));
        match &u.provenance {
            None => {
                let bytes = fs::read(&u.record.wav).map_err(io_err(&u.record.wav))?;
                write_atomic(&dest, &bytes)?;
            }
            Some(spec) => {
                write_atomic(&dest, &encode_wav(&u.audio))?;
                serde_json::to_writer(
                    &mut prov,
                    &ProvenanceLine {
                        id: u.record.id.clone(),
                        source_wav: u.record.wav.clone(),
                        mix: spec.clone(),
                    },
                )
                .expect("provenance serializes");
                prov.push(b'\n');
            }
        }
        records.push(UtteranceRecord {
            wav: dest,
            ..u.record.clone()
        });
    }
    write_manifest(dir.join("manifest.jsonl"), &records)?;
    if !prov.is_empty() {
        write_atomic(&dir.join("provenance.jsonl"), &prov)?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::Emotion;

    fn tone(freq: f64, n: usize, amp: f64) -> AudioBuffer {
        AudioBuffer::new(
            (0..n)
                .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
        .unwrap()
    }

    fn pool(per_cat: usize) -> NoisePool {
        let mut clips = Vec::new();
        for (k, cat) in NoiseCategory::ALL.into_iter().enumerate() {
            for j in 0..per_cat {
                clips.push(NoiseClip {
                    id: format!("{cat}-{j}"),
                    category: cat,
                    audio: tone(200.0 + 300.0 * k as f64 + 37.0 * j as f64, 3000 + 100 * j, 0.5),
                });
            }
        }
        NoisePool::new(clips)
    }

    fn items(n: usize) -> Vec<(UtteranceRecord, AudioBuffer)> {
        (0..n)
            .map(|i| {
                (
                    UtteranceRecord {
                        id: format!("u{i:04}"),
                        wav: format!("u{i}.wav").into(),
                        speaker: format!("s{}", i % 3),
                        session: "1".into(),
                        transcript: "a".into(),
                        emotion: Emotion::Sad,
                        duration_s: 0.25,
                    },
                    tone(440.0 + i as f64, 4000, 0.3),
                )
            })
            .collect()
    }

    #[test]
    fn corruption_is_one_to_one_and_order_independent() {
        let its = items(100);
        let out = corrupt_training_set(&its, &pool(2), 9).unwrap();
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|u| u.provenance.is_some()));
        let again = corrupt_training_set(&its, &pool(2), 9).unwrap();
        assert_eq!(out, again);
        let mut rev = its.clone();
        rev.reverse();
        let mut r = corrupt_training_set(&rev, &pool(2), 9).unwrap();
        r.reverse();
        assert_eq!(out, r);
        assert_ne!(out, corrupt_training_set(&its, &pool(2), 10).unwrap());
    }

    #[test]
    fn snr_and_category_distribution() {
        let out = corrupt_training_set(&items(3100), &pool(1), 1).unwrap();
        let mut counts = BTreeMap::new();
        let mut snrs = BTreeMap::new();
        for u in &out {
            let s = u.provenance.as_ref().unwrap();
            assert!(SNR_RANGE_DB.contains(&(s.snr_db as i32)) && s.snr_db.fract() == 0.0);
            *counts.entry(s.noise_category).or_insert(0usize) += 1;
            *snrs.entry(s.snr_db as i32).or_insert(0usize) += 1;
        }
        let n = out.len() as f64;
        let sigma = (n * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts.values() {
            assert!((*c as f64 - n / 3.0).abs() < 5.0 * sigma, "{counts:?}");
        }
        assert_eq!(snrs.len(), 31);
    }

    #[test]
    fn empty_category_is_an_error() {
        let p = NoisePool::new(pool(1).clips().filter(|c| c.category != NoiseCategory::Music).cloned());
        assert!(matches!(
            corrupt_training_set(&items(2), &p, 0),
            Err(CorpusError::EmptyNoiseCategory(NoiseCategory::Music))
        ));
    }

    #[test]
    fn seven_scenarios_with_exact_snr() {
        let its = items(20);
        let p = pool(2);
        let sets = build_test_scenarios(&its, &p, 3).unwrap();
        let names: Vec<_> = sets.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            ["clean", "noise_snr15", "noise_snr5", "music_snr15", "music_snr5", "speech_snr15", "speech_snr5"]
        );
        for s in &sets {
            assert_eq!(s.utterances.len(), its.len());
            for (u, (rec, clean)) in s.utterances.iter().zip(&its) {
                assert_eq!(u.record.id, rec.id);
                match (s.name.overlay(), &u.provenance) {
                    (None, None) => assert_eq!(&u.audio, clean),
                    (Some((cat, snr)), Some(spec)) => {
                        assert_eq!(spec.noise_category, cat);
                        let m = remix(clean, &p, spec).unwrap();
                        assert!((m.measured_snr_db().unwrap() - snr).abs() < 1e-4);
                        assert_eq!(m.mixture(), u.audio);
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
    }

    #[test]
    fn disjoint_split() {
        let (train, test) = pool(3).split(PoolSplit::Disjoint);
        for cat in NoiseCategory::ALL {
            assert_eq!(train.category(cat).len(), 2);
            assert_eq!(test.category(cat).len(), 1);
        }
        assert!(train.clips().all(|c| test.get(&c.id).is_none()));
        let (a, b) = pool(1).split(PoolSplit::Disjoint);
        assert_eq!(a.len(), 3);
        assert!(b.is_empty());
        assert!(build_test_scenarios(&items(1), &b, 0).is_err());
    }

    #[test]
    fn pool_and_sets_persist() {
        let dir = tempfile::tempdir().unwrap();
        let p = pool(1);
        let path = p.save(dir.path().join("noise")).unwrap();
        let back = NoisePool::load(&path).unwrap();
        assert_eq!(back.len(), 3);

        let mut its = items(2);
        for (rec, audio) in its.iter_mut() {
            let src = dir.path().join(format!("{}.wav", rec.id));
            crate::audio::save_wav(&src, audio).unwrap();
            rec.wav = src;
        }
        let sets = build_test_scenarios(&its, &back, 0).unwrap();
        let recs = write_mixed(dir.path().join("clean"), &sets[0].utterances).unwrap();
        assert_eq!(fs::read(&recs[0].wav).unwrap(), fs::read(&its[0].0.wav).unwrap());
        write_mixed(dir.path().join("music"), &sets[4].utterances).unwrap();
        let prov = fs::read_to_string(dir.path().join("music/provenance.jsonl")).unwrap();
        assert_eq!(prov.lines().count(), 2);
        let loaded = super::super::load_manifest(dir.path().join("music/manifest.jsonl")).unwrap();
        assert_eq!(loaded.len(), 2);
    }
}
