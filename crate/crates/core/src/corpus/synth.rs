//! Synthetic desk-scale corpus: each character is a short tone, each emotion
//! a carrier hum with its own pitch contour and envelope, each speaker a
//! small pitch offset.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::{NoiseClip, NoisePool};
use super::{stable_seed, write_atomic, write_manifest, Result, UtteranceRecord};
use crate::audio::{decode_wav, encode_wav, AudioBuffer, NoiseCategory};
use crate::emotion::Emotion;

/// Symbols with a tone of their own, in tone order.
const SYMBOLS: &str = "abcdefghijklmnopqrstuvwxyz '";

const WORDS: [[&str; 4]; 4] = [
    ["it is", "we go", "the map", "so far"],
    ["yes yay", "fun day", "we won", "joy now"],
    ["so low", "i miss", "too bad", "we lost"],
    ["stop it", "get out", "no way", "you lie"],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sample_rate_hz: u32,
    pub char_ms: f64,
    pub gap_ms: f64,
    /// Carrier-only stretch before and after the characters.
    pub pad_ms: f64,
    pub tone_amp: f64,
    pub carrier_amp: f64,
    /// Carrier level under the characters, relative to the pads.
    pub carrier_duck: f64,
    pub floor_amp: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16000,
            char_ms: 120.0,
            gap_ms: 30.0,
            pad_ms: 250.0,
            tone_amp: 0.3,
            carrier_amp: 0.25,
            carrier_duck: 0.25,
            floor_amp: 2e-3,
        }
    }
}

fn symbol_freq(c: char) -> f64 {
    let idx = SYMBOLS.find(c).unwrap_or(0) as f64;
    600.0 * 10f64.powf(idx / (SYMBOLS.len() - 1) as f64)
}

/// Raised-cosine fade in/out of `fade` samples over a segment of `n`.
fn fade(i: usize, n: usize, fade: usize) -> f64 {
    let edge = i.min(n - 1 - i);
    if edge >= fade {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / fade as f64).cos()
    }
}

/// Emotion carrier at time `t` (seconds) of a `dur`-second utterance.
/// `phase` is the running phase of the fundamental, advanced in place.
fn carrier(emotion: Emotion, f0: f64, t: f64, dur: f64, dt: f64, phase: &mut f64) -> f64 {
    let u = t / dur;
    let (freq, env, harmonics): (f64, f64, &[f64]) = match emotion {
        Emotion::Neutral => (f0, 1.0, &[1.0, 0.3]),
        // rising glide with tremolo
        Emotion::Happy => (f0 * (1.0 + 0.2 * u), 0.75 + 0.25 * (2.0 * PI * 6.0 * t).sin(), &[1.0, 0.4]),
        // falling, fading
        Emotion::Sad => (f0 * (1.0 - 0.15 * u), 1.0 - 0.5 * u, &[1.0]),
        // harmonic-rich bursts
        Emotion::Angry => (
            f0,
            if (t * 8.0).fract() < 0.6 { 1.0 } else { 0.35 },
            &[1.0, 0.5, 0.33, 0.25, 0.2],
        ),
    };
    *phase += 2.0 * PI * freq * dt;
    env * harmonics
        .iter()
        .enumerate()
        .map(|(k, a)| a * ((k + 1) as f64 * *phase).sin())
        .sum::<f64>()
}

fn base_f0(emotion: Emotion) -> f64 {
    match emotion {
        Emotion::Neutral => 160.0,
        Emotion::Happy => 260.0,
        Emotion::Sad => 115.0,
        Emotion::Angry => 380.0,
    }
}

/// Rounds through 16-bit PCM so the in-memory signal equals what a WAV
/// round trip returns.
fn quantize(buf: AudioBuffer) -> AudioBuffer {
    decode_wav(&encode_wav(&buf)).expect("freshly encoded WAV decodes")
}

fn render(
    cfg: &SynthConfig,
    transcript: &str,
    emotion: Emotion,
    speaker_scale: f64,
    rng: &mut ChaCha8Rng,
) -> AudioBuffer {
    let sr = cfg.sample_rate_hz as f64;
    let ms = |x: f64| (x * sr / 1000.0).round() as usize;
    let (pad, char_n, gap) = (ms(cfg.pad_ms), ms(cfg.char_ms), ms(cfg.gap_ms));
    let n_chars = transcript.chars().count();
    let n = 2 * pad + n_chars * (char_n + gap);
    let dur = n as f64 / sr;
    let f0 = base_f0(emotion) * speaker_scale;
    // speakers shift character tones far less than the carrier
    let tone_scale = 1.0 + 0.1 * (speaker_scale - 1.0);
    let mut out = vec![0.0; n];
    let mut phase = rng.gen_range(0.0..2.0 * PI);
    for (i, s) in out.iter_mut().enumerate() {
        let in_pad = i < pad || i >= n - pad;
        let level = if in_pad { 1.0 } else { cfg.carrier_duck };
        *s = cfg.carrier_amp * level * carrier(emotion, f0, i as f64 / sr, dur, 1.0 / sr, &mut phase) / 1.6;
        *s += cfg.floor_amp * rng.gen_range(-1.0..1.0);
    }
    for (k, c) in transcript.chars().enumerate() {
        let start = pad + k * (char_n + gap);
        let freq = symbol_freq(c) * tone_scale;
        let ph = rng.gen_range(0.0..2.0 * PI);
        let amp = cfg.tone_amp * rng.gen_range(0.9..1.1);
        for j in 0..char_n {
            let t = j as f64 / sr;
            out[start + j] += amp * fade(j, char_n, ms(10.0)) * (2.0 * PI * freq * t + ph).sin();
        }
    }
    quantize(AudioBuffer::new(out, cfg.sample_rate_hz).expect("non-empty synthetic signal"))
}

/// Generates `n_speakers × n_per_speaker` utterances. Emotions are assigned
/// round-robin within each speaker; speaker `k` is `spk{k}` and its audio
/// path is `wav/<id>.wav` (see [`write_corpus`]).
pub fn synth_toy_corpus(n_speakers: usize, n_per_speaker: usize, seed: u64) -> Vec<(UtteranceRecord, AudioBuffer)> {
    let cfg = SynthConfig::default();
    let mut out = Vec::with_capacity(n_speakers * n_per_speaker);
    for s in 0..n_speakers {
        let speaker = format!("spk{s}");
        let mut srng = ChaCha8Rng::seed_from_u64(stable_seed(seed, &["speaker", &speaker]));
        let speaker_scale = 1.0 + srng.gen_range(-0.06..0.06);
        for j in 0..n_per_speaker {
            let emotion = Emotion::ALL[j % Emotion::COUNT];
            let transcript = WORDS[emotion.index()][(j / Emotion::COUNT + s) % 4];
            let id = format!("{speaker}_u{j:03}");
            let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(seed, &["utterance", &id]));
            let audio = render(&cfg, transcript, emotion, speaker_scale, &mut rng);
            out.push((
                UtteranceRecord {
                    wav: PathBuf::from("wav").join(format!("{id}.wav")),
                    id,
                    speaker: speaker.clone(),
                    session: format!("{}", s / 2 + 1),
                    transcript: transcript.to_string(),
                    emotion,
                    duration_s: audio.duration_s(),
                },
                audio,
            ));
        }
    }
    out
}

/// Writes `dir/wav/<id>.wav` and `dir/manifest.jsonl`; returns the records
/// with their final paths.
pub fn write_corpus(dir: impl AsRef<Path>, items: &[(UtteranceRecord, AudioBuffer)]) -> Result<Vec<UtteranceRecord>> {
    let dir = dir.as_ref();
    let mut records = Vec::with_capacity(items.len());
    for (rec, audio) in items {
        let wav = dir.join("wav").join(format!("{}.wav", rec.id));
        write_atomic(&wav, &encode_wav(audio))?;
        records.push(UtteranceRecord { wav, ..rec.clone() });
    }
    write_manifest(dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}

fn noise_clip(cat: NoiseCategory, n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match cat {
        // white plus a random walk (brownish) component
        NoiseCategory::Noise => {
            let mut walk = 0.0;
            (0..n)
                .map(|_| {
                    walk = 0.98 * walk + 0.1 * rng.gen_range(-1.0..1.0);
                    0.2 * rng.gen_range(-1.0..1.0) + walk
                })
                .collect()
        }
        // three-note chords with harmonics, a new chord every 300 ms
        NoiseCategory::Music => {
            let seg = (0.3 * sr) as usize;
            let mut out = vec![0.0; n];
            for start in (0..n).step_by(seg) {
                let root = 220.0 * 2f64.powf(rng.gen_range(0..12) as f64 / 12.0);
                let notes = [root, root * 2f64.powf(4.0 / 12.0), root * 2f64.powf(7.0 / 12.0)];
                let len = seg.min(n - start);
                for (j, s) in out[start..start + len].iter_mut().enumerate() {
                    let t = j as f64 / sr;
                    let env = (-3.0 * t).exp() * fade(j, len, 80);
                    *s = env
                        * notes
                            .iter()
                            .map(|f| (2.0 * PI * f * t).sin() + 0.3 * (4.0 * PI * f * t).sin())
                            .sum::<f64>()
                        / 4.0;
                }
            }
            out
        }
        // babble: three overlapping random symbol-tone streams
        NoiseCategory::Speech => {
            let tone = (0.12 * sr) as usize;
            let mut out = vec![0.0; n];
            for _ in 0..3 {
                let mut pos = rng.gen_range(0..tone);
                while pos < n {
                    let c = SYMBOLS.chars().nth(rng.gen_range(0..SYMBOLS.len())).expect("in range");
                    let f = symbol_freq(c) * rng.gen_range(0.94..1.06);
                    let len = tone.min(n - pos);
                    for j in 0..len {
                        out[pos + j] += 0.3 * fade(j, len, 160) * (2.0 * PI * f * j as f64 / sr).sin();
                    }
                    pos += len + rng.gen_range(0..tone / 2);
                }
            }
            out
        }
    }
}

/// `per_category` clips of each category, three seconds each.
pub fn synth_noise_pool(per_category: usize, seed: u64) -> NoisePool {
    let sr = 16000;
    let mut clips = Vec::new();
    for cat in NoiseCategory::ALL {
        for j in 0..per_category {
            let id = format!("{cat}-{j:02}");
            let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(seed, &["noise", &id]));
            let samples = noise_clip(cat, 3 * sr as usize, sr as f64, &mut rng);
            clips.push(NoiseClip {
                id,
                category: cat,
                audio: quantize(AudioBuffer::new(samples, sr).expect("non-empty clip")),
            });
        }
    }
    NoisePool::new(clips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_manifest;
    use std::collections::BTreeSet;

    #[test]
    fn toy_corpus_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_corpus(dir.path().join("a"), &synth_toy_corpus(2, 4, 7)).unwrap();
        let b = write_corpus(dir.path().join("b"), &synth_toy_corpus(2, 4, 7)).unwrap();
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(&x.wav).unwrap(), std::fs::read(&y.wav).unwrap());
        }
        let m = load_manifest(dir.path().join("a/manifest.jsonl")).unwrap();
        assert_eq!(m, a);
        assert_eq!(
            std::fs::read(dir.path().join("a/manifest.jsonl")).unwrap(),
            std::fs::read(dir.path().join("b/manifest.jsonl")).unwrap()
        );
    }

    #[test]
    fn all_emotions_present_and_seeds_differ() {
        let c = synth_toy_corpus(2, 4, 7);
        let emotions: BTreeSet<_> = c.iter().map(|(r, _)| r.emotion).collect();
        assert_eq!(emotions.len(), 4);
        let d = synth_toy_corpus(2, 4, 8);
        assert_ne!(c[0].1, d[0].1);
        assert_eq!(c[0].0.transcript, d[0].0.transcript);
        for (r, a) in &c {
            assert!(crate::corpus::is_valid_transcript(&r.transcript));
            assert!(a.peak() < 1.0);
        }
    }

    #[test]
    fn noise_pool_has_every_category() {
        let p = synth_noise_pool(2, 1);
        for cat in NoiseCategory::ALL {
            assert_eq!(p.category(cat).len(), 2);
            assert!(p.category(cat).iter().all(|c| crate::audio::rms(&c.audio).unwrap() > 0.01));
        }
    }
}
