//! Signal-level primitives: WAV I/O, energy, SNR-exact mixing, speed
//! perturbation and log-mel features.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::FeatureMatrix;

pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

/// Speed factors (percent) accepted by [`speed_perturb`].
pub const SPEED_FACTORS: [u32; 3] = [95, 100, 105];

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio file not found: {0}")]
    MissingFile(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a RIFF/WAVE file: {0}")]
    NotWave(String),
    #[error("expected mono audio, found {channels} channels")]
    NotMono { channels: u16 },
    #[error("unsupported encoding: format tag {format_tag}, {bits} bits per sample")]
    UnsupportedEncoding { format_tag: u16, bits: u16 },
    #[error("empty audio")]
    EmptyAudio,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("zero-energy {0} signal cannot be mixed")]
    ZeroEnergy(&'static str),
    #[error("invalid mix spec: {0}")]
    InvalidMixSpec(String),
    #[error("speed factor {0} not in {{95, 100, 105}}")]
    InvalidSpeedFactor(u32),
    #[error("buffer of {len} samples is shorter than one window ({win} samples)")]
    TooShort { len: usize, win: usize },
    #[error("invalid mel config: {0}")]
    InvalidMelConfig(String),
}

pub type Result<T> = std::result::Result<T, AudioError>;

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

// ---------------------------------------------------------------------------
// WAV I/O

/// Reads a 16-bit PCM mono RIFF/WAVE file. Samples are divided by 32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    if !path.exists() {
        return Err(AudioError::MissingFile(shown));
    }
    let bytes = fs::read(path).map_err(|source| AudioError::Io {
        path: shown.clone(),
        source,
    })?;
    decode_wav(&bytes).map_err(|e| match e {
        AudioError::NotWave(_) => AudioError::NotWave(shown),
        other => other,
    })
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let not_wave = || AudioError::NotWave("<memory>".into());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(not_wave());
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or_else(not_wave)?;
        if body_end > bytes.len() {
            return Err(not_wave());
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(not_wave());
                }
                let format_tag = u16::from_le_bytes([body[0], body[1]]);
                let channels = u16::from_le_bytes([body[2], body[3]]);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes([body[14], body[15]]);
                fmt = Some((format_tag, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let (format_tag, channels, rate, bits) = fmt.ok_or_else(not_wave)?;
    let data = data.ok_or_else(not_wave)?;
    if channels != 1 {
        return Err(AudioError::NotMono { channels });
    }
    if format_tag != 1 || bits != 16 {
        return Err(AudioError::UnsupportedEncoding { format_tag, bits });
    }
    if data.len() < 2 {
        return Err(AudioError::EmptyAudio);
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    AudioBuffer::new(samples, rate)
}

/// Quantizes to 16-bit PCM. Values outside the representable range saturate.
pub fn encode_wav(buf: &AudioBuffer) -> Vec<u8> {
    let n = buf.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &buf.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn save_wav(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| AudioError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, encode_wav(buf)).map_err(|source| AudioError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Energy and mixing

pub fn rms(buf: &AudioBuffer) -> Result<f64> {
    rms_of(buf.samples())
}

pub(crate) fn rms_of(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let sum_sq: f64 = samples.iter().map(|s| s * s).sum();
    Ok((sum_sq / samples.len() as f64).sqrt())
}

/// Background category of an overlay clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseCategory {
    Noise,
    Music,
    Speech,
}

impl NoiseCategory {
    pub const ALL: [NoiseCategory; 3] = [Self::Noise, Self::Music, Self::Speech];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Noise => "noise",
            Self::Music => "music",
            Self::Speech => "speech",
        }
    }
}

impl std::fmt::Display for NoiseCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full description of one overlay. Serialized verbatim as the provenance
/// sidecar of every generated file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub snr_db: f64,
    pub noise_category: NoiseCategory,
    pub noise_clip_id: String,
    pub noise_offset_samples: usize,
    pub seed: u64,
}

/// The two scaled components of a mixture, kept apart so the SNR can be
/// re-measured after the fact.
#[derive(Debug, Clone)]
pub struct MixedComponents {
    pub clean: AudioBuffer,
    pub noise: AudioBuffer,
    pub noise_gain: f64,
    /// Joint rescale applied to both components (1.0 when no peak exceeded 1).
    pub peak_scale: f64,
}

impl MixedComponents {
    pub fn mixture(&self) -> AudioBuffer {
        let samples = self
            .clean
            .samples
            .iter()
            .zip(&self.noise.samples)
            .map(|(c, n)| c + n)
            .collect();
        AudioBuffer {
            samples,
            sample_rate_hz: self.clean.sample_rate_hz,
        }
    }

    /// 20·log10(rms(clean)/rms(noise)) of the stored components.
    pub fn measured_snr_db(&self) -> Result<f64> {
        Ok(20.0 * (rms(&self.clean)? / rms(&self.noise)?).log10())
    }
}

/// Largest amplitude a mixture may keep; the 16-bit quantizer saturates above it.
const MAX_PEAK: f64 = 32767.0 / 32768.0;

/// Noise gain for a target SNR: (rms_clean / rms_noise) · 10^(−snr/20).
pub fn snr_gain(rms_clean: f64, rms_noise: f64, snr_db: f64) -> f64 {
    (rms_clean / rms_noise) * 10f64.powf(-snr_db / 20.0)
}

/// Tiles `noise` cyclically starting at `offset` to exactly `len` samples.
pub fn tile_noise(noise: &AudioBuffer, offset: usize, len: usize) -> Vec<f64> {
    let n = noise.len();
    (0..len).map(|i| noise.samples[(offset + i) % n]).collect()
}

pub fn mix_components(
    clean: &AudioBuffer,
    noise: &AudioBuffer,
    spec: &MixSpec,
) -> Result<MixedComponents> {
    if clean.sample_rate_hz != noise.sample_rate_hz {
        return Err(AudioError::SampleRateMismatch(
            clean.sample_rate_hz,
            noise.sample_rate_hz,
        ));
    }
    if !spec.snr_db.is_finite() {
        return Err(AudioError::InvalidMixSpec("snr_db must be finite".into()));
    }
    if noise.is_empty() || spec.noise_offset_samples >= noise.len() {
        return Err(AudioError::InvalidMixSpec(format!(
            "offset {} outside noise clip of {} samples",
            spec.noise_offset_samples,
            noise.len()
        )));
    }
    let clean_rms = rms(clean)?;
    if clean_rms == 0.0 {
        return Err(AudioError::ZeroEnergy("clean"));
    }
    let tiled = tile_noise(noise, spec.noise_offset_samples, clean.len());
    let noise_rms = rms_of(&tiled)?;
    if noise_rms == 0.0 {
        return Err(AudioError::ZeroEnergy("noise"));
    }
    let gain = snr_gain(clean_rms, noise_rms, spec.snr_db);
    let mut clean_part = clean.samples.clone();
    let mut noise_part: Vec<f64> = tiled.into_iter().map(|s| s * gain).collect();
    let peak = clean_part
        .iter()
        .zip(&noise_part)
        .fold(0.0f64, |m, (c, n)| m.max((c + n).abs()));
    let mut peak_scale = 1.0;
    if peak > 1.0 {
        peak_scale = MAX_PEAK / peak;
        clean_part.iter_mut().for_each(|s| *s *= peak_scale);
        noise_part.iter_mut().for_each(|s| *s *= peak_scale);
    }
    Ok(MixedComponents {
        clean: AudioBuffer {
            samples: clean_part,
            sample_rate_hz: clean.sample_rate_hz,
        },
        noise: AudioBuffer {
            samples: noise_part,
            sample_rate_hz: clean.sample_rate_hz,
        },
        noise_gain: gain,
        peak_scale,
    })
}

/// Overlays `noise` on `clean` at exactly `spec.snr_db`.
pub fn mix_at_snr(clean: &AudioBuffer, noise: &AudioBuffer, spec: &MixSpec) -> Result<AudioBuffer> {
    Ok(mix_components(clean, noise, spec)?.mixture())
}

// ---------------------------------------------------------------------------
// Speed perturbation

/// Linear-interpolation resampling that plays the signal `rate` times faster.
pub fn resample_linear(buf: &AudioBuffer, rate: f64) -> AudioBuffer {
    let n_in = buf.len();
    let n_out = ((n_in as f64) / rate).round().max(1.0) as usize;
    let last = n_in.saturating_sub(1);
    let samples = (0..n_out)
        .map(|j| {
            let x = j as f64 * rate;
            let i = x.floor() as usize;
            if i >= last {
                return buf.samples[last];
            }
            let frac = x - i as f64;
            buf.samples[i] * (1.0 - frac) + buf.samples[i + 1] * frac
        })
        .collect();
    AudioBuffer {
        samples,
        sample_rate_hz: buf.sample_rate_hz,
    }
}

pub fn speed_perturb(buf: &AudioBuffer, factor_percent: u32) -> Result<AudioBuffer> {
    if !SPEED_FACTORS.contains(&factor_percent) {
        return Err(AudioError::InvalidSpeedFactor(factor_percent));
    }
    if buf.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    if factor_percent == 100 {
        return Ok(buf.clone());
    }
    Ok(resample_linear(buf, factor_percent as f64 / 100.0))
}

// ---------------------------------------------------------------------------
// Log-mel front end

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            win_ms: 25.0,
            hop_ms: 10.0,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn win_samples(&self, sample_rate_hz: u32) -> usize {
        (self.win_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        (self.hop_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        let bad = |m: &str| Err(AudioError::InvalidMelConfig(m.to_string()));
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1");
        }
        if !(self.win_ms > 0.0 && self.hop_ms > 0.0) {
            return bad("window and hop must be positive");
        }
        if self.hop_ms > self.win_ms {
            return bad("hop_ms must not exceed win_ms");
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return bad("need 0 <= fmin < fmax <= sample_rate/2");
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        if self.win_samples(sample_rate_hz) == 0 || self.hop_samples(sample_rate_hz) == 0 {
            return bad("window or hop rounds to zero samples");
        }
        Ok(())
    }

    /// Number of frames for a buffer of `len` samples, if at least one fits.
    pub fn n_frames(&self, len: usize, sample_rate_hz: u32) -> Option<usize> {
        let win = self.win_samples(sample_rate_hz);
        let hop = self.hop_samples(sample_rate_hz);
        (len >= win).then(|| (len - win) / hop + 1)
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-mel filterbank, `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(cfg: &MelConfig, n_fft: usize, sample_rate_hz: u32) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin_hz);
    let mel_hi = hz_to_mel(cfg.fmax_hz);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate_hz as f64 / n_fft as f64;
    let mut fb = Array2::zeros((cfg.n_mels, n_bins));
    for m in 0..cfg.n_mels {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let up = (f - lo) / (centre - lo);
            let down = (hi - f) / (hi - centre);
            let w = up.min(down);
            if w > 0.0 {
                fb[[m, k]] = w;
            }
        }
    }
    fb
}

/// Precomputed log-mel extractor for one configuration and sample rate.
pub struct LogMel {
    cfg: MelConfig,
    sample_rate_hz: u32,
    win: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<f64>,
    filters: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMel")
            .field("cfg", &self.cfg)
            .field("sample_rate_hz", &self.sample_rate_hz)
            .finish()
    }
}

impl LogMel {
    pub fn new(cfg: &MelConfig, sample_rate_hz: u32) -> Result<Self> {
        cfg.validate(sample_rate_hz)?;
        let win = cfg.win_samples(sample_rate_hz);
        let hop = cfg.hop_samples(sample_rate_hz);
        let n_fft = win.next_power_of_two();
        // periodic Hann
        let window = (0..win)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
            .collect();
        let filters = mel_filterbank(cfg, n_fft, sample_rate_hz);
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate_hz,
            win,
            hop,
            n_fft,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn compute(&self, buf: &AudioBuffer) -> Result<FeatureMatrix> {
        if buf.sample_rate_hz != self.sample_rate_hz {
            return Err(AudioError::SampleRateMismatch(
                buf.sample_rate_hz,
                self.sample_rate_hz,
            ));
        }
        let n_frames = self
            .cfg
            .n_frames(buf.len(), self.sample_rate_hz)
            .ok_or(AudioError::TooShort {
                len: buf.len(),
                win: self.win,
            })?;
        let n_bins = self.n_fft / 2 + 1;
        let mut out = Array2::zeros((n_frames, self.cfg.n_mels));
        let mut scratch = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut power = vec![0.0; n_bins];
        for t in 0..n_frames {
            let start = t * self.hop;
            for (i, slot) in scratch.iter_mut().enumerate() {
                *slot = if i < self.win {
                    Complex::new(buf.samples[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut scratch);
            for (p, c) in power.iter_mut().zip(&scratch) {
                *p = c.norm_sqr();
            }
            for m in 0..self.cfg.n_mels {
                let energy: f64 = self
                    .filters
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                out[[t, m]] = energy.max(self.cfg.log_floor).ln();
            }
        }
        Ok(out)
    }
}

pub fn log_mel(buf: &AudioBuffer, cfg: &MelConfig) -> Result<FeatureMatrix> {
    LogMel::new(cfg, buf.sample_rate_hz)?.compute(buf)
}
