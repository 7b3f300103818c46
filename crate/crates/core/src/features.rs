//! Front-end seam between waveforms and the acoustic encoder.

use crate::audio::{AudioBuffer, AudioError, LogMel, MelConfig};
use crate::FeatureMatrix;

/// Anything that turns a waveform into a `T × dim` feature matrix.
pub trait FrontEnd: Send + Sync {
    fn dim(&self) -> usize;
    fn features(&self, buf: &AudioBuffer) -> Result<FeatureMatrix, AudioError>;
}

/// Log-mel filterbank followed by per-utterance mean/variance normalization
/// of every mel channel.
#[derive(Debug)]
pub struct LogMelFrontEnd {
    mel: LogMel,
}

impl LogMelFrontEnd {
    pub fn new(cfg: &MelConfig, sample_rate_hz: u32) -> Result<Self, AudioError> {
        Ok(Self {
            mel: LogMel::new(cfg, sample_rate_hz)?,
        })
    }
}

/// Standardizes each column; near-constant columns are only centred.
pub fn normalize_columns(x: &mut FeatureMatrix) {
    let rows = x.nrows() as f64;
    for mut col in x.columns_mut() {
        let mean = col.sum() / rows;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows;
        let scale = if var > 1e-8 { 1.0 / var.sqrt() } else { 1.0 };
        col.mapv_inplace(|v| (v - mean) * scale);
    }
}

impl FrontEnd for LogMelFrontEnd {
    fn dim(&self) -> usize {
        self.mel.config().n_mels
    }

    fn features(&self, buf: &AudioBuffer) -> Result<FeatureMatrix, AudioError> {
        let mut x = self.mel.compute(buf)?;
        normalize_columns(&mut x);
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn columns_are_standardized() {
        let mut x = array![[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]];
        normalize_columns(&mut x);
        let c0: Vec<f64> = x.column(0).to_vec();
        let s = (8.0f64 / 3.0).sqrt();
        assert!((c0[0] + 2.0 / s).abs() < 1e-12 && c0[1].abs() < 1e-12);
        assert!(x.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_mel_front_end_shape() {
        let fe = LogMelFrontEnd::new(&MelConfig::default(), 16000).unwrap();
        let buf = AudioBuffer::new((0..8000).map(|i| ((i as f64) * 0.05).sin() * 0.1).collect(), 16000).unwrap();
        let x = fe.features(&buf).unwrap();
        assert_eq!(x.dim(), (48, 80));
        assert!(x.iter().all(|v| v.is_finite()));
    }
}
