//! Joint multitask speech recognition and emotion recognition at desk scale.
//!
//! The crate is split along the processing chain: [`audio`] holds the signal
//! primitives, [`corpus`] the manifests, fold plans and noisy-set
//! construction, [`model`] the three architectures (ASR baseline, SER
//! baseline, joint), [`training`] the losses and optimization loop, and
//! [`eval`] the pooled scoring and report generation.

pub mod audio;
pub mod corpus;
pub mod emotion;
pub mod eval;
pub mod features;
pub mod model;
pub mod training;

pub use emotion::Emotion;

/// Time × dimension real matrix (log-mel frames, encoder outputs, logits).
pub type FeatureMatrix = ndarray::Array2<f64>;
