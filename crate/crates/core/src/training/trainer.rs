use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{cross_entropy, JointLossConfig, LossBreakdown};
use super::optim::{clip_global_norm, Adam, AdamConfig};
use super::TrainError;
use crate::audio::{speed_perturb, AudioBuffer, SPEED_FACTORS};
use crate::emotion::Emotion;
use crate::features::FrontEnd;
use crate::model::TranscriptChoice;
use crate::model::ctc::ctc_forward_backward;
use crate::model::graph::{Tensor, Var};
use crate::model::{Architecture, LinguisticSource, Model, ModelConfig, Session};
use crate::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: AdamConfig,
    pub grad_clip_norm: f64,
    /// Resample each utterance at a speed drawn from {95, 100, 105} %.
    pub augment_speeds: bool,
    pub architecture: Architecture,
    pub linguistic_source: LinguisticSource,
    pub loss: JointLossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 300,
            batch_size: 1,
            learning_rate: 1e-3,
            optimizer: AdamConfig::default(),
            grad_clip_norm: 5.0,
            augment_speeds: true,
            architecture: Architecture::Joint,
            linguistic_source: LinguisticSource::Decoded,
            loss: JointLossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad(format!("grad_clip_norm must be positive, got {}", self.grad_clip_norm));
        }
        self.loss.validate()
    }
}

/// One labelled utterance.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub speaker: String,
    pub audio: AudioBuffer,
    pub transcript: String,
    pub emotion: Emotion,
}

/// Loss of one utterance, recorded on `s`. Returns the scalar root and the
/// breakdown. Baselines are the two ends of the joint objective: the ASR
/// baseline reports l_joint = l_asr, the SER baseline l_joint = l_ser.
pub fn utterance_loss(
    s: &mut Session<'_>,
    features: &FeatureMatrix,
    transcript: &str,
    emotion: Emotion,
    choice: TranscriptChoice<'_>,
    loss_cfg: &JointLossConfig,
) -> Result<(Var, LossBreakdown), crate::model::ModelError> {
    let arch = s.model().arch;
    let tokens = if arch.has_ctc() {
        s.model().vocab.encode(transcript)?
    } else {
        Vec::new()
    };
    let ctc_node = |s: &mut Session<'_>, log_probs: Var| {
        let (loss, grad) = ctc_forward_backward(s.graph.value(log_probs).view(), &tokens)?;
        Ok::<_, crate::model::ModelError>((s.graph.precomputed_loss(log_probs, loss, grad), loss))
    };
    let ce_node = |s: &mut Session<'_>, logits: Var| {
        let row: Vec<f64> = s.graph.value(logits).iter().copied().collect();
        let (loss, grad) = cross_entropy(&row, emotion.index());
        let grad = Tensor::from_shape_vec((1, grad.len()), grad).expect("row shape");
        (s.graph.precomputed_loss(logits, loss, grad), loss)
    };
    match arch {
        Architecture::AsrBaseline => {
            let enc = s.encode(features)?;
            let logits = s.ctc_logits(enc)?;
            let log_probs = s.graph.log_softmax(logits);
            let (root, l_asr) = ctc_node(s, log_probs)?;
            Ok((
                root,
                LossBreakdown {
                    l_ser: 0.0,
                    l_asr,
                    l_joint: l_asr,
                },
            ))
        }
        Architecture::SerBaseline => {
            let enc = s.encode(features)?;
            let pooled = s.graph.mean_rows(enc);
            let logits = s.ser_head(pooled)?;
            let (root, l_ser) = ce_node(s, logits);
            Ok((
                root,
                LossBreakdown {
                    l_ser,
                    l_asr: 0.0,
                    l_joint: l_ser,
                },
            ))
        }
        Architecture::Joint => {
            let vars = s.joint(features, choice)?;
            let (ctc, l_asr) = ctc_node(s, vars.log_probs)?;
            let (ce, l_ser) = ce_node(s, vars.emotion);
            let alpha = loss_cfg.alpha;
            let root = s.graph.weighted_sum(&[(ce, alpha), (ctc, 1.0 - alpha)]);
            let l_joint = alpha * l_ser + (1.0 - alpha) * l_asr;
            Ok((root, LossBreakdown { l_ser, l_asr, l_joint }))
        }
    }
}

fn add_scaled(acc: &mut BTreeMap<String, Tensor>, grads: BTreeMap<String, Tensor>, w: f64) {
    for (name, g) in grads {
        match acc.get_mut(&name) {
            Some(a) => a.scaled_add(w, &g),
            None => {
                acc.insert(name, g * w);
            }
        }
    }
}

/// Per-epoch means over utterances, written as one JSON line per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epoch: usize,
    pub mean_l_ser: f64,
    pub mean_l_asr: f64,
    pub mean_l_joint: f64,
    pub wall_s: f64,
}

/// Owns a model and its optimizer state for one training run.
pub struct Trainer {
    pub model: Model,
    cfg: TrainConfig,
    frontend: Arc<dyn FrontEnd>,
    optimizer: Adam,
    rng: ChaCha8Rng,
    cache: HashMap<(String, u32), FeatureMatrix>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model_cfg: ModelConfig, frontend: Arc<dyn FrontEnd>) -> Result<Self, TrainError> {
        cfg.validate()?;
        if model_cfg.n_feats != frontend.dim() {
            return Err(TrainError::InvalidConfig(format!(
                "model expects {} features, front end produces {}",
                model_cfg.n_feats,
                frontend.dim()
            )));
        }
        let model = Model::new(cfg.architecture, model_cfg, cfg.seed);
        Ok(Self::with_model(model, cfg, frontend))
    }

    pub fn with_model(model: Model, cfg: TrainConfig, frontend: Arc<dyn FrontEnd>) -> Self {
        let optimizer = Adam::new(cfg.learning_rate, cfg.optimizer);
        // separate stream from parameter init
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a_0000_0001);
        Self {
            model,
            cfg,
            frontend,
            optimizer,
            rng,
            cache: HashMap::new(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn features(&mut self, item: &TrainItem, factor: u32) -> Result<FeatureMatrix, TrainError> {
        let key = (item.id.clone(), factor);
        if let Some(f) = self.cache.get(&key) {
            return Ok(f.clone());
        }
        let audio = speed_perturb(&item.audio, factor).map_err(|e| TrainError::audio(&item.id, e))?;
        let feats = self
            .frontend
            .features(&audio)
            .map_err(|e| TrainError::audio(&item.id, e))?;
        self.cache.insert(key, feats.clone());
        Ok(feats)
    }

    /// One optimizer update on `batch`; losses are batch means.
    pub fn train_step(&mut self, batch: &[TrainItem]) -> Result<LossBreakdown, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyTrainSet);
        }
        let weight = 1.0 / batch.len() as f64;
        let mut grads = BTreeMap::new();
        let mut total = LossBreakdown {
            l_ser: 0.0,
            l_asr: 0.0,
            l_joint: 0.0,
        };
        for item in batch {
            let factor = if self.cfg.augment_speeds {
                SPEED_FACTORS[self.rng.gen_range(0..SPEED_FACTORS.len())]
            } else {
                100
            };
            let feats = self.features(item, factor)?;
            let choice = match self.cfg.linguistic_source {
                LinguisticSource::Decoded => TranscriptChoice::Decode,
                LinguisticSource::Reference => TranscriptChoice::Given(&item.transcript),
            };
            let mut s = Session::new(&self.model);
            let (root, b) = utterance_loss(&mut s, &feats, &item.transcript, item.emotion, choice, &self.cfg.loss)
                .map_err(|e| TrainError::model(&item.id, e))?;
            if !(b.l_joint.is_finite() && b.l_ser.is_finite() && b.l_asr.is_finite()) {
                return Err(TrainError::NonFiniteLoss {
                    id: item.id.clone(),
                    loss: b,
                });
            }
            add_scaled(&mut grads, s.param_grads(root), weight);
            total.l_ser += weight * b.l_ser;
            total.l_asr += weight * b.l_asr;
            total.l_joint += weight * b.l_joint;
        }
        clip_global_norm(&mut grads, self.cfg.grad_clip_norm);
        let model = &mut self.model;
        let (freeze_front, freeze_text) = (model.config.freeze_frontend, model.config.freeze_text_encoder);
        self.optimizer.step(&mut model.params, &grads, |name| {
            !(freeze_front && name.starts_with("encoder.conv") || freeze_text && name.starts_with("text."))
        });
        Ok(total)
    }

    /// One pass over `items` in a seeded shuffled order.
    pub fn run_epoch(&mut self, epoch: usize, items: &[TrainItem]) -> Result<TrainStats, TrainError> {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sums = [0.0; 3];
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<TrainItem> = chunk.iter().map(|&i| items[i].clone()).collect();
            let b = self.train_step(&batch)?;
            let n = batch.len() as f64;
            sums[0] += n * b.l_ser;
            sums[1] += n * b.l_asr;
            sums[2] += n * b.l_joint;
        }
        let n = items.len() as f64;
        Ok(TrainStats {
            epoch,
            mean_l_ser: sums[0] / n,
            mean_l_asr: sums[1] / n,
            mean_l_joint: sums[2] / n,
            wall_s: start.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: Model,
    /// Parameters from the epoch with the lowest mean training loss.
    pub best: Model,
    pub best_epoch: Option<usize>,
    pub stats: Vec<TrainStats>,
}

/// Trains a fresh model for `cfg.epochs` epochs. `on_epoch` sees every
/// epoch's stats as they are produced.
pub fn fit(
    items: &[TrainItem],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    frontend: Arc<dyn FrontEnd>,
    mut on_epoch: impl FnMut(&TrainStats, &Model),
) -> Result<FitOutcome, TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let mut trainer = Trainer::new(cfg.clone(), model_cfg.clone(), frontend)?;
    let mut best = trainer.model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = None;
    let mut stats = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let s = trainer.run_epoch(epoch, items)?;
        if s.mean_l_joint < best_loss {
            best_loss = s.mean_l_joint;
            best = trainer.model.clone();
            best_epoch = Some(epoch);
        }
        on_epoch(&s, &trainer.model);
        stats.push(s);
    }
    Ok(FitOutcome {
        model: trainer.model,
        best,
        best_epoch,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::MelConfig;
    use crate::features::LogMelFrontEnd;
    use crate::training::joint_loss;

    fn frontend() -> Arc<dyn FrontEnd> {
        let mel = MelConfig {
            n_mels: 8,
            ..MelConfig::default()
        };
        Arc::new(LogMelFrontEnd::new(&mel, 16000).unwrap())
    }

    fn item(id: &str, freq: f64, transcript: &str, emotion: Emotion) -> TrainItem {
        let samples = (0..4800)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
            .collect();
        TrainItem {
            id: id.into(),
            speaker: "s".into(),
            audio: AudioBuffer::new(samples, 16000).unwrap(),
            transcript: transcript.into(),
            emotion,
        }
    }

    fn cfg(arch: Architecture) -> TrainConfig {
        TrainConfig {
            architecture: arch,
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        }
    }

    fn items() -> Vec<TrainItem> {
        vec![
            item("a", 300.0, "hi", Emotion::Happy),
            item("b", 900.0, "no", Emotion::Sad),
            item("c", 1500.0, "ok", Emotion::Neutral),
        ]
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut c = cfg(Architecture::Joint);
        c.learning_rate = 0.0;
        let mut t = Trainer::new(c, ModelConfig::tiny(8), frontend()).unwrap();
        let before = t.model.params.clone();
        let b = t.train_step(&items()).unwrap();
        assert!(b.l_joint > 0.0);
        assert_eq!(t.model.params, before);
    }

    #[test]
    fn joint_breakdown_obeys_eq1() {
        let mut t = Trainer::new(cfg(Architecture::Joint), ModelConfig::tiny(8), frontend()).unwrap();
        let b = t.train_step(&items()[..1]).unwrap();
        assert_eq!(b.l_joint, 0.1 * b.l_ser + 0.9 * b.l_asr);
        assert_eq!(b.l_joint, joint_loss(b.l_ser, b.l_asr, &JointLossConfig::default()).unwrap());
    }

    #[test]
    fn fit_is_seed_deterministic() {
        let run = || {
            fit(&items(), &cfg(Architecture::Joint), &ModelConfig::tiny(8), frontend(), |_, _| {})
                .unwrap()
        };
        let a = run();
        let b = run();
        let strip = |s: &[TrainStats]| s.iter().map(|x| (x.mean_l_ser, x.mean_l_asr, x.mean_l_joint)).collect::<Vec<_>>();
        assert_eq!(strip(&a.stats), strip(&b.stats));
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.stats.len(), 2);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let mut c = cfg(Architecture::AsrBaseline);
        c.epochs = 0;
        let out = fit(&items(), &c, &ModelConfig::tiny(8), frontend(), |_, _| {}).unwrap();
        assert!(out.stats.is_empty());
        assert_eq!(out.model, Model::new(Architecture::AsrBaseline, ModelConfig::tiny(8), 0));
        assert!(matches!(
            fit(&[], &c, &ModelConfig::tiny(8), frontend(), |_, _| {}),
            Err(TrainError::EmptyTrainSet)
        ));
    }

    #[test]
    fn errors_name_the_utterance() {
        let mut t = Trainer::new(cfg(Architecture::AsrBaseline), ModelConfig::tiny(8), frontend()).unwrap();
        // 300 ms -> 28 frames -> 7 encoder frames; 12 characters cannot fit
        let bad = item("too-long", 440.0, "abcdefghijkl", Emotion::Angry);
        let err = t.train_step(&[bad]).unwrap_err();
        assert!(err.to_string().contains("too-long"), "{err}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = cfg(Architecture::Joint);
        c.loss.alpha = 2.0;
        assert!(Trainer::new(c, ModelConfig::tiny(8), frontend()).is_err());
        let mut c = cfg(Architecture::Joint);
        c.batch_size = 0;
        assert!(Trainer::new(c, ModelConfig::tiny(8), frontend()).is_err());
        assert!(Trainer::new(cfg(Architecture::Joint), ModelConfig::tiny(9), frontend()).is_err());
    }
}
