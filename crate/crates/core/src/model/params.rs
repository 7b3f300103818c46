use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::graph::Tensor;
use super::{Architecture, ModelConfig, ModelError};
use crate::emotion::Emotion;

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Xavier,
    Zero,
    Normal(f64),
}

fn gru_shapes(out: &mut Vec<(String, (usize, usize), Init)>, prefix: &str, input: usize, hidden: usize) {
    for dir in ["fwd", "bwd"] {
        out.push((format!("{prefix}.{dir}.w_ih"), (input, 3 * hidden), Init::Xavier));
        out.push((format!("{prefix}.{dir}.w_hh"), (hidden, 3 * hidden), Init::Xavier));
        out.push((format!("{prefix}.{dir}.b_ih"), (1, 3 * hidden), Init::Zero));
        out.push((format!("{prefix}.{dir}.b_hh"), (1, 3 * hidden), Init::Zero));
    }
}

fn linear_shapes(out: &mut Vec<(String, (usize, usize), Init)>, prefix: &str, input: usize, output: usize) {
    out.push((format!("{prefix}.w"), (input, output), Init::Xavier));
    out.push((format!("{prefix}.b"), (1, output), Init::Zero));
}

/// Every tensor an architecture owns, with its shape.
fn layout(arch: Architecture, cfg: &ModelConfig, vocab_len: usize) -> Vec<(String, (usize, usize), Init)> {
    let mut out = Vec::new();
    let da = cfg.acoustic_dim();
    let dl = cfg.linguistic_dim();
    let n_classes = Emotion::COUNT;

    linear_shapes(&mut out, "encoder.conv1", 3 * cfg.n_feats, cfg.conv_channels);
    linear_shapes(&mut out, "encoder.conv2", 3 * cfg.conv_channels, cfg.conv_channels);
    for layer in 0..cfg.enc_layers {
        let input = if layer == 0 { cfg.conv_channels } else { da };
        gru_shapes(&mut out, &format!("encoder.rnn{layer}"), input, cfg.enc_hidden);
    }
    if arch.has_ctc() {
        linear_shapes(&mut out, "ctc_head", da, vocab_len);
    }
    match arch {
        Architecture::AsrBaseline => {}
        Architecture::SerBaseline => {
            linear_shapes(&mut out, "ser_head.fc1", da, cfg.ser_hidden);
            linear_shapes(&mut out, "ser_head.fc2", cfg.ser_hidden, n_classes);
        }
        Architecture::Joint => {
            out.push(("text.embedding".into(), (vocab_len, cfg.text_embed), Init::Normal(0.3)));
            out.push(("text.default".into(), (1, dl), Init::Normal(0.1)));
            gru_shapes(&mut out, "text.rnn", cfg.text_embed, cfg.text_hidden);
            linear_shapes(&mut out, "fusion.acoustic.fc1", da, da);
            linear_shapes(&mut out, "fusion.acoustic.fc2", da, da);
            linear_shapes(&mut out, "fusion.linguistic.fc1", dl, dl);
            linear_shapes(&mut out, "fusion.linguistic.fc2", dl, dl);
            linear_shapes(&mut out, "emotion_head", da + dl, n_classes);
        }
    }
    out
}

/// Per-tensor seed, so a tensor's initial value depends only on the global
/// seed and its name (shared submodules start identical across architectures).
fn tensor_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl ParamStore {
    pub fn init(arch: Architecture, cfg: &ModelConfig, vocab_len: usize, seed: u64) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, (rows, cols), init) in layout(arch, cfg, vocab_len) {
            let mut rng = ChaCha8Rng::seed_from_u64(tensor_seed(seed, &name));
            let t = match init {
                Init::Zero => Array2::zeros((rows, cols)),
                Init::Xavier => {
                    let bound = (6.0 / (rows + cols) as f64).sqrt();
                    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound))
                }
                Init::Normal(std) => {
                    Array2::from_shape_simple_fn((rows, cols), || std * standard_normal(&mut rng))
                }
            };
            tensors.insert(name, t);
        }
        Self { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    /// Checks that this store has exactly the layout `arch`/`cfg` expects.
    pub fn validate(&self, arch: Architecture, cfg: &ModelConfig, vocab_len: usize) -> Result<(), ModelError> {
        let expected = layout(arch, cfg, vocab_len);
        for (name, shape, _) in &expected {
            let t = self
                .tensors
                .get(name)
                .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.dim() != *shape {
                return Err(ModelError::Shape {
                    name: name.clone(),
                    expected: *shape,
                    got: t.dim(),
                });
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Checkpoint(format!("non-finite values in {name}")));
            }
        }
        if self.tensors.len() != expected.len() {
            let known: std::collections::BTreeSet<_> = expected.iter().map(|e| e.0.as_str()).collect();
            let extra = self.tensors.keys().find(|k| !known.contains(k.as_str())).cloned();
            return Err(ModelError::Checkpoint(format!("unexpected parameter {extra:?}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Copies every tensor of `other` whose name and shape also exist here
    /// (e.g. a baseline's encoder into a joint model). Returns the names copied.
    pub fn load_compatible(&mut self, other: &ParamStore) -> Vec<String> {
        let mut copied = Vec::new();
        for (name, t) in &other.tensors {
            if let Some(mine) = self.tensors.get_mut(name) {
                if mine.dim() == t.dim() {
                    mine.assign(t);
                    copied.push(name.clone());
                }
            }
        }
        copied
    }

    /// Zeroes every tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in &mut self.tensors {
            if name.starts_with(prefix) {
                t.fill(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_joint_dims() {
        let cfg = ModelConfig::default();
        let p = ParamStore::init(Architecture::Joint, &cfg, 29, 1);
        assert_eq!(p.get("ctc_head.w").unwrap().dim(), (128, 29));
        assert_eq!(p.get("text.embedding").unwrap().dim(), (29, 32));
        assert_eq!(p.get("fusion.acoustic.fc1.w").unwrap().dim(), (128, 128));
        assert_eq!(p.get("fusion.linguistic.fc2.w").unwrap().dim(), (64, 64));
        assert_eq!(p.get("emotion_head.w").unwrap().dim(), (192, 4));
        assert_eq!(p.get("encoder.rnn1.bwd.w_ih").unwrap().dim(), (128, 192));
        p.validate(Architecture::Joint, &cfg, 29).unwrap();
        assert!(p.validate(Architecture::AsrBaseline, &cfg, 29).is_err());
    }

    #[test]
    fn shared_submodules_initialize_identically() {
        let cfg = ModelConfig::tiny(6);
        let joint = ParamStore::init(Architecture::Joint, &cfg, 29, 9);
        let asr = ParamStore::init(Architecture::AsrBaseline, &cfg, 29, 9);
        for (name, t) in asr.iter() {
            assert_eq!(joint.get(name).unwrap(), t, "{name}");
        }
        let other = ParamStore::init(Architecture::AsrBaseline, &cfg, 29, 10);
        assert_ne!(other.get("encoder.conv1.w").unwrap(), asr.get("encoder.conv1.w").unwrap());
    }

    #[test]
    fn load_compatible_copies_shared_names_only() {
        let cfg = ModelConfig::tiny(6);
        let mut joint = ParamStore::init(Architecture::Joint, &cfg, 29, 1);
        let ser = ParamStore::init(Architecture::SerBaseline, &cfg, 29, 2);
        let copied = joint.load_compatible(&ser);
        assert!(copied.iter().all(|n| n.starts_with("encoder.")));
        assert_eq!(joint.get("encoder.conv1.w").unwrap(), ser.get("encoder.conv1.w").unwrap());
        assert!(joint.get("ser_head.fc1.w").is_err());
    }
}
