use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};

use super::ctc::{argmax, collapse, LogitLattice};
use super::graph::{Graph, Tensor, Var};
use super::{Architecture, LinguisticSource, Mode, Model, ModelError, Result};
use crate::emotion::Emotion;
use crate::FeatureMatrix;

/// Unnormalized scores ordered (neutral, happy, sad, angry).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmotionLogits(pub [f64; 4]);

impl EmotionLogits {
    fn from_row(t: &Tensor) -> Self {
        let mut out = [0.0; 4];
        for (o, v) in out.iter_mut().zip(t.iter()) {
            *o = *v;
        }
        Self(out)
    }

    pub fn predicted(&self) -> Emotion {
        Emotion::from_index(argmax(self.0)).expect("four classes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutput {
    pub lattice: LogitLattice,
    pub transcript: String,
    pub emotion: EmotionLogits,
}

/// Which transcript feeds the text encoder.
#[derive(Debug, Clone, Copy)]
pub enum TranscriptChoice<'a> {
    /// Greedy decode of this forward pass's own CTC output (no gradient
    /// flows through the decode).
    Decode,
    Given(&'a str),
}

/// Graph nodes produced by one joint forward pass.
#[derive(Debug, Clone)]
pub struct JointVars {
    pub logits: Var,
    pub log_probs: Var,
    pub emotion: Var,
    pub transcript: String,
}

/// A forward pass in progress: a graph plus the model parameters bound into it.
pub struct Session<'m> {
    pub graph: Graph,
    model: &'m Model,
    bound: BTreeMap<String, Var>,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model) -> Self {
        Self {
            graph: Graph::new(),
            model,
            bound: BTreeMap::new(),
        }
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let value = self.model.params.get(name)?.clone();
        let v = self.graph.leaf(value);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.graph.leaf(t)
    }

    /// Backpropagates from `root` and returns the gradient of every parameter
    /// the pass touched, by name.
    pub fn param_grads(&self, root: Var) -> BTreeMap<String, Tensor> {
        let mut grads = self.graph.backward(root);
        self.bound
            .iter()
            .map(|(name, v)| {
                let g = grads
                    .take(*v)
                    .unwrap_or_else(|| Array2::zeros(self.graph.value(*v).dim()));
                (name.clone(), g)
            })
            .collect()
    }

    fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        let h = self.graph.matmul(x, w);
        Ok(self.graph.add_row(h, b))
    }

    /// fc2(tanh(fc1(x)))
    fn mlp(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let h = self.linear(x, &format!("{prefix}.fc1"))?;
        let h = self.graph.tanh(h);
        self.linear(h, &format!("{prefix}.fc2"))
    }

    /// Kernel 3, stride 2, padding 1: output length ceil(T/2).
    fn conv_subsample(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let patches = self.graph.im2col(x, 3, 2, 1);
        let h = self.linear(patches, prefix)?;
        Ok(self.graph.tanh(h))
    }

    fn gru_direction(&mut self, xp: Var, prefix: &str, reverse: bool) -> Result<Var> {
        let w_hh = self.param(&format!("{prefix}.w_hh"))?;
        let b_hh = self.param(&format!("{prefix}.b_hh"))?;
        let hidden = self.graph.value(w_hh).nrows();
        let steps = self.graph.value(xp).nrows();
        let mut h = self.graph.leaf(Array2::zeros((1, hidden)));
        let mut outs = vec![h; steps];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        };
        for t in order {
            let g = &mut self.graph;
            let xt = g.row_slice(xp, t, 1);
            let hp = g.matmul(h, w_hh);
            let hp = g.add_row(hp, b_hh);
            let x_rz = g.col_slice(xt, 0, 2 * hidden);
            let h_rz = g.col_slice(hp, 0, 2 * hidden);
            let rz = g.add(x_rz, h_rz);
            let rz = g.sigmoid(rz);
            let r = g.col_slice(rz, 0, hidden);
            let z = g.col_slice(rz, hidden, hidden);
            let x_n = g.col_slice(xt, 2 * hidden, hidden);
            let h_n = g.col_slice(hp, 2 * hidden, hidden);
            let gated = g.mul(r, h_n);
            let n = g.add(x_n, gated);
            let n = g.tanh(n);
            let keep = g.one_minus(z);
            let new_part = g.mul(keep, n);
            let old_part = g.mul(z, h);
            h = g.add(new_part, old_part);
            outs[t] = h;
        }
        Ok(self.graph.stack_rows(&outs))
    }

    /// Bidirectional GRU; output columns are [forward | backward].
    fn bigru(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let mut dirs = Vec::with_capacity(2);
        for (dir, reverse) in [("fwd", false), ("bwd", true)] {
            let p = format!("{prefix}.{dir}");
            let w_ih = self.param(&format!("{p}.w_ih"))?;
            let b_ih = self.param(&format!("{p}.b_ih"))?;
            let xp = self.graph.matmul(x, w_ih);
            let xp = self.graph.add_row(xp, b_ih);
            dirs.push(self.gru_direction(xp, &p, reverse)?);
        }
        Ok(self.graph.concat_cols(&dirs))
    }

    /// T × n_feats → ceil(T/4) × acoustic_dim.
    pub fn encode(&mut self, features: &FeatureMatrix) -> Result<Var> {
        let (frames, dim) = features.dim();
        if frames < 4 {
            return Err(ModelError::TooFewFrames { frames });
        }
        if dim != self.model.config.n_feats {
            return Err(ModelError::FeatureDim {
                got: dim,
                expected: self.model.config.n_feats,
            });
        }
        let x = self.input(features.clone());
        let h = self.conv_subsample(x, "encoder.conv1")?;
        let mut h = self.conv_subsample(h, "encoder.conv2")?;
        for layer in 0..self.model.config.enc_layers {
            h = self.bigru(h, &format!("encoder.rnn{layer}"))?;
        }
        Ok(h)
    }

    pub fn ctc_logits(&mut self, enc: Var) -> Result<Var> {
        if !self.model.arch.has_ctc() {
            return Err(ModelError::MissingBranch {
                arch: self.model.arch,
                what: "CTC head",
            });
        }
        self.linear(enc, "ctc_head")
    }

    /// Character embeddings → BiGRU → mean over characters; the empty
    /// transcript maps to the learned `text.default` vector.
    pub fn text(&mut self, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return self.param("text.default");
        }
        let table = self.param("text.embedding")?;
        let emb = self.graph.gather(table, tokens);
        let h = self.bigru(emb, "text.rnn")?;
        Ok(self.graph.mean_rows(h))
    }

    /// concat(a + MLP_a(a), l + MLP_l(l))
    pub fn fusion(&mut self, acoustic: Var, linguistic: Var) -> Result<Var> {
        let a = self.mlp(acoustic, "fusion.acoustic")?;
        let a = self.graph.add(acoustic, a);
        let l = self.mlp(linguistic, "fusion.linguistic")?;
        let l = self.graph.add(linguistic, l);
        Ok(self.graph.concat_cols(&[a, l]))
    }

    pub fn emotion_head(&mut self, fused: Var) -> Result<Var> {
        self.linear(fused, "emotion_head")
    }

    pub fn ser_head(&mut self, pooled: Var) -> Result<Var> {
        self.mlp(pooled, "ser_head")
    }

    pub fn joint(&mut self, features: &FeatureMatrix, choice: TranscriptChoice<'_>) -> Result<JointVars> {
        if self.model.arch != Architecture::Joint {
            return Err(ModelError::MissingBranch {
                arch: self.model.arch,
                what: "linguistic branch",
            });
        }
        let enc = self.encode(features)?;
        let logits = self.ctc_logits(enc)?;
        let log_probs = self.graph.log_softmax(logits);
        let transcript = match choice {
            TranscriptChoice::Decode => {
                let path: Vec<usize> = self
                    .graph
                    .value(log_probs)
                    .rows()
                    .into_iter()
                    .map(|r| argmax(r.iter().copied()))
                    .collect();
                self.model.vocab.decode(&collapse(&path))
            }
            TranscriptChoice::Given(s) => s.to_string(),
        };
        let tokens = self.model.vocab.encode(&transcript)?;
        let linguistic = self.text(&tokens)?;
        let pooled = self.graph.mean_rows(enc);
        let fused = self.fusion(pooled, linguistic)?;
        let emotion = self.emotion_head(fused)?;
        Ok(JointVars {
            logits,
            log_probs,
            emotion,
            transcript,
        })
    }

    pub fn lattice(&self, logits: Var) -> LogitLattice {
        LogitLattice::from_logits(self.graph.value(logits).clone())
    }
}

fn row(v: &Array1<f64>) -> Tensor {
    v.clone().insert_axis(Axis(0))
}

pub fn encoder_forward(features: &FeatureMatrix, model: &Model) -> Result<FeatureMatrix> {
    let mut s = Session::new(model);
    let enc = s.encode(features)?;
    Ok(s.graph.value(enc).clone())
}

/// Projects encoder frames onto the vocabulary and normalizes each frame.
pub fn ctc_log_probs(enc: &FeatureMatrix, model: &Model) -> Result<LogitLattice> {
    let expected = model.config.acoustic_dim();
    if enc.ncols() != expected {
        return Err(ModelError::FeatureDim {
            got: enc.ncols(),
            expected,
        });
    }
    let mut s = Session::new(model);
    let x = s.input(enc.clone());
    let logits = s.ctc_logits(x)?;
    Ok(s.lattice(logits))
}

pub fn mean_pool(enc: &FeatureMatrix) -> Result<Array1<f64>> {
    enc.mean_axis(Axis(0)).ok_or(ModelError::EmptySequence)
}

pub fn text_encode(transcript: &str, model: &Model) -> Result<Array1<f64>> {
    let tokens = model.vocab.encode(transcript)?;
    let mut s = Session::new(model);
    let v = s.text(&tokens)?;
    Ok(s.graph.value(v).row(0).to_owned())
}

pub fn fusion_forward(acoustic: &Array1<f64>, linguistic: &Array1<f64>, model: &Model) -> Result<Array1<f64>> {
    let mut s = Session::new(model);
    let a = s.input(row(acoustic));
    let l = s.input(row(linguistic));
    let f = s.fusion(a, l)?;
    Ok(s.graph.value(f).row(0).to_owned())
}

pub fn emotion_logits(fused: &Array1<f64>, model: &Model) -> Result<EmotionLogits> {
    let mut s = Session::new(model);
    let x = s.input(row(fused));
    let e = s.emotion_head(x)?;
    Ok(EmotionLogits::from_row(s.graph.value(e)))
}

/// Joint forward pass. In `Infer` mode, or when training with the decoded
/// source, the text encoder reads the greedy CTC transcript.
pub fn forward_joint(
    features: &FeatureMatrix,
    reference: Option<&str>,
    model: &Model,
    mode: Mode,
    source: LinguisticSource,
) -> Result<JointOutput> {
    let choice = match (mode, source) {
        (Mode::Train, LinguisticSource::Reference) => {
            TranscriptChoice::Given(reference.ok_or(ModelError::ReferenceRequired)?)
        }
        _ => TranscriptChoice::Decode,
    };
    let mut s = Session::new(model);
    let vars = s.joint(features, choice)?;
    Ok(JointOutput {
        lattice: s.lattice(vars.logits),
        emotion: EmotionLogits::from_row(s.graph.value(vars.emotion)),
        transcript: vars.transcript,
    })
}

pub fn forward_asr_baseline(features: &FeatureMatrix, model: &Model) -> Result<LogitLattice> {
    let mut s = Session::new(model);
    let enc = s.encode(features)?;
    let logits = s.ctc_logits(enc)?;
    Ok(s.lattice(logits))
}

pub fn forward_ser_baseline(features: &FeatureMatrix, model: &Model) -> Result<EmotionLogits> {
    if model.arch != Architecture::SerBaseline {
        return Err(ModelError::MissingBranch {
            arch: model.arch,
            what: "SER baseline head",
        });
    }
    let mut s = Session::new(model);
    let enc = s.encode(features)?;
    let pooled = s.graph.mean_rows(enc);
    let logits = s.ser_head(pooled)?;
    Ok(EmotionLogits::from_row(s.graph.value(logits)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn random_features(t: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((t, d), || rng.gen_range(-1.0..1.0))
    }

    fn small(arch: Architecture) -> Model {
        Model::new(arch, ModelConfig::tiny(5), 3)
    }

    fn zeroed(mut m: Model) -> Model {
        m.params.iter_mut().for_each(|(_, t)| t.fill(0.0));
        m
    }

    #[test]
    fn encoder_output_length_is_ceil_quarter() {
        let m = Model::new(Architecture::AsrBaseline, ModelConfig::default(), 1);
        let enc = encoder_forward(&random_features(98, 80, 1), &m).unwrap();
        assert_eq!(enc.dim(), (25, 128));
        let m = small(Architecture::AsrBaseline);
        for t in 4..13 {
            let enc = encoder_forward(&random_features(t, 5, 2), &m).unwrap();
            assert_eq!(enc.nrows(), t.div_ceil(4));
        }
        assert!(matches!(
            encoder_forward(&random_features(3, 5, 2), &m),
            Err(ModelError::TooFewFrames { frames: 3 })
        ));
        assert!(matches!(
            encoder_forward(&random_features(8, 4, 2), &m),
            Err(ModelError::FeatureDim { got: 4, expected: 5 })
        ));
    }

    #[test]
    fn zero_model_maps_zero_to_zero() {
        let m = zeroed(small(Architecture::Joint));
        let enc = encoder_forward(&Array2::zeros((9, 5)), &m).unwrap();
        assert!(enc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_is_deterministic() {
        let m = small(Architecture::Joint);
        let x = random_features(11, 5, 4);
        assert_eq!(encoder_forward(&x, &m).unwrap(), encoder_forward(&x, &m).unwrap());
        let again = Model::new(Architecture::Joint, ModelConfig::tiny(5), 3);
        assert_eq!(encoder_forward(&x, &m).unwrap(), encoder_forward(&x, &again).unwrap());
    }

    #[test]
    fn ctc_log_probs_normalize_and_are_shift_invariant() {
        let m = small(Architecture::AsrBaseline);
        let enc = random_features(6, 4, 5);
        let lattice = ctc_log_probs(&enc, &m).unwrap();
        for r in lattice.log_probs.rows() {
            let total: f64 = r.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        let shifted = LogitLattice::from_logits(&lattice.values + 7.5);
        for (a, b) in shifted.log_probs.iter().zip(lattice.log_probs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        let zero = zeroed(small(Architecture::AsrBaseline));
        let uniform = ctc_log_probs(&enc, &zero).unwrap();
        let expected = -(29f64).ln();
        assert!(uniform.log_probs.iter().all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn mean_pool_examples() {
        let v = array![[1.0, -2.0, 3.0]];
        assert_eq!(mean_pool(&v).unwrap(), array![1.0, -2.0, 3.0]);
        let sym = array![[1.0, -2.0], [-1.0, 2.0]];
        assert_eq!(mean_pool(&sym).unwrap(), array![0.0, 0.0]);
        let c = array![[0.5, 2.0], [0.5, 2.0], [0.5, 2.0]];
        assert_eq!(mean_pool(&c).unwrap(), array![0.5, 2.0]);
        assert!(matches!(
            mean_pool(&Array2::zeros((0, 3))),
            Err(ModelError::EmptySequence)
        ));
    }

    #[test]
    fn text_encode_examples() {
        let m = small(Architecture::Joint);
        let default = m.params.get("text.default").unwrap().row(0).to_owned();
        assert_eq!(text_encode("", &m).unwrap(), default);
        assert_eq!(text_encode("hello there", &m).unwrap(), text_encode("hello there", &m).unwrap());
        assert_ne!(text_encode("ab", &m).unwrap(), text_encode("ba", &m).unwrap());
        assert!(matches!(text_encode("Hi!", &m), Err(ModelError::OutOfVocab('H'))));
        assert_eq!(text_encode("ab", &m).unwrap().len(), m.config.linguistic_dim());
    }

    #[test]
    fn fusion_examples() {
        let mut m = small(Architecture::Joint);
        let a = array![0.3, -0.2, 0.1, 0.9];
        let l = array![-0.5, 0.25, 0.4, 0.0];

        // output[..da] - a is exactly MLP_a(a)
        let out = fusion_forward(&a, &l, &m).unwrap();
        let p = |n: &str| m.params.get(n).unwrap().clone();
        let hidden = (row(&a).dot(&p("fusion.acoustic.fc1.w")) + p("fusion.acoustic.fc1.b")).mapv(f64::tanh);
        let mlp_a = hidden.dot(&p("fusion.acoustic.fc2.w")) + p("fusion.acoustic.fc2.b");
        for i in 0..4 {
            assert_eq!(out[i] - a[i], mlp_a[[0, i]]);
        }

        m.params.zero_prefix("fusion.");
        let out = fusion_forward(&a, &l, &m).unwrap();
        let expected: Vec<f64> = a.iter().chain(l.iter()).copied().collect();
        assert_eq!(out.to_vec(), expected);
        let zeros = fusion_forward(&Array1::zeros(4), &Array1::zeros(4), &m).unwrap();
        assert!(zeros.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn emotion_head_examples() {
        let mut m = small(Architecture::Joint);
        m.params.get_mut("emotion_head.w").unwrap().fill(0.0);
        *m.params.get_mut("emotion_head.b").unwrap() = array![[0.1, -0.4, 2.0, 0.3]];
        let logits = emotion_logits(&Array1::from_elem(8, 0.7), &m).unwrap();
        assert_eq!(logits.0, [0.1, -0.4, 2.0, 0.3]);
        assert_eq!(logits.predicted(), Emotion::Sad);
        let shifted = EmotionLogits(logits.0.map(|v| v - 3.0));
        assert_eq!(shifted.predicted(), logits.predicted());
    }

    #[test]
    fn joint_with_zero_fusion_matches_plain_concatenation() {
        let mut m = small(Architecture::Joint);
        m.params.zero_prefix("fusion.");
        let x = random_features(12, 5, 8);
        let out = forward_joint(&x, None, &m, Mode::Infer, LinguisticSource::Decoded).unwrap();
        let pooled = mean_pool(&encoder_forward(&x, &m).unwrap()).unwrap();
        let ling = text_encode(&out.transcript, &m).unwrap();
        let concat = Array1::from_iter(pooled.iter().chain(ling.iter()).copied());
        let direct = emotion_logits(&concat, &m).unwrap();
        for (a, b) in out.emotion.0.iter().zip(direct.0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_is_deterministic_and_checks_reference() {
        let m = small(Architecture::Joint);
        let x = random_features(10, 5, 9);
        let a = forward_joint(&x, None, &m, Mode::Infer, LinguisticSource::Decoded).unwrap();
        let b = forward_joint(&x, None, &m, Mode::Infer, LinguisticSource::Decoded).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            forward_joint(&x, None, &m, Mode::Train, LinguisticSource::Reference),
            Err(ModelError::ReferenceRequired)
        ));
        let with_ref = forward_joint(&x, Some("hi"), &m, Mode::Train, LinguisticSource::Reference).unwrap();
        assert_eq!(with_ref.transcript, "hi");
        // inference always decodes
        let infer = forward_joint(&x, Some("hi"), &m, Mode::Infer, LinguisticSource::Reference).unwrap();
        assert_eq!(infer.transcript, a.transcript);
    }

    #[test]
    fn baselines_compose_components() {
        let asr = small(Architecture::AsrBaseline);
        let x = random_features(16, 5, 10);
        let lattice = forward_asr_baseline(&x, &asr).unwrap();
        let via_parts = ctc_log_probs(&encoder_forward(&x, &asr).unwrap(), &asr).unwrap();
        assert_eq!(lattice, via_parts);

        let ser = small(Architecture::SerBaseline);
        let logits = forward_ser_baseline(&x, &ser).unwrap();
        assert!(logits.0.iter().all(|v| v.is_finite()));
        assert!(forward_ser_baseline(&x, &asr).is_err());
        assert!(forward_asr_baseline(&x, &ser).is_err());
    }
}
