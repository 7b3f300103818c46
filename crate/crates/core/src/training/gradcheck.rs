//! Central-difference verification of the analytic gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::loss::JointLossConfig;
use super::trainer::utterance_loss;
use crate::emotion::Emotion;
use crate::model::graph::Tensor;
use crate::model::{Architecture, Model, ModelError, Session, TranscriptChoice};
use crate::FeatureMatrix;

/// Absolute floor of the relative-error denominator, so entries whose true
/// gradient is ~0 are judged on absolute error instead. Central differences
/// at eps = 1e-5 carry roundoff of about 1e-16 · |loss| / eps, ~1e-10 for a
/// loss near 10, which a 1e-6 floor would turn into a 1e-4 "error".
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckSample {
    pub features: FeatureMatrix,
    pub transcript: String,
    pub emotion: Emotion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub name: String,
    pub n_values: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub architecture: Architecture,
    pub eps: f64,
    pub tol: f64,
    pub groups: Vec<GroupResult>,
    pub max_rel_err: f64,
    pub passed: bool,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Fixes the transcript each sample's text encoder sees. With the decoded
/// source, the decode is taken once at the unperturbed parameters, which is
/// exactly the function whose gradient training follows.
fn resolve_transcripts(model: &Model, batch: &[GradCheckSample], decoded: bool) -> Result<Vec<String>, ModelError> {
    batch
        .iter()
        .map(|b| {
            if model.arch != Architecture::Joint || !decoded {
                return Ok(b.transcript.clone());
            }
            let mut s = Session::new(model);
            Ok(s.joint(&b.features, TranscriptChoice::Decode)?.transcript)
        })
        .collect()
}

fn batch_loss(
    model: &Model,
    batch: &[GradCheckSample],
    texts: &[String],
    loss_cfg: &JointLossConfig,
    with_grads: bool,
) -> Result<(f64, BTreeMap<String, Tensor>), ModelError> {
    let w = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    for (sample, text) in batch.iter().zip(texts) {
        let mut s = Session::new(model);
        let (root, b) = utterance_loss(
            &mut s,
            &sample.features,
            &sample.transcript,
            sample.emotion,
            TranscriptChoice::Given(text),
            loss_cfg,
        )?;
        total += w * b.l_joint;
        if with_grads {
            for (name, g) in s.param_grads(root) {
                match grads.get_mut(&name) {
                    Some(a) => a.scaled_add(w, &g),
                    None => {
                        grads.insert(name, g * w);
                    }
                }
            }
        }
    }
    Ok((total, grads))
}

/// Compares analytic and central-difference gradients for every parameter
/// of `model` on `batch`. Intended for small models in `f64`.
pub fn grad_check(
    model: &Model,
    batch: &[GradCheckSample],
    loss_cfg: &JointLossConfig,
    decoded_source: bool,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport, ModelError> {
    grad_check_scaled(model, batch, loss_cfg, decoded_source, eps, tol, 1.0)
}

/// [`grad_check`] with the analytic gradient multiplied by `analytic_scale`;
/// any scale other than 1 must fail (negative control).
pub fn grad_check_scaled(
    model: &Model,
    batch: &[GradCheckSample],
    loss_cfg: &JointLossConfig,
    decoded_source: bool,
    eps: f64,
    tol: f64,
    analytic_scale: f64,
) -> Result<GradCheckReport, ModelError> {
    let texts = resolve_transcripts(model, batch, decoded_source)?;
    let (_, analytic) = batch_loss(model, batch, &texts, loss_cfg, true)?;
    let mut probe = model.clone();
    let mut groups = Vec::new();
    let names: Vec<String> = model.params.names().cloned().collect();
    for name in names {
        let base = model.params.get(&name)?.clone();
        let grad = analytic
            .get(&name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(base.dim()));
        let mut max_err: f64 = 0.0;
        for idx in 0..base.len() {
            let (r, c) = (idx / base.ncols(), idx % base.ncols());
            let set = |probe: &mut Model, v: f64| {
                probe.params.get_mut(&name).expect("known name")[[r, c]] = v;
            };
            set(&mut probe, base[[r, c]] + eps);
            let (plus, _) = batch_loss(&probe, batch, &texts, loss_cfg, false)?;
            set(&mut probe, base[[r, c]] - eps);
            let (minus, _) = batch_loss(&probe, batch, &texts, loss_cfg, false)?;
            set(&mut probe, base[[r, c]]);
            let numeric = (plus - minus) / (2.0 * eps);
            max_err = max_err.max(rel_err(analytic_scale * grad[[r, c]], numeric));
        }
        groups.push(GroupResult {
            name,
            n_values: base.len(),
            max_rel_err: max_err,
        });
    }
    let max_rel_err = groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        architecture: model.arch,
        eps,
        tol,
        groups,
        max_rel_err,
        passed: max_rel_err < tol,
    })
}
