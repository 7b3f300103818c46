use serde::{Deserialize, Serialize};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointLossConfig {
    /// Weight of the emotion loss; the CTC loss gets `1 - alpha`.
    pub alpha: f64,
}

impl Default for JointLossConfig {
    fn default() -> Self {
        Self { alpha: 0.1 }
    }
}

impl JointLossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if (0.0..=1.0).contains(&self.alpha) {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ser: f64,
    pub l_asr: f64,
    pub l_joint: f64,
}

/// alpha · l_ser + (1 − alpha) · l_asr
pub fn joint_loss(l_ser: f64, l_asr: f64, cfg: &JointLossConfig) -> Result<f64, TrainError> {
    cfg.validate()?;
    Ok(cfg.alpha * l_ser + (1.0 - cfg.alpha) * l_asr)
}

/// Softmax cross-entropy of one logit row; returns the loss and
/// d loss / d logits = softmax − onehot.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, v)| (v - lse).exp() - if i == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eq1_examples() {
        let cfg = JointLossConfig { alpha: 0.1 };
        assert!((joint_loss(2.0, 10.0, &cfg).unwrap() - 9.2).abs() < 1e-12);
        assert_eq!(joint_loss(2.0, 10.0, &JointLossConfig { alpha: 0.0 }).unwrap(), 10.0);
        assert_eq!(joint_loss(2.0, 10.0, &JointLossConfig { alpha: 1.0 }).unwrap(), 2.0);
        assert!(joint_loss(1.0, 1.0, &JointLossConfig { alpha: 1.5 }).is_err());
        assert!(joint_loss(1.0, 1.0, &JointLossConfig { alpha: -0.1 }).is_err());
    }

    #[test]
    fn ce_gradient_at_uniform_logits() {
        let (loss, grad) = cross_entropy(&[0.3, 0.3, 0.3, 0.3], 2);
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        let expected = [0.25, 0.25, -0.75, 0.25];
        for (g, e) in grad.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn joint_loss_is_affine(x in 0.0f64..50.0, y in 0.0f64..50.0, z in 0.0f64..50.0, a in 0.0f64..=1.0) {
            let cfg = JointLossConfig { alpha: a };
            prop_assert!((joint_loss(x, x, &cfg).unwrap() - x).abs() <= 1e-12 * (1.0 + x));
            // affine in the first argument: f(x) + f(z) = f((x+z)/2)*2 along a line
            let f = |s: f64| joint_loss(s, y, &cfg).unwrap();
            prop_assert!((f(x) + f(z) - 2.0 * f((x + z) / 2.0)).abs() < 1e-9);
            let g = |s: f64| joint_loss(y, s, &cfg).unwrap();
            prop_assert!((g(x) + g(z) - 2.0 * g((x + z) / 2.0)).abs() < 1e-9);
        }
    }
}
