//! Adam with global-norm gradient clipping.
//!
//! Update for each parameter tensor θ with gradient g at step t (1-based):
//!
//! ```text
//! m ← β1·m + (1−β1)·g
//! v ← β2·v + (1−β2)·g²
//! θ ← θ − lr · (m / (1−β1ᵗ)) / (sqrt(v / (1−β2ᵗ)) + ε)
//! ```

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::model::graph::Tensor;
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads
        .values()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.values_mut().for_each(|g| g.mapv_inplace(|x| x * scale));
    }
    norm
}

impl Adam {
    pub fn new(lr: f64, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            lr,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient and passes
    /// `trainable`. A step whose gradients are all exactly zero is skipped
    /// entirely, moments included.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Tensor>,
        trainable: impl Fn(&str) -> bool,
    ) {
        let any_nonzero = grads
            .iter()
            .filter(|(n, _)| trainable(n))
            .any(|(_, g)| g.iter().any(|&x| x != 0.0));
        if !any_nonzero {
            return;
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let lr = self.lr;
        for (name, p) in params.iter_mut() {
            if !trainable(name) {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ModelConfig};
    use ndarray::array;

    fn store() -> ParamStore {
        ParamStore::init(Architecture::AsrBaseline, &ModelConfig::tiny(3), 29, 1)
    }

    fn grads_like(p: &ParamStore, value: f64) -> BTreeMap<String, Tensor> {
        p.iter()
            .map(|(n, t)| (n.clone(), Array2::from_elem(t.dim(), value)))
            .collect()
    }

    #[test]
    fn zero_gradients_leave_parameters_alone() {
        let mut p = store();
        let before = p.clone();
        let mut adam = Adam::new(1e-2, AdamConfig::default());
        let g = grads_like(&p, 0.3);
        adam.step(&mut p, &g, |_| true);
        assert_ne!(p, before);
        let after_one = p.clone();
        let g = grads_like(&p, 0.0);
        adam.step(&mut p, &g, |_| true);
        assert_eq!(p, after_one);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = store();
        let before = p.clone();
        let mut adam = Adam::new(0.0, AdamConfig::default());
        let g = grads_like(&p, 0.7);
        adam.step(&mut p, &g, |_| true);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = ParamStore::from_map([("w".to_string(), array![[1.0, 1.0]])].into());
        let mut adam = Adam::new(0.1, AdamConfig::default());
        let g = [("w".to_string(), array![[2.0, -3.0]])].into();
        adam.step(&mut p, &g, |_| true);
        let w = p.get("w").unwrap();
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut p = store();
        let before = p.clone();
        let mut adam = Adam::new(1e-2, AdamConfig::default());
        let g = grads_like(&p, 0.3);
        adam.step(&mut p, &g, |n| !n.starts_with("encoder.conv"));
        assert_eq!(p.get("encoder.conv1.w").unwrap(), before.get("encoder.conv1.w").unwrap());
        assert_ne!(p.get("ctc_head.w").unwrap(), before.get("ctc_head.w").unwrap());
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let p = store();
        let mut g = grads_like(&p, 1.0);
        let pre = clip_global_norm(&mut g, 5.0);
        assert!(pre > 5.0);
        assert!(global_norm(&g) <= 5.0 + 1e-6);
        let mut small = grads_like(&p, 1e-4);
        let before = small.clone();
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small, before);
    }
}
