use jointspeech::model::{Architecture, Model, ModelConfig};
use jointspeech::training::gradcheck::{grad_check_scaled, rel_err};
use jointspeech::training::{cross_entropy, grad_check, GradCheckSample, JointLossConfig};
use jointspeech::Emotion;
use ndarray::Array2;
use rand::{Rng, SeedableRng};

fn batch(seed: u64) -> Vec<GradCheckSample> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut feats = |t: usize| Array2::from_shape_simple_fn((t, 6), || rng.gen_range(-1.5..1.5));
    vec![
        GradCheckSample {
            features: feats(16),
            transcript: "ab".into(),
            emotion: Emotion::Sad,
        },
        GradCheckSample {
            features: feats(13),
            transcript: "a a".into(),
            emotion: Emotion::Angry,
        },
    ]
}

fn model(arch: Architecture) -> Model {
    Model::new(arch, ModelConfig::tiny(6), 11)
}

#[test]
fn every_architecture_passes() {
    for arch in Architecture::ALL {
        let m = model(arch);
        assert!(m.n_params() <= 10_000);
        let report = grad_check(&m, &batch(1), &JointLossConfig::default(), true, 1e-5, 1e-4).unwrap();
        for g in &report.groups {
            println!("{arch} {:<32} {:.3e}", g.name, g.max_rel_err);
        }
        assert!(report.passed, "{arch}: max rel err {}", report.max_rel_err);
        assert_eq!(report.groups.len(), m.params.len());
    }
}

#[test]
fn joint_with_reference_source_passes() {
    let m = model(Architecture::Joint);
    let report = grad_check(&m, &batch(2), &JointLossConfig { alpha: 0.4 }, false, 1e-5, 1e-4).unwrap();
    assert!(report.passed, "{}", report.max_rel_err);
}

#[test]
fn doubled_analytic_gradient_fails() {
    let m = model(Architecture::Joint);
    let report =
        grad_check_scaled(&m, &batch(3), &JointLossConfig::default(), true, 1e-5, 1e-4, 2.0).unwrap();
    assert!(!report.passed);
    assert!(report.max_rel_err > 0.4);
}

/// Linear head with softmax cross-entropy: analytic gradient x ⊗ (softmax − onehot)
/// against central differences.
#[test]
fn linear_head_cross_entropy_is_tight() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = Array2::from_shape_simple_fn((7, 4), || rng.gen_range(-0.5..0.5));
    let label = 2;
    let logits = |w: &Array2<f64>| -> Vec<f64> {
        (0..4).map(|k| (0..7).map(|i| x[i] * w[[i, k]]).sum()).collect()
    };
    let (_, g_logits) = cross_entropy(&logits(&w), label);
    let eps = 1e-5;
    let mut max_err: f64 = 0.0;
    for i in 0..7 {
        for k in 0..4 {
            let analytic = x[i] * g_logits[k];
            let mut p = w.clone();
            p[[i, k]] += eps;
            let mut m = w.clone();
            m[[i, k]] -= eps;
            let numeric = (cross_entropy(&logits(&p), label).0 - cross_entropy(&logits(&m), label).0) / (2.0 * eps);
            max_err = max_err.max(rel_err(analytic, numeric));
        }
    }
    assert!(max_err < 1e-7, "{max_err}");
}
