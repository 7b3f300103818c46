//! CTC against brute-force path enumeration and finite differences.

use jointspeech::model::ctc::{collapse, ctc_loss, min_frames, LogitLattice};
use ndarray::Array2;
use proptest::prelude::*;

/// −log Σ over all V^T paths whose collapse equals `target`.
fn brute_force_nll(log_probs: &Array2<f64>, target: &[usize]) -> f64 {
    let (t, v) = log_probs.dim();
    let mut terms = Vec::new();
    let mut path = vec![0usize; t];
    loop {
        if collapse(&path) == target {
            terms.push((0..t).map(|i| log_probs[[i, path[i]]]).sum::<f64>());
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == t {
                let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                return -(max + terms.iter().map(|x| (x - max).exp()).sum::<f64>().ln());
            }
            path[i] += 1;
            if path[i] < v {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

fn case() -> impl Strategy<Value = (Array2<f64>, Vec<usize>)> {
    (2usize..=3, 1usize..=6)
        .prop_flat_map(|(v, t)| {
            (
                prop::collection::vec(-3.0f64..3.0, t * v),
                prop::collection::vec(1usize..v, 1..=3),
                Just((t, v)),
            )
        })
        .prop_filter("feasible", |(_, target, (t, _))| min_frames(target) <= *t)
        .prop_map(|(vals, target, (t, v))| (Array2::from_shape_vec((t, v), vals).unwrap(), target))
}

#[test]
fn worked_uniform_case() {
    let lattice = LogitLattice::from_logits(Array2::zeros((2, 2)));
    let bf = brute_force_nll(&lattice.log_probs, &[1]);
    assert!((bf - 0.287682).abs() < 1e-6);
    assert!((ctc_loss(&lattice, &[1]).unwrap().loss - bf).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn forward_recursion_matches_enumeration((logits, target) in case()) {
        let lattice = LogitLattice::from_logits(logits);
        let fast = ctc_loss(&lattice, &target).unwrap().loss;
        let slow = brute_force_nll(&lattice.log_probs, &target);
        prop_assert!((fast - slow).abs() < 1e-6, "{} vs {}", fast, slow);
    }

    #[test]
    fn gradient_matches_central_differences((logits, target) in case()) {
        let out = ctc_loss(&LogitLattice::from_logits(logits.clone()), &target).unwrap();
        let eps = 1e-5;
        for idx in 0..logits.len() {
            let (r, c) = (idx / logits.ncols(), idx % logits.ncols());
            let mut p = logits.clone();
            p[[r, c]] += eps;
            let mut m = logits.clone();
            m[[r, c]] -= eps;
            let lp = ctc_loss(&LogitLattice::from_logits(p), &target).unwrap().loss;
            let lm = ctc_loss(&LogitLattice::from_logits(m), &target).unwrap().loss;
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = out.grad_logits[[r, c]];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            prop_assert!(rel < 1e-4, "entry ({},{}) analytic {} numeric {}", r, c, analytic, numeric);
        }
    }
}
