//! CTC loss (log-space forward–backward) and greedy decoding.

use ndarray::{Array2, ArrayView2};

use super::graph::log_softmax_rows;
use super::vocab::{Vocab, BLANK};
use super::ModelError;

/// Frame scores and their per-frame log-softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitLattice {
    pub values: Array2<f64>,
    pub log_probs: Array2<f64>,
}

impl LogitLattice {
    pub fn from_logits(values: Array2<f64>) -> Self {
        let log_probs = log_softmax_rows(&values);
        Self { values, log_probs }
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct CtcOutput {
    pub loss: f64,
    /// d loss / d logits (softmax minus state occupancy).
    pub grad_logits: Array2<f64>,
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Fewest frames that can emit `target`: one per token plus a blank between
/// each adjacent repeated pair.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

pub fn check_feasible(n_frames: usize, target: &[usize]) -> Result<(), ModelError> {
    if target.is_empty() {
        return Err(ModelError::EmptyTarget);
    }
    let required = min_frames(target);
    if n_frames < required {
        return Err(ModelError::InfeasibleTarget {
            frames: n_frames,
            required,
        });
    }
    Ok(())
}

/// Negative log-likelihood of `target` under `log_probs` (T × V, rows
/// already normalized) and its gradient w.r.t. `log_probs`.
pub fn ctc_forward_backward(
    log_probs: ArrayView2<f64>,
    target: &[usize],
) -> Result<(f64, Array2<f64>), ModelError> {
    let (t_len, v) = log_probs.dim();
    if let Some(&bad) = target.iter().find(|&&k| k == BLANK || k >= v) {
        return Err(ModelError::InvalidToken(bad));
    }
    check_feasible(t_len, target)?;

    // blank-interleaved extended label sequence
    let s_len = 2 * target.len() + 1;
    let ext: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { BLANK } else { target[s / 2] })
        .collect();
    let skip_ok = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];
    let neg = f64::NEG_INFINITY;

    let mut alpha = Array2::from_elem((t_len, s_len), neg);
    alpha[[0, 0]] = log_probs[[0, ext[0]]];
    alpha[[0, 1]] = log_probs[[0, ext[1]]];
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = lse2(acc, alpha[[t - 1, s - 1]]);
            }
            if skip_ok(s) {
                acc = lse2(acc, alpha[[t - 1, s - 2]]);
            }
            if acc != neg {
                alpha[[t, s]] = acc + log_probs[[t, ext[s]]];
            }
        }
    }

    let mut beta = Array2::from_elem((t_len, s_len), neg);
    let last = t_len - 1;
    beta[[last, s_len - 1]] = log_probs[[last, ext[s_len - 1]]];
    beta[[last, s_len - 2]] = log_probs[[last, ext[s_len - 2]]];
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut acc = beta[[t + 1, s]];
            if s + 1 < s_len {
                acc = lse2(acc, beta[[t + 1, s + 1]]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                acc = lse2(acc, beta[[t + 1, s + 2]]);
            }
            if acc != neg {
                beta[[t, s]] = acc + log_probs[[t, ext[s]]];
            }
        }
    }

    let log_lik = lse2(alpha[[last, s_len - 1]], alpha[[last, s_len - 2]]);
    let mut grad = Array2::zeros((t_len, v));
    for t in 0..t_len {
        for s in 0..s_len {
            let a = alpha[[t, s]];
            let b = beta[[t, s]];
            if a == neg || b == neg {
                continue;
            }
            let occupancy = (a + b - log_probs[[t, ext[s]]] - log_lik).exp();
            grad[[t, ext[s]]] -= occupancy;
        }
    }
    Ok((-log_lik, grad))
}

/// CTC loss of `target` under `lattice`, with the gradient w.r.t. the raw logits.
pub fn ctc_loss(lattice: &LogitLattice, target: &[usize]) -> Result<CtcOutput, ModelError> {
    let (loss, grad_lp) = ctc_forward_backward(lattice.log_probs.view(), target)?;
    // back through log-softmax: g - softmax * rowsum(g), and each row of g sums to -1
    let mut grad_logits = grad_lp;
    for (mut g, lp) in grad_logits.rows_mut().into_iter().zip(lattice.log_probs.rows()) {
        let total: f64 = g.sum();
        g.zip_mut_with(&lp, |gv, l| *gv -= l.exp() * total);
    }
    Ok(CtcOutput { loss, grad_logits })
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Collapses adjacent repeats, then drops blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

pub fn greedy_path(lattice: &LogitLattice) -> Vec<usize> {
    lattice
        .log_probs
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()))
        .collect()
}

pub fn ctc_greedy_decode(lattice: &LogitLattice, vocab: &Vocab) -> String {
    vocab.decode(&collapse(&greedy_path(lattice)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn one_hot(path: &[usize], v: usize) -> LogitLattice {
        let mut logits = Array2::from_elem((path.len(), v), -50.0);
        for (t, &k) in path.iter().enumerate() {
            logits[[t, k]] = 50.0;
        }
        LogitLattice::from_logits(logits)
    }

    #[test]
    fn uniform_two_frame_single_token() {
        let lattice = LogitLattice::from_logits(Array2::zeros((2, 2)));
        let out = ctc_loss(&lattice, &[1]).unwrap();
        assert!((out.loss - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((out.loss - 0.287682).abs() < 1e-6);
    }

    #[test]
    fn certain_alignment_has_zero_loss() {
        let lattice = one_hot(&[1, 1, 0, 2, 0, 2], 3);
        let out = ctc_loss(&lattice, &[1, 2, 2]).unwrap();
        assert!(out.loss <= 1e-6, "{}", out.loss);
    }

    #[test]
    fn infeasible_target_is_an_error() {
        let lattice = LogitLattice::from_logits(Array2::zeros((2, 3)));
        assert!(matches!(
            ctc_loss(&lattice, &[1, 1]),
            Err(ModelError::InfeasibleTarget { frames: 2, required: 3 })
        ));
        assert!(matches!(ctc_loss(&lattice, &[1, 2, 1]), Err(ModelError::InfeasibleTarget { .. })));
        assert!(matches!(ctc_loss(&lattice, &[]), Err(ModelError::EmptyTarget)));
        assert!(matches!(ctc_loss(&lattice, &[0]), Err(ModelError::InvalidToken(0))));
    }

    #[test]
    fn greedy_examples() {
        let v = Vocab::default();
        assert_eq!(ctc_greedy_decode(&one_hot(&[1, 1, 0, 2], 29), &v), "ab");
        assert_eq!(ctc_greedy_decode(&one_hot(&[0, 0, 0], 29), &v), "");
        assert_eq!(ctc_greedy_decode(&one_hot(&[1, 0, 1], 29), &v), "aa");
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax([0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax([0.1, 0.7, 0.7]), 1);
        let lattice = LogitLattice::from_logits(array![[0.0, 0.0, 0.0]]);
        assert_eq!(greedy_path(&lattice), vec![0]);
    }

    proptest! {
        #[test]
        fn greedy_on_one_hot_returns_collapse(path in prop::collection::vec(0usize..5, 1..12)) {
            let lattice = one_hot(&path, 5);
            prop_assert_eq!(collapse(&greedy_path(&lattice)), collapse(&path));
        }
    }
}
