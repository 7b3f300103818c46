//! Word error rate, accuracy, confusion and the Rel Imp arithmetic.

use serde::{Deserialize, Serialize};

use super::{EvalError, Result, Task};
use crate::emotion::Emotion;

/// Lowercases, drops punctuation other than apostrophes and collapses
/// whitespace.
pub fn normalize_transcript(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() || c == '\'' || c.is_whitespace() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditOp {
    Match,
    Substitute,
    Delete,
    Insert,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
    pub wer: f64,
}

impl WerBreakdown {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Levenshtein alignment over words with unit costs. Among minimal scripts
/// the backtrace prefers the diagonal, then deletions, then insertions.
pub fn align<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Vec<EditOp> {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hypothesis[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                ops.push(if same { EditOp::Match } else { EditOp::Substitute });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(EditOp::Delete);
            i -= 1;
        } else {
            ops.push(EditOp::Insert);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

pub fn word_edit_distance<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let mut b = WerBreakdown {
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        ref_words: reference.len(),
        wer: 0.0,
    };
    for op in align(reference, hypothesis) {
        match op {
            EditOp::Match => {}
            EditOp::Substitute => b.substitutions += 1,
            EditOp::Delete => b.deletions += 1,
            EditOp::Insert => b.insertions += 1,
        }
    }
    b.wer = b.errors() as f64 / b.ref_words as f64;
    Ok(b)
}

/// Normalizes both strings and splits them into words.
pub fn transcript_distance(reference: &str, hypothesis: &str) -> Result<WerBreakdown> {
    let r = normalize_transcript(reference);
    let h = normalize_transcript(hypothesis);
    let rw: Vec<&str> = r.split_whitespace().collect();
    let hw: Vec<&str> = h.split_whitespace().collect();
    word_edit_distance(&rw, &hw)
}

/// Pooled WER in percent: 100·Σ(S+D+I)/ΣN over all pairs.
pub fn corpus_wer<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput("corpus_wer"));
    }
    let (mut errors, mut words) = (0usize, 0usize);
    for (r, h) in pairs {
        let b = transcript_distance(r.as_ref(), h.as_ref())?;
        errors += b.errors();
        words += b.ref_words;
    }
    Ok(100.0 * errors as f64 / words as f64)
}

fn check_lengths(labels: &[Emotion], preds: &[Emotion]) -> Result<()> {
    if labels.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            labels: labels.len(),
            preds: preds.len(),
        });
    }
    if labels.is_empty() {
        return Err(EvalError::EmptyInput("ser_accuracy"));
    }
    Ok(())
}

/// Overall (pooled) accuracy in percent.
pub fn ser_accuracy(labels: &[Emotion], preds: &[Emotion]) -> Result<f64> {
    check_lengths(labels, preds)?;
    let correct = labels.iter().zip(preds).filter(|(a, b)| a == b).count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

pub type Confusion = [[u64; Emotion::COUNT]; Emotion::COUNT];

/// Rows are true classes, columns predictions, both in [`Emotion::ALL`] order.
pub fn confusion(labels: &[Emotion], preds: &[Emotion]) -> Result<Confusion> {
    if labels.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            labels: labels.len(),
            preds: preds.len(),
        });
    }
    let mut m = [[0u64; Emotion::COUNT]; Emotion::COUNT];
    for (l, p) in labels.iter().zip(preds) {
        m[l.index()][p.index()] += 1;
    }
    Ok(m)
}

/// Unweighted average recall in percent over the classes present in `labels`.
pub fn unweighted_average_recall(labels: &[Emotion], preds: &[Emotion]) -> Result<f64> {
    check_lengths(labels, preds)?;
    let m = confusion(labels, preds)?;
    let recalls: Vec<f64> = m
        .iter()
        .enumerate()
        .filter(|(_, row)| row.iter().sum::<u64>() > 0)
        .map(|(i, row)| row[i] as f64 / row.iter().sum::<u64>() as f64)
        .collect();
    Ok(100.0 * recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Improvement of `joint` over `baseline`, positive when the joint model is
/// better. WER uses the relative change 100·(b−j)/b; accuracy uses the
/// absolute difference j−b in percentage points.
pub fn relative_improvement(baseline: f64, joint: f64, task: Task) -> Result<f64> {
    match task {
        Task::Asr => {
            if baseline == 0.0 {
                return Err(EvalError::ZeroBaseline);
            }
            Ok(100.0 * (baseline - joint) / baseline)
        }
        Task::Ser => Ok(joint - baseline),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Emotion::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_and_examples() {
        let b = word_edit_distance(&w("the cat sat"), &w("the cat sat")).unwrap();
        assert_eq!((b.substitutions, b.deletions, b.insertions, b.wer), (0, 0, 0, 0.0));
        let b = word_edit_distance(&w("a b c"), &w("a x c d")).unwrap();
        assert_eq!((b.substitutions, b.deletions, b.insertions), (1, 0, 1));
        assert!((b.wer - 2.0 / 3.0).abs() < 1e-12);
        let b = word_edit_distance(&w("a b c"), &[]).unwrap();
        assert_eq!((b.deletions, b.wer), (3, 1.0));
        assert!(matches!(word_edit_distance::<&str>(&[], &["a"]), Err(EvalError::EmptyReference)));
    }

    #[test]
    fn pooled_wer() {
        assert_eq!(corpus_wer(&[("a b", "a x"), ("c d", "c d")]).unwrap(), 25.0);
        assert_eq!(corpus_wer(&[("a", "b"), ("c d e", "c d e")]).unwrap(), 25.0);
        assert_eq!(corpus_wer(&[("hi there", "Hi, there!")]).unwrap(), 0.0);
        assert!(corpus_wer::<&str, &str>(&[]).is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_transcript("  Don't   STOP, now!  "), "don't stop now");
    }

    #[test]
    fn accuracy_and_confusion() {
        assert_eq!(ser_accuracy(&[Neutral, Happy], &[Happy, Happy]).unwrap(), 50.0);
        let labels = [Neutral, Happy, Sad, Angry, Angry];
        assert_eq!(ser_accuracy(&labels, &labels).unwrap(), 100.0);
        let m = confusion(&labels, &labels).unwrap();
        for (i, row) in m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v > 0, i == j);
            }
        }
        assert_eq!(m[3][3], 2);
        assert!(ser_accuracy(&labels, &labels[..2]).is_err());
        assert_eq!(unweighted_average_recall(&[Neutral, Neutral, Neutral, Sad], &[Neutral; 4]).unwrap(), 50.0);
    }

    #[test]
    fn rel_imp_examples() {
        let r = |b, j, t| relative_improvement(b, j, t).unwrap();
        assert!((r(16.8, 15.0, Task::Asr) - 10.714).abs() < 1e-3);
        assert!((r(71.9, 74.2, Task::Ser) - 2.3).abs() < 1e-9);
        assert!((r(36.3, 51.3, Task::Asr) + 41.32).abs() < 1e-2);
        assert_eq!(r(42.0, 42.0, Task::Asr), 0.0);
        assert_eq!(r(42.0, 42.0, Task::Ser), 0.0);
        assert!(relative_improvement(0.0, 1.0, Task::Asr).is_err());
    }

    fn words() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]).prop_map(String::from), 0..6)
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(x in words(), y in words(), z in words()) {
            let d = |a: &[String], b: &[String]| align(a, b).iter().filter(|o| **o != EditOp::Match).count();
            prop_assert_eq!(d(&x, &x), 0);
            prop_assert_eq!(d(&x, &y), d(&y, &x));
            prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z));
        }

        #[test]
        fn wer_is_permutation_invariant(mut pairs in prop::collection::vec((words(), words()), 1..6)) {
            for p in pairs.iter_mut() {
                if p.0.is_empty() { p.0.push("a".into()); }
            }
            let joined: Vec<(String, String)> = pairs.iter().map(|(r, h)| (r.join(" "), h.join(" "))).collect();
            let mut rev = joined.clone();
            rev.reverse();
            prop_assert_eq!(corpus_wer(&joined).unwrap(), corpus_wer(&rev).unwrap());
        }

        #[test]
        fn accuracy_invariant_under_relabeling(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..30),
            perm in Just([0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let e = |i: usize| Emotion::from_index(i).unwrap();
            let (l, p): (Vec<_>, Vec<_>) = pairs.iter().map(|&(a, b)| (e(a), e(b))).unzip();
            let (lp, pp): (Vec<_>, Vec<_>) = pairs.iter().map(|&(a, b)| (e(perm[a]), e(perm[b]))).unzip();
            prop_assert_eq!(ser_accuracy(&l, &p).unwrap(), ser_accuracy(&lp, &pp).unwrap());
            let m = confusion(&l, &p).unwrap();
            for k in Emotion::ALL {
                prop_assert_eq!(m[k.index()].iter().sum::<u64>() as usize, l.iter().filter(|x| **x == k).count());
            }
        }
    }
}
