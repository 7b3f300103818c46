use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CorpusError, Result, UtteranceRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test_speaker: String,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

/// One fold per speaker, in speaker-id order; fold `k` holds out the k-th
/// speaker (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

pub fn make_loso_folds(records: &[UtteranceRecord]) -> Result<FoldPlan> {
    let mut by_speaker: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for r in records {
        by_speaker.entry(&r.speaker).or_default().insert(r.id.clone());
    }
    if by_speaker.len() < 2 {
        return Err(CorpusError::TooFewSpeakers(by_speaker.len()));
    }
    let folds = by_speaker
        .iter()
        .map(|(&spk, test_ids)| Fold {
            test_speaker: spk.to_string(),
            train_ids: by_speaker
                .iter()
                .filter(|(&s, _)| s != spk)
                .flat_map(|(_, ids)| ids.iter().cloned())
                .collect(),
            test_ids: test_ids.clone(),
        })
        .collect();
    Ok(FoldPlan { folds })
}

impl FoldPlan {
    pub fn speakers(&self) -> Vec<&str> {
        self.folds.iter().map(|f| f.test_speaker.as_str()).collect()
    }

    /// Checks disjointness, speaker separation and exact coverage of
    /// `records`. Returns a description of the first violation.
    pub fn check(&self, records: &[UtteranceRecord]) -> std::result::Result<(), String> {
        let speaker_of: BTreeMap<&str, &str> = records.iter().map(|r| (r.id.as_str(), r.speaker.as_str())).collect();
        let mut covered: BTreeMap<&str, usize> = BTreeMap::new();
        for (k, f) in self.folds.iter().enumerate() {
            if let Some(id) = f.train_ids.intersection(&f.test_ids).next() {
                return Err(format!("fold {k}: {id} is in both train and test"));
            }
            for id in &f.train_ids {
                if speaker_of.get(id.as_str()) == Some(&f.test_speaker.as_str()) {
                    return Err(format!("fold {k}: test speaker {} leaks into train via {id}", f.test_speaker));
                }
            }
            for id in &f.test_ids {
                *covered.entry(id.as_str()).or_default() += 1;
            }
        }
        for id in speaker_of.keys() {
            match covered.get(id) {
                Some(1) => {}
                Some(n) => return Err(format!("{id} is tested in {n} folds")),
                None => return Err(format!("{id} is never tested")),
            }
        }
        if covered.len() != speaker_of.len() {
            return Err("plan tests ids absent from the corpus".into());
        }
        Ok(())
    }
}
