//! Fold-wise inference over the seven scenarios with pooled scoring.

use std::collections::{BTreeMap, HashMap};

use super::metrics::{confusion, corpus_wer, ser_accuracy, unweighted_average_recall};
use super::report::{ConfusionCell, EvalReport, FoldResult, ScenarioResult};
use super::{EvalError, Result, System, Task};
use crate::corpus::{FoldPlan, Scenario, ScenarioSet, TrainedOn};
use crate::emotion::Emotion;
use crate::features::FrontEnd;
use crate::model::checkpoint::CheckpointMeta;
use crate::model::{
    ctc_greedy_decode, forward_asr_baseline, forward_joint, forward_ser_baseline, Architecture, LinguisticSource,
    Mode, Model,
};
use crate::FeatureMatrix;

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub meta: CheckpointMeta,
}

/// Trained models keyed by (fold, architecture, training condition).
#[derive(Debug, Clone, Default)]
pub struct CheckpointSet {
    entries: BTreeMap<(usize, Architecture, TrainedOn), TrainedModel>,
}

impl CheckpointSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fold: usize, trained_on: TrainedOn, model: Model, meta: CheckpointMeta) {
        self.entries
            .insert((fold, model.arch, trained_on), TrainedModel { model, meta });
    }

    pub fn get(&self, fold: usize, arch: Architecture, trained_on: TrainedOn) -> Option<&TrainedModel> {
        self.entries.get(&(fold, arch, trained_on))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rejects any checkpoint that saw its fold's test speaker, or that was
    /// trained for a different fold.
    fn check_leakage(&self, plan: &FoldPlan) -> Result<()> {
        for ((fold, arch, trained_on), tm) in &self.entries {
            let Some(f) = plan.folds.get(*fold) else {
                continue;
            };
            if tm.meta.train_speakers.contains(&f.test_speaker) {
                return Err(EvalError::Leakage {
                    fold: *fold,
                    speaker: f.test_speaker.clone(),
                    arch: *arch,
                    trained_on: *trained_on,
                });
            }
            if tm.meta.test_speaker.as_deref() != Some(f.test_speaker.as_str()) {
                return Err(EvalError::FoldMismatch {
                    fold: *fold,
                    expected: f.test_speaker.clone(),
                    found: tm.meta.test_speaker.clone(),
                    arch: *arch,
                    trained_on: *trained_on,
                });
            }
        }
        Ok(())
    }
}

type CellKey = (Scenario, System, TrainedOn);

#[derive(Default)]
struct Pool {
    asr: Vec<(String, String)>,
    labels: Vec<Emotion>,
    preds: Vec<Emotion>,
}

/// Decodes and classifies every fold's test utterances under every scenario
/// with that fold's checkpoints, then scores the pooled predictions. A cell
/// is filled only when every fold has the checkpoint it needs.
pub fn evaluate_scenarios(
    checkpoints: &CheckpointSet,
    scenarios: &[ScenarioSet],
    plan: &FoldPlan,
    frontend: &dyn FrontEnd,
) -> Result<EvalReport> {
    checkpoints.check_leakage(plan)?;
    let by_name: HashMap<Scenario, &ScenarioSet> = scenarios.iter().map(|s| (s.name, s)).collect();
    for name in Scenario::ALL {
        if !by_name.contains_key(&name) {
            return Err(EvalError::MissingScenario(name.to_string()));
        }
    }

    let mut pooled: BTreeMap<CellKey, Pool> = BTreeMap::new();
    let mut per_fold = Vec::new();
    let mut n_utterances = 0;
    for (k, fold) in plan.folds.iter().enumerate() {
        n_utterances += fold.test_ids.len();
        for scenario in Scenario::ALL {
            let set = by_name[&scenario];
            let mut feats: Vec<(&str, &str, Emotion, FeatureMatrix)> = Vec::new();
            for id in &fold.test_ids {
                let u = set
                    .utterances
                    .iter()
                    .find(|u| &u.record.id == id)
                    .ok_or_else(|| EvalError::MissingUtterance {
                        scenario: scenario.to_string(),
                        id: id.clone(),
                    })?;
                let f = frontend.features(&u.audio).map_err(|source| EvalError::Audio {
                    id: id.clone(),
                    source,
                })?;
                feats.push((id, &u.record.transcript, u.record.emotion, f));
            }
            for trained_on in TrainedOn::ALL {
                for system in System::ALL {
                    let mut fold_pool = Pool::default();
                    let asr = checkpoints.get(k, System::architecture(system, Task::Asr), trained_on);
                    let ser = checkpoints.get(k, System::architecture(system, Task::Ser), trained_on);
                    for (id, reference, label, f) in &feats {
                        let me = |source| EvalError::Model {
                            id: id.to_string(),
                            source,
                        };
                        match system {
                            System::Joint => {
                                if let Some(tm) = asr {
                                    let out = forward_joint(f, None, &tm.model, Mode::Infer, LinguisticSource::Decoded)
                                        .map_err(me)?;
                                    fold_pool.asr.push((reference.to_string(), out.transcript));
                                    fold_pool.labels.push(*label);
                                    fold_pool.preds.push(out.emotion.predicted());
                                }
                            }
                            System::Baseline => {
                                if let Some(tm) = asr {
                                    let lat = forward_asr_baseline(f, &tm.model).map_err(me)?;
                                    fold_pool
                                        .asr
                                        .push((reference.to_string(), ctc_greedy_decode(&lat, &tm.model.vocab)));
                                }
                                if let Some(tm) = ser {
                                    let logits = forward_ser_baseline(f, &tm.model).map_err(me)?;
                                    fold_pool.labels.push(*label);
                                    fold_pool.preds.push(logits.predicted());
                                }
                            }
                        }
                    }
                    let pool = pooled.entry((scenario, system, trained_on)).or_default();
                    if !fold_pool.asr.is_empty() {
                        per_fold.push(FoldResult {
                            fold: k,
                            test_speaker: fold.test_speaker.clone(),
                            scenario,
                            architecture: system,
                            trained_on,
                            task: Task::Asr,
                            value: corpus_wer(&fold_pool.asr)?,
                        });
                    }
                    if !fold_pool.labels.is_empty() {
                        per_fold.push(FoldResult {
                            fold: k,
                            test_speaker: fold.test_speaker.clone(),
                            scenario,
                            architecture: system,
                            trained_on,
                            task: Task::Ser,
                            value: ser_accuracy(&fold_pool.labels, &fold_pool.preds)?,
                        });
                    }
                    pool.asr.append(&mut fold_pool.asr);
                    pool.labels.append(&mut fold_pool.labels);
                    pool.preds.append(&mut fold_pool.preds);
                }
            }
        }
    }

    let n_folds = plan.folds.len();
    let complete = |system: System, task: Task, trained_on: TrainedOn| {
        (0..n_folds).all(|k| checkpoints.get(k, system.architecture(task), trained_on).is_some())
    };
    let mut cells = Vec::new();
    let mut confusions = Vec::new();
    let mut uar = Vec::new();
    let mut macro_avg = Vec::new();
    for ((scenario, system, trained_on), pool) in &pooled {
        let (scenario, system, trained_on) = (*scenario, *system, *trained_on);
        let result = |task, value| ScenarioResult {
            scenario,
            architecture: system,
            trained_on,
            task,
            value,
        };
        for task in Task::ALL {
            if !complete(system, task, trained_on) {
                continue;
            }
            let value = match task {
                Task::Asr => corpus_wer(&pool.asr)?,
                Task::Ser => {
                    confusions.push(ConfusionCell {
                        scenario,
                        architecture: system,
                        trained_on,
                        matrix: confusion(&pool.labels, &pool.preds)?,
                    });
                    uar.push(result(task, unweighted_average_recall(&pool.labels, &pool.preds)?));
                    ser_accuracy(&pool.labels, &pool.preds)?
                }
            };
            cells.push(result(task, value));
            let fold_vals: Vec<f64> = per_fold
                .iter()
                .filter(|r| r.scenario == scenario && r.architecture == system && r.trained_on == trained_on && r.task == task)
                .map(|r| r.value)
                .collect();
            macro_avg.push(result(task, fold_vals.iter().sum::<f64>() / fold_vals.len() as f64));
        }
    }

    let mut report = EvalReport::from_cells(cells);
    report.folds = plan.folds.iter().map(|f| f.test_speaker.clone()).collect();
    report.n_utterances = n_utterances;
    report.confusion = confusions;
    report.uar = uar;
    report.macro_avg = macro_avg;
    report.per_fold = per_fold;
    Ok(report)
}
