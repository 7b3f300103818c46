//! Subcommand implementations. Every output path is derived from the run
//! directory (`cfg.out`):
//!
//! ```text
//! config.effective.json
//! mixed/mix.json
//! mixed/train_noise/{manifest.jsonl,provenance.jsonl,wav/}
//! mixed/scenarios/<scenario>/{manifest.jsonl,provenance.jsonl,wav/}
//! checkpoints/fold<k>/<arch>_<condition>.{ckpt,history.jsonl}
//! eval/report.json
//! report/{report.json,report.md,asr.svg,ser.svg}
//! gradcheck/<arch>.json
//! ```

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};
use std::sync::Arc;
use std::time::Duration;

use jointspeech::audio::CANONICAL_SAMPLE_RATE;
use jointspeech::corpus::{
    build_test_scenarios, corrupt_training_set, load_audio, load_manifest, make_loso_folds, synth_noise_pool,
    synth_toy_corpus, write_atomic, write_corpus, write_mixed, FoldPlan, MixedUtterance, NoisePool, Scenario,
    ScenarioSet, TrainedOn, UtteranceRecord,
};
use jointspeech::eval::{emit_report, evaluate_scenarios, CheckpointSet, EvalReport};
use jointspeech::features::{FrontEnd, LogMelFrontEnd};
use jointspeech::model::checkpoint::{Checkpoint, CheckpointMeta};
use jointspeech::model::{Architecture, LinguisticSource, Model, ModelConfig};
use jointspeech::training::{fit, grad_check, GradCheckSample, TrainItem};
use jointspeech::{Emotion, FeatureMatrix};
use serde_json::json;

use crate::config::RunConfig;
use crate::{log, CliError};

const GRADCHECK_EPS: f64 = 1e-5;
const GRADCHECK_TOL: f64 = 1e-4;

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(CliError::from)
}

fn snapshot(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let p = cfg.out.join("config.effective.json");
    write_file(&p, cfg.to_pretty_json().as_bytes())?;
    Ok(p)
}

fn frontend(cfg: &RunConfig) -> Result<Arc<dyn FrontEnd>, CliError> {
    let fe = LogMelFrontEnd::new(&cfg.mel, CANONICAL_SAMPLE_RATE)
        .map_err(|e| CliError::Config(vec![format!("mel: {e}")]))?;
    Ok(Arc::new(fe))
}

fn must_exist(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} does not exist; {hint}", path.display())))
    }
}

fn load_plan(cfg: &RunConfig) -> Result<(Vec<UtteranceRecord>, FoldPlan), CliError> {
    must_exist(&cfg.corpus.manifest, "set corpus.manifest or pass --manifest")?;
    let records = load_manifest(&cfg.corpus.manifest)?;
    let plan = make_loso_folds(&records)?;
    Ok((records, plan))
}

fn train_noise_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("mixed").join("train_noise")
}

fn scenario_dir(cfg: &RunConfig, s: Scenario) -> PathBuf {
    cfg.out.join("mixed").join("scenarios").join(s.as_str())
}

fn checkpoint_path(cfg: &RunConfig, fold: usize, arch: Architecture, cond: TrainedOn) -> PathBuf {
    cfg.out
        .join("checkpoints")
        .join(format!("fold{fold}"))
        .join(format!("{arch}_{cond}.ckpt"))
}

pub fn synth_corpus(cfg: &RunConfig, speakers: usize, per_speaker: usize, noise_per_category: usize) -> Result<(), CliError> {
    if speakers < 2 {
        return Err(CliError::Usage(format!("--speakers must be at least 2, got {speakers}")));
    }
    if per_speaker == 0 || noise_per_category == 0 {
        return Err(CliError::Usage("--per-speaker and --noise-per-category must be positive".into()));
    }
    let items = synth_toy_corpus(speakers, per_speaker, cfg.seed);
    let records = write_corpus(&cfg.out, &items)?;
    let noise = synth_noise_pool(noise_per_category, cfg.seed).save(cfg.out.join("noise"))?;
    let params = json!({
        "seed": cfg.seed,
        "speakers": speakers,
        "per_speaker": per_speaker,
        "noise_per_category": noise_per_category,
    });
    write_file(
        &cfg.out.join("synth.json"),
        format!("{}\n", serde_json::to_string_pretty(&params).expect("json")).as_bytes(),
    )?;
    log::info(
        "synth-corpus",
        "done",
        json!({"utterances": records.len(), "manifest": cfg.out.join("manifest.jsonl"), "noise": noise}),
    );
    Ok(())
}

pub fn mix(cfg: &RunConfig) -> Result<(), CliError> {
    must_exist(&cfg.corpus.noise, "set corpus.noise or pass --noise")?;
    let (records, _) = load_plan(cfg)?;
    snapshot(cfg)?;
    let items = load_audio(&records)?;
    let (train_pool, test_pool) = NoisePool::load(&cfg.corpus.noise)?.split(cfg.corpus.noise_split);
    let noisy = corrupt_training_set(&items, &train_pool, cfg.seed)?;
    write_mixed(train_noise_dir(cfg), &noisy)?;
    let scenarios = build_test_scenarios(&items, &test_pool, cfg.seed)?;
    for set in &scenarios {
        write_mixed(scenario_dir(cfg, set.name), &set.utterances)?;
    }
    let summary = json!({
        "config_hash": cfg.hash(),
        "utterances": records.len(),
        "noise_split": cfg.corpus.noise_split,
        "train_clips": train_pool.clips().map(|c| c.id.clone()).collect::<Vec<_>>(),
        "test_clips": test_pool.clips().map(|c| c.id.clone()).collect::<Vec<_>>(),
        "scenarios": Scenario::ALL.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
    });
    write_file(
        &cfg.out.join("mixed").join("mix.json"),
        format!("{}\n", serde_json::to_string_pretty(&summary).expect("json")).as_bytes(),
    )?;
    log::info("mix", "done", json!({"utterances": records.len(), "scenarios": scenarios.len()}));
    Ok(())
}

fn training_items(
    cfg: &RunConfig,
    records: &[UtteranceRecord],
    train_ids: &BTreeSet<String>,
    cond: TrainedOn,
) -> Result<Vec<TrainItem>, CliError> {
    let source: Vec<UtteranceRecord> = match cond {
        TrainedOn::Clean => records.to_vec(),
        TrainedOn::Noise => {
            let m = train_noise_dir(cfg).join("manifest.jsonl");
            must_exist(&m, "run `jointspeech mix` first")?;
            load_manifest(&m)?
        }
    };
    let chosen: Vec<UtteranceRecord> = source.into_iter().filter(|r| train_ids.contains(&r.id)).collect();
    if chosen.len() != train_ids.len() {
        return Err(CliError::Usage(format!(
            "{cond} training set has {} of the fold's {} utterances; re-run `jointspeech mix`",
            chosen.len(),
            train_ids.len()
        )));
    }
    Ok(load_audio(&chosen)?
        .into_iter()
        .map(|(r, audio)| TrainItem {
            id: r.id,
            speaker: r.speaker,
            audio,
            transcript: r.transcript,
            emotion: r.emotion,
        })
        .collect())
}

pub fn train_fold(
    cfg: &RunConfig,
    fold: usize,
    arch: Option<Architecture>,
    trained_on: Option<TrainedOn>,
) -> Result<(), CliError> {
    let (records, plan) = load_plan(cfg)?;
    let f = plan.folds.get(fold).ok_or(CliError::FoldRange {
        fold,
        n: plan.folds.len(),
    })?;
    snapshot(cfg)?;
    let train_speakers: Vec<String> = records
        .iter()
        .filter(|r| f.train_ids.contains(&r.id))
        .map(|r| r.speaker.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let archs = arch.map_or(Architecture::ALL.to_vec(), |a| vec![a]);
    let conds = trained_on.map_or(TrainedOn::ALL.to_vec(), |c| vec![c]);
    let fe = frontend(cfg)?;
    for cond in conds {
        let items = training_items(cfg, &records, &f.train_ids, cond)?;
        for &arch in &archs {
            let mut tc = cfg.train.clone();
            tc.architecture = arch;
            let tag = format!("fold{fold}/{arch}_{cond}");
            log::info("train", "start", json!({"model": tag, "utterances": items.len(), "epochs": tc.epochs}));
            let mut history = Vec::new();
            let out = fit(&items, &tc, &cfg.model, fe.clone(), |s, _| {
                let line = json!({"epoch": s.epoch, "l_ser": s.mean_l_ser, "l_asr": s.mean_l_asr, "l_joint": s.mean_l_joint});
                history.extend_from_slice(format!("{line}\n").as_bytes());
                if s.epoch % 25 == 0 || s.epoch + 1 == tc.epochs {
                    log::info(
                        "train",
                        "epoch",
                        json!({"model": tag, "epoch": s.epoch, "l_joint": s.mean_l_joint, "wall_s": s.wall_s}),
                    );
                }
            })?;
            let meta = CheckpointMeta {
                fold: Some(fold),
                test_speaker: Some(f.test_speaker.clone()),
                train_speakers: train_speakers.clone(),
                trained_on: Some(cond),
                epochs: tc.epochs,
                mel: Some(cfg.mel.clone()),
            };
            let path = checkpoint_path(cfg, fold, arch, cond);
            Checkpoint::from_model(&out.model, cfg.hash(), meta).save(&path)?;
            let mut hist = format!("{}\n", json!({"config_hash": cfg.hash()})).into_bytes();
            hist.extend(history);
            write_file(&path.with_extension("history.jsonl"), &hist)?;
            log::info("train", "saved", json!({"model": tag, "checkpoint": path}));
        }
    }
    Ok(())
}

/// Runs one `train --fold k` worker process per fold, at most `jobs` at a time.
pub fn train_all(
    cfg: &RunConfig,
    jobs: usize,
    arch: Option<Architecture>,
    trained_on: Option<TrainedOn>,
) -> Result<(), CliError> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let (_, plan) = load_plan(cfg)?;
    let cfg_path = snapshot(cfg)?;
    let exe = std::env::current_exe().map_err(|e| CliError::io(Path::new("current_exe"), e))?;
    let spawn = |k: usize| -> Result<Child, CliError> {
        let mut cmd = Command::new(&exe);
        cmd.arg("--config").arg(&cfg_path).arg("--out").arg(&cfg.out);
        cmd.arg("train").arg("--fold").arg(k.to_string());
        if let Some(a) = arch {
            cmd.arg("--arch").arg(a.as_str());
        }
        if let Some(c) = trained_on {
            cmd.arg("--trained-on").arg(c.as_str());
        }
        // the snapshot already holds every override
        for (key, _) in std::env::vars_os() {
            if key.to_string_lossy().starts_with("JOINTSPEECH_") {
                cmd.env_remove(key);
            }
        }
        cmd.spawn().map_err(|e| CliError::io(&exe, e))
    };
    let mut pending: VecDeque<usize> = (0..plan.folds.len()).collect();
    let mut running: Vec<(usize, Child)> = Vec::new();
    let mut failed = None;
    while !running.is_empty() || (!pending.is_empty() && failed.is_none()) {
        while running.len() < jobs && failed.is_none() {
            let Some(k) = pending.pop_front() else { break };
            log::info("train", "spawn", json!({"fold": k}));
            running.push((k, spawn(k)?));
        }
        let mut i = 0;
        while i < running.len() {
            let status = running[i].1.try_wait().map_err(|e| CliError::io(&exe, e))?;
            match status {
                Some(st) => {
                    let (k, _) = running.remove(i);
                    if !st.success() && failed.is_none() {
                        failed = Some(CliError::Worker {
                            fold: k,
                            status: st.to_string(),
                        });
                    }
                }
                None => i += 1,
            }
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    failed.map_or(Ok(()), Err)
}

fn load_scenarios(cfg: &RunConfig) -> Result<Vec<ScenarioSet>, CliError> {
    Scenario::ALL
        .into_iter()
        .map(|name| {
            let m = scenario_dir(cfg, name).join("manifest.jsonl");
            must_exist(&m, "run `jointspeech mix` first")?;
            let utterances = load_audio(&load_manifest(&m)?)?
                .into_iter()
                .map(|(record, audio)| MixedUtterance {
                    record,
                    audio,
                    provenance: None,
                })
                .collect();
            Ok(ScenarioSet { name, utterances })
        })
        .collect()
}

fn load_checkpoints(cfg: &RunConfig, plan: &FoldPlan) -> Result<CheckpointSet, CliError> {
    let mut set = CheckpointSet::new();
    let hash = cfg.hash();
    for k in 0..plan.folds.len() {
        for cond in TrainedOn::ALL {
            for arch in Architecture::ALL {
                let path = checkpoint_path(cfg, k, arch, cond);
                if !path.exists() {
                    log::warn("evaluate", "missing_checkpoint", json!({"path": path}));
                    continue;
                }
                let ckpt = Checkpoint::load(&path)?;
                let meta = ckpt.header.meta.clone();
                if ckpt.header.architecture != arch || meta.trained_on != Some(cond) {
                    return Err(CliError::Usage(format!(
                        "{} holds a {}/{:?} model",
                        path.display(),
                        ckpt.header.architecture,
                        meta.trained_on
                    )));
                }
                if meta.mel.as_ref() != Some(&cfg.mel) {
                    return Err(CliError::Config(vec![format!(
                        "mel: {} was trained with a different front end",
                        path.display()
                    )]));
                }
                if ckpt.header.config_hash != hash {
                    log::warn("evaluate", "config_hash_mismatch", json!({"path": path, "checkpoint": ckpt.header.config_hash, "current": hash}));
                }
                set.insert(k, cond, ckpt.into_model()?, meta);
            }
        }
    }
    Ok(set)
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let (_, plan) = load_plan(cfg)?;
    snapshot(cfg)?;
    let scenarios = load_scenarios(cfg)?;
    let checkpoints = load_checkpoints(cfg, &plan)?;
    let fe = frontend(cfg)?;
    let mut report = evaluate_scenarios(&checkpoints, &scenarios, &plan, fe.as_ref())?;
    report.config_hash = Some(cfg.hash());
    let path = cfg.out.join("eval").join("report.json");
    write_file(&path, report.to_json()?.as_bytes())?;
    let missing = report.missing_cells();
    if !missing.is_empty() {
        log::warn("evaluate", "incomplete", json!({"missing": missing}));
    }
    log::info("evaluate", "done", json!({"report": path, "cells": report.cells.len()}));
    Ok(())
}

pub fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let src = cfg.out.join("eval").join("report.json");
    must_exist(&src, "run `jointspeech evaluate` first")?;
    let text = fs::read_to_string(&src).map_err(|e| CliError::io(&src, e))?;
    let report = EvalReport::from_json(&text)?;
    let files = emit_report(&report, cfg.out.join("report"))?;
    log::info("report", "done", json!({"files": files}));
    Ok(())
}

/// Smooth deterministic pseudo-features for the gradient check.
fn probe_features(frames: usize, dim: usize, salt: f64) -> FeatureMatrix {
    FeatureMatrix::from_shape_fn((frames, dim), |(t, d)| {
        (0.37 * (7 * t + 3 * d) as f64 + salt).sin() * 0.8 + 0.1 * ((t * d) as f64 + salt).cos()
    })
}

pub fn gradcheck(cfg: &RunConfig, arch: Option<Architecture>) -> Result<(), CliError> {
    snapshot(cfg)?;
    let batch = vec![
        GradCheckSample {
            features: probe_features(16, 6, 0.0),
            transcript: "ab".into(),
            emotion: Emotion::Happy,
        },
        GradCheckSample {
            features: probe_features(14, 6, 1.3),
            transcript: "b a".into(),
            emotion: Emotion::Angry,
        },
    ];
    let decoded = cfg.train.linguistic_source == LinguisticSource::Decoded;
    let mut seen = HashSet::new();
    let mut failure = None;
    for arch in arch.map_or(Architecture::ALL.to_vec(), |a| vec![a]) {
        if !seen.insert(arch) {
            continue;
        }
        let model = Model::new(arch, ModelConfig::tiny(6), cfg.seed);
        let r = grad_check(&model, &batch, &cfg.train.loss, decoded, GRADCHECK_EPS, GRADCHECK_TOL)?;
        let path = cfg.out.join("gradcheck").join(format!("{arch}.json"));
        let body = format!("{}\n", serde_json::to_string_pretty(&r).expect("json"));
        write_file(&path, body.as_bytes())?;
        log::info(
            "gradcheck",
            "result",
            json!({"arch": arch, "max_rel_err": r.max_rel_err, "passed": r.passed, "params": model.n_params()}),
        );
        if !r.passed && failure.is_none() {
            failure = Some(CliError::GradCheck {
                arch,
                max_rel_err: r.max_rel_err,
                tol: GRADCHECK_TOL,
            });
        }
    }
    failure.map_or(Ok(()), Err)
}
