mod common;

use std::fs;

use common::*;
use nertag::exec::Execution;
use nertag::tagging::Dialect;
use nertag::train::{
    detect_failed_trial, train_with, FailureMetric, FailureRule, RunConfig, TrainInputs, TrainStatus, TrialOutcome,
    FINAL_DIR,
};

fn inputs(train: Vec<(Vec<String>, Vec<nertag::tagging::EntitySpan>)>, dev: bool) -> TrainInputs {
    TrainInputs {
        dev: dev.then(|| to_corpus(&synthetic_sentences(20, 99, 9), Dialect::Bio2, "dev")),
        train: to_corpus(&train, Dialect::Bio2, "train"),
        embeddings: None,
        lexicons: Vec::new(),
    }
}

fn config(epochs: usize) -> RunConfig {
    RunConfig {
        caps: true,
        lstm_size: 50,
        dropout: 0.5,
        learning_rate: 0.01,
        epochs,
        seed: 3,
        checkpoint_every: 0,
        ..RunConfig::default()
    }
}

/// Multi-token entities take longer than single-token ones at this
/// learning rate, but are still memorized.
#[test]
fn multi_token_corpus_is_memorized() {
    let out = train_with(
        &config(60),
        inputs(synthetic_sentences(50, 41, 9), false),
        Execution::default(),
    )
    .unwrap();
    let f1 = out.log.last().unwrap().train_f1.unwrap();
    assert!(f1 >= 99.0, "final train F1 {f1}");
}

#[test]
fn zero_epochs_writes_initial_model_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        model_dir: Some(tmp.path().to_path_buf()),
        ..config(0)
    };
    let out = train_with(&cfg, inputs(synthetic_sentences(10, 1, 9), true), Execution::default()).unwrap();
    assert!(out.log.records.is_empty());
    assert!(tmp.path().join(FINAL_DIR).join("params.nstp").exists());
    assert!(!tmp.path().join("checkpoints").exists());
}

#[test]
fn failure_rule_reads_the_final_epoch() {
    let out = train_with(
        &config(2),
        inputs(synthetic_sentences(20, 2, 9), true),
        Execution::default(),
    )
    .unwrap();
    let dev = out.log.last().unwrap().dev_f1.unwrap();
    let rule = |threshold| FailureRule {
        metric: FailureMetric::DevF1,
        threshold,
    };
    assert_eq!(detect_failed_trial(&out.log, &rule(0.0)).unwrap(), TrialOutcome::Pass);
    if dev < 100.0 {
        assert_eq!(
            detect_failed_trial(&out.log, &rule(dev + 0.01)).unwrap(),
            TrialOutcome::Fail
        );
    }
    let no_dev = train_with(
        &config(1),
        inputs(synthetic_sentences(20, 2, 9), false),
        Execution::default(),
    )
    .unwrap();
    assert!(detect_failed_trial(&no_dev.log, &rule(50.0)).is_err());
}

#[test]
fn divergence_stops_training_with_finite_parameters() {
    let cfg = RunConfig {
        learning_rate: 1e300,
        dropout: 0.0,
        ..config(5)
    };
    let out = train_with(&cfg, inputs(synthetic_sentences(20, 3, 9), false), Execution::default()).unwrap();
    assert!(
        matches!(out.log.status, TrainStatus::Diverged { .. }),
        "{:?}",
        out.log.status
    );
    assert!(out.model.params.values_finite());
}

#[test]
fn concurrent_runs_in_one_directory_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("train.lock"), "").unwrap();
    let cfg = RunConfig {
        model_dir: Some(tmp.path().to_path_buf()),
        ..config(1)
    };
    let err = train_with(&cfg, inputs(synthetic_sentences(5, 4, 9), false), Execution::default()).unwrap_err();
    assert!(err.to_string().contains("train.lock"), "{err}");
}

#[test]
fn log_and_best_pointer_are_written() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        model_dir: Some(tmp.path().to_path_buf()),
        ..config(2)
    };
    train_with(&cfg, inputs(synthetic_sentences(20, 5, 9), true), Execution::default()).unwrap();
    let log: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("train_log.json")).unwrap()).unwrap();
    assert_eq!(log["records"].as_array().unwrap().len(), 2);
    let best = fs::read_to_string(tmp.path().join("best")).unwrap();
    assert!(tmp.path().join(best.trim()).join("model.json").exists());
    assert!(!tmp.path().join("train.lock").exists());
}
