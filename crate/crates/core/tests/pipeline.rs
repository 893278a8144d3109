//! End-to-end runs on tiny synthetic data: pre-training, fine-tuning and
//! their determinism across execution modes.

use std::collections::BTreeSet;

use mrl3d_core::checkpoint;
use mrl3d_core::data::synthetic::synthetic_dataset;
use mrl3d_core::data::{MoleculePair, SplitScheme};
use mrl3d_core::finetune::{protocol_splits, run_finetune, sample_negatives, train_run, FinetuneConfig};
use mrl3d_core::pretrain::{log_path_for, run_pretraining, PretrainConfig};
use mrl3d_core::selfcheck::tiny_encoder;
use mrl3d_core::task::{Objective, Task};
use mrl3d_core::{Error, Exec};

fn data(n: usize) -> Vec<MoleculePair> {
    synthetic_dataset(12, 6, n, 21, Exec::Sequential).unwrap()
}

fn quick_pretrain() -> PretrainConfig {
    PretrainConfig {
        epochs: 2,
        batch_size: 8,
        n_target_atoms: 2,
        seed: 4,
        ..PretrainConfig::default()
    }
}

fn quick_finetune() -> FinetuneConfig {
    FinetuneConfig {
        max_epochs: 3,
        batch_size: 8,
        repeats: 1,
        seed: 4,
        ..FinetuneConfig::default()
    }
}

#[test]
fn pretraining_writes_checkpoint_and_log() {
    let pairs = data(20);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pre.ckpt");
    let cfg = PretrainConfig {
        checkpoint_every: 1,
        ..quick_pretrain()
    };
    let res = run_pretraining(&cfg, &tiny_encoder(), &pairs, &out, Exec::default()).unwrap();
    assert_eq!(res.epochs.len(), 2);
    assert_eq!(res.steps.len(), 2 * 3);
    let (manifest, params) = checkpoint::load(&out).unwrap();
    assert_eq!(manifest.epoch, 2);
    assert_eq!(manifest.loss_history, res.epochs);
    assert_eq!(params.len(), res.model.params.len());

    let log = std::fs::read_to_string(log_path_for(&out)).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,step,loss_total,loss_cont,loss_force,lr"));
    assert_eq!(lines.count(), res.steps.len());
    for step in &res.steps {
        assert!(step.loss_total.is_finite() && step.loss_force >= 0.0);
        assert!((step.loss_total - step.loss_cont - cfg.alpha * step.loss_force).abs() < 1e-9);
    }
}

#[test]
fn pretraining_is_identical_across_execution_modes() {
    let pairs = data(12);
    let dir = tempfile::tempdir().unwrap();
    let a = run_pretraining(&quick_pretrain(), &tiny_encoder(), &pairs, &dir.path().join("a"), Exec::Sequential).unwrap();
    let b = run_pretraining(&quick_pretrain(), &tiny_encoder(), &pairs, &dir.path().join("b"), Exec::Parallel).unwrap();
    assert_eq!(a.steps, b.steps);
    for ((_, _, x), (_, _, y)) in a.model.params.iter().zip(b.model.params.iter()) {
        assert_eq!(x, y);
    }
    assert_eq!(
        checkpoint::file_sha256(&dir.path().join("a")).unwrap(),
        checkpoint::file_sha256(&dir.path().join("b")).unwrap()
    );
}

#[test]
fn finetune_reports_are_reproducible_and_never_train_on_test() {
    let pairs = data(40);
    let runs = protocol_splits(&pairs, SplitScheme::Molecule, 2, 8).unwrap();
    let cfg = FinetuneConfig {
        repeats: 2,
        ..quick_finetune()
    };
    let a = run_finetune(&cfg, &tiny_encoder(), &pairs, &runs, None, Exec::Sequential).unwrap();
    let b = run_finetune(&cfg, &tiny_encoder(), &pairs, &runs, None, Exec::Parallel).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.runs.len(), 2);
    for (run, split) in a.runs.iter().zip(&runs) {
        let test: BTreeSet<usize> = split.split.test.iter().copied().collect();
        assert!(run.trained_indices.is_disjoint(&test));
        assert_eq!(run.trained_indices, split.split.train.iter().copied().collect());
        assert!(run.encoder_from_checkpoint.is_none());
    }
    let json: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(json["metric"], "rmse");
    assert_eq!(json["scheme"], "molecule");
    let mean = a.runs.iter().map(|r| r.test_metric).sum::<f64>() / 2.0;
    assert!((a.mean - mean).abs() < 1e-4);
}

#[test]
fn pretrained_encoder_is_loaded_and_head_is_fresh() {
    let pairs = data(30);
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("pre.ckpt");
    run_pretraining(&quick_pretrain(), &tiny_encoder(), &pairs, &ckpt, Exec::default()).unwrap();
    let runs = protocol_splits(&pairs, SplitScheme::Kfold5, 1, 3).unwrap();
    let report = run_finetune(&quick_finetune(), &tiny_encoder(), &pairs, &runs[..1], Some(&ckpt), Exec::default()).unwrap();
    let info = report.checkpoint.unwrap();
    assert_eq!(info.sha256, checkpoint::file_sha256(&ckpt).unwrap());
    assert_eq!(report.runs[0].encoder_from_checkpoint, Some(true));
}

#[test]
fn classification_with_sampled_negatives() {
    let mut pairs = data(30);
    for p in &mut pairs {
        p.label = Some(1.0);
    }
    let negatives = sample_negatives(&pairs, 5).unwrap();
    assert_eq!(negatives.len(), pairs.len());
    let key = |p: &MoleculePair| {
        let (a, b) = (p.larger.id().to_string(), p.smaller.id().to_string());
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    };
    let positive: BTreeSet<_> = pairs.iter().map(key).collect();
    let negative: BTreeSet<_> = negatives.iter().map(key).collect();
    assert!(positive.is_disjoint(&negative));
    assert_eq!(negative.len(), negatives.len());

    pairs.extend(negatives);
    let cfg = FinetuneConfig {
        task: Task::Ddi,
        ..quick_finetune()
    };
    assert_eq!(cfg.objective(), Objective::BinaryClassification);
    let runs = protocol_splits(&pairs, SplitScheme::Kfold5, 1, 2).unwrap();
    let report = run_finetune(&cfg, &tiny_encoder(), &pairs, &runs[..2], None, Exec::default()).unwrap();
    assert_eq!(report.metric, "auroc");
    for r in &report.runs {
        assert!((0.0..=1.0).contains(&r.test_metric));
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut pairs = data(20);
    let runs = protocol_splits(&pairs, SplitScheme::Kfold5, 1, 1).unwrap();
    let ddi = FinetuneConfig {
        task: Task::Ddi,
        ..quick_finetune()
    };
    assert!(matches!(
        run_finetune(&ddi, &tiny_encoder(), &pairs, &runs, None, Exec::default()),
        Err(Error::Config { .. })
    ));
    let mut empty = runs[0].clone();
    empty.split.valid.clear();
    assert!(train_run(&quick_finetune(), &tiny_encoder(), &pairs, &empty, None, Exec::default()).is_err());
    pairs[3].label = None;
    assert!(matches!(
        run_finetune(&quick_finetune(), &tiny_encoder(), &pairs, &runs, None, Exec::default()),
        Err(Error::Dataset(_))
    ));
}
