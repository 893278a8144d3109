use std::path::Path;
use std::process::{Command, Output};

const PAIRS: &str = "smiles_1,smiles_2,label
c1ccccc1CCO,CO,1.2
CC(=O)Nc1ccccc1,ClCCl,0.4
OC(=O)CCCN,CC#N,-0.3
CCCCCCO,CS(C)=O,2.1
c1ccncc1C,CCO,0.9
CC(C)Cc1ccccc1,O,-1.4
NCCc1ccccc1,CCCl,0.1
OCC1CCCCC1,CC(C)=O,1.7
c1ccc2ccccc2c1,CO,-0.8
CCOC(=O)C,CN(C)C=O,0.5
";

const TINY: &str = "seed = 3
[encoder]
hidden_dim = 8
projection_dim = 8
[encoder.schnet]
hidden = 12
filters = 12
interactions = 2
gaussians = 16
[pretrain]
epochs = 2
batch_size = 4
n_target_atoms = 2
[finetune]
max_epochs = 2
batch_size = 4
repeats = 1
";

fn mrl3d(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrl3d"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("MRL_CACHE_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pairs.csv"), PAIRS).unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn help_lists_config_keys_and_defaults() {
    let dir = workdir();
    let out = mrl3d(dir.path(), &["pretrain", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for key in ["pretrain.alpha = 0.1", "pretrain.tau = 0.1", "pretrain.n_target_atoms = 5", "MRL_CACHE_DIR", "--sequential"] {
        assert!(text.contains(key), "{key} missing from help");
    }
    let out = mrl3d(dir.path(), &["finetune", "--help"]);
    assert!(stdout(&out).contains("finetune.early_stop_patience = 50"));
}

#[test]
fn usage_and_validation_errors_exit_with_one() {
    let dir = workdir();
    let out = mrl3d(dir.path(), &["pretrain", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));

    let out = mrl3d(dir.path(), &["pretrain", "--data", "pairs.csv", "--alpha", "-1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("pretrain.alpha"), "{}", stderr(&out));

    std::fs::write(dir.path().join("typo.toml"), "[pretrain]\nalpah = 0.5\n").unwrap();
    let out = mrl3d(dir.path(), &["pretrain", "--config", "typo.toml", "--data", "pairs.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("alpah"), "{}", stderr(&out));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = workdir();
    let out = mrl3d(dir.path(), &["pretrain", "--data", "missing.csv", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!stderr(&out).is_empty());
}

#[test]
fn construct_env_writes_geometry_and_sidecar() {
    let dir = workdir();
    let out = mrl3d(dir.path(), &["construct-env", "--pair", "pairs.csv", "--n", "3", "--out", "env1", "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let xyz = std::fs::read_to_string(dir.path().join("env1.xyz")).unwrap();
    let count: usize = xyz.lines().next().unwrap().trim().parse().unwrap();
    assert_eq!(xyz.lines().count(), count + 2);
    let sidecar: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("env1.json")).unwrap()).unwrap();
    let (n1, n2) = (sidecar["n_larger"].as_u64().unwrap(), sidecar["n_smaller"].as_u64().unwrap());
    assert_eq!(count as u64, n1 + 3 * n2);

    let again = mrl3d(dir.path(), &["construct-env", "--pair", "pairs.csv", "--n", "3", "--out", "env2", "--seed", "5"]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(xyz, std::fs::read_to_string(dir.path().join("env2.xyz")).unwrap());
}

#[test]
fn pretrain_then_finetune_end_to_end() {
    let dir = workdir();
    let out = mrl3d(dir.path(), &["pretrain", "--config", "tiny.toml", "--data", "pairs.csv", "--out", "pre.ckpt"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(dir.path().join("pre.ckpt").exists());
    let log = std::fs::read_to_string(dir.path().join("pre.ckpt.loss.csv")).unwrap();
    assert!(log.starts_with("epoch,step,loss_total,loss_cont,loss_force,lr"));

    let args = ["finetune", "--config", "tiny.toml", "--data", "pairs.csv", "--checkpoint", "pre.ckpt", "--task", "solvation"];
    let a = mrl3d(dir.path(), &[&args[..], &["--out", "a.json"]].concat());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let b = mrl3d(dir.path(), &[&args[..], &["--out", "b.json", "--sequential"]].concat());
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    let report_a = std::fs::read_to_string(dir.path().join("a.json")).unwrap();
    assert_eq!(report_a, std::fs::read_to_string(dir.path().join("b.json")).unwrap());

    let report: serde_json::Value = serde_json::from_str(&report_a).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 5);
    assert_eq!(report["metric"], "rmse");
    assert_eq!(report["checkpoint"]["sha256"].as_str().unwrap().len(), 64);
    assert!(report["runs"].as_array().unwrap().iter().all(|r| r["encoder_from_checkpoint"] == true));
}

#[test]
fn evaluate_scores_prediction_files() {
    let dir = workdir();
    std::fs::write(dir.path().join("p.csv"), "prediction,label\n1.0,0.0\n2.0,2.0\n").unwrap();
    let out = mrl3d(dir.path(), &["evaluate", "--preds", "p.csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), format!("rmse {:.4}", 0.5f64.sqrt()));

    std::fs::write(dir.path().join("c.csv"), "prediction,label\n0.9,1\n0.2,0\n0.4,1\n0.6,0\n").unwrap();
    let out = mrl3d(dir.path(), &["evaluate", "--preds", "c.csv", "--task", "ddi"]);
    assert_eq!(stdout(&out).trim(), "auroc 0.7500");

    std::fs::write(dir.path().join("one.csv"), "prediction,label\n0.9,1\n0.2,1\n").unwrap();
    let out = mrl3d(dir.path(), &["evaluate", "--preds", "one.csv", "--task", "ddi"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selfcheck_passes() {
    let dir = workdir();
    let out = mrl3d(dir.path(), &["selfcheck", "--scale", "0.05"]);
    assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), stderr(&out));
    let lines: Vec<String> = stdout(&out).lines().map(String::from).collect();
    assert!(lines.len() >= 6);
    assert!(lines.iter().all(|l| l.starts_with("PASS")));
}
