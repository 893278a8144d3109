//! Downstream property heads, metrics and the fine-tuning protocol.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::data::{make_splits, MoleculePair, SplitScheme, SplitSpec};
use crate::encoders::{EncoderConfig, Model, ENCODER_PREFIX};
use crate::nn::{Adam, GradBuffer, ParamStore, Session};
use crate::seeding::{self, stream};
use crate::task::{Objective, Task};
use crate::{Error, Exec, Mat, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Dataset family; selects the default objective and learning rate.
    pub task: Task,
    pub objective: Option<Objective>,
    pub lr: Option<f64>,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without validation improvement.
    pub early_stop_patience: usize,
    pub batch_size: usize,
    /// Train on `ln(label)` and report on the original scale.
    pub log_labels: bool,
    /// Independent repetitions of the split protocol.
    pub repeats: usize,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            task: Task::Chromophore,
            objective: None,
            lr: None,
            plateau_patience: 20,
            plateau_factor: 0.1,
            max_epochs: 100,
            early_stop_patience: 50,
            batch_size: 32,
            log_labels: false,
            repeats: 3,
            seed: 0,
            checkpoint: None,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::config(
                "finetune.plateau_factor",
                format!("must lie in (0, 1), got {}", self.plateau_factor),
            ));
        }
        if self.plateau_patience == 0 {
            return Err(Error::config("finetune.plateau_patience", "must be at least 1"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::config("finetune.early_stop_patience", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("finetune.max_epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("finetune.batch_size", "must be at least 1"));
        }
        if self.repeats == 0 {
            return Err(Error::config("finetune.repeats", "must be at least 1"));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config("finetune.lr", format!("must be > 0, got {lr}")));
            }
        }
        if self.log_labels && self.objective() == Objective::BinaryClassification {
            return Err(Error::config("finetune.log_labels", "only applies to regression"));
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        self.objective.unwrap_or_else(|| self.task.objective())
    }

    pub fn effective_lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.task.finetune_lr())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Property prediction for one pair: the head output for regression, or its
/// sigmoid for classification.
pub fn predict_property(model: &Model, pair: &MoleculePair, objective: Objective) -> Result<f64> {
    let mut s = Session::new(&model.params);
    let v = model.pair_forward(&mut s, &pair.larger.molecule, &pair.smaller.molecule)?;
    let out = model.head_forward(&mut s, v.z_pair);
    let raw = s.value(out).get(0, 0);
    Ok(match objective {
        Objective::Regression => raw,
        Objective::BinaryClassification => sigmoid(raw),
    })
}

pub fn rmse(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let mse = preds.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / preds.len() as f64;
    Ok(mse.sqrt())
}

/// Area under the ROC curve as the Mann-Whitney statistic with half credit
/// for ties.
pub fn auroc(preds: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(preds, labels)?;
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Contract("AUROC labels must be 0 or 1".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].total_cmp(&preds[b]));
    // Average ranks over tie groups.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && preds[order[j + 1]] == preds[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

fn check_lengths(preds: &[f64], labels: &[f64]) -> Result<()> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Contract(format!(
            "metric needs equal non-empty inputs, got {} predictions and {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// RMSE for regression, AUROC for classification.
pub fn evaluate(preds: &[f64], labels: &[f64], objective: Objective) -> Result<f64> {
    match objective {
        Objective::Regression => rmse(preds, labels),
        Objective::BinaryClassification => auroc(preds, labels),
    }
}

pub fn higher_is_better(objective: Objective) -> bool {
    objective == Objective::BinaryClassification
}

/// Streaming reduce-on-plateau state.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub lr: f64,
    pub best: Option<f64>,
    pub stale: usize,
    patience: usize,
    factor: f64,
    maximize: bool,
}

impl Plateau {
    pub fn new(lr: f64, patience: usize, factor: f64, maximize: bool) -> Self {
        Plateau {
            lr,
            best: None,
            stale: 0,
            patience,
            factor,
            maximize,
        }
    }

    /// Records one validation value and returns whether it improved on the
    /// best so far.
    pub fn observe(&mut self, value: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(b) if self.maximize => value > b,
            Some(b) => value < b,
        };
        if improved {
            self.best = Some(value);
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.factor;
                self.stale = 0;
            }
        }
        improved
    }
}

/// Learning rate after replaying `history` from `lr`. The first entry sets
/// the baseline, so a reduction needs `patience` further stagnant epochs.
pub fn plateau_schedule(history: &[f64], lr: f64, patience: usize, factor: f64, maximize: bool) -> f64 {
    let mut p = Plateau::new(lr, patience, factor, maximize);
    for &v in history {
        p.observe(v);
    }
    p.lr
}

/// Adds one negative per positive pair, drawn from molecule pairs that are
/// not positives. Negatives take the ids of the pooled molecules.
pub fn sample_negatives(positives: &[MoleculePair], seed: u64) -> Result<Vec<MoleculePair>> {
    let mut pool: Vec<&crate::data::Conformer3D> = Vec::new();
    let mut seen = HashSet::new();
    for p in positives {
        for c in [&p.larger, &p.smaller] {
            if seen.insert(c.id()) {
                pool.push(c);
            }
        }
    }
    let key = |a: &str, b: &str| if a <= b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
    let mut taken: HashSet<(String, String)> = positives.iter().map(|p| key(p.larger.id(), p.smaller.id())).collect();
    let free = (pool.len() * pool.len().saturating_sub(1) / 2).saturating_sub(taken.len());
    if free < positives.len() {
        return Err(Error::Dataset(format!(
            "only {free} non-positive pairs available for {} negatives",
            positives.len()
        )));
    }
    let mut rng = seeding::rng_from(&[seed, stream::NEGATIVES]);
    let task = positives.first().map(|p| p.task_id.clone()).unwrap_or_default();
    let mut out = Vec::with_capacity(positives.len());
    while out.len() < positives.len() {
        let i = rng.gen_range(0..pool.len());
        let j = rng.gen_range(0..pool.len());
        if i == j || !taken.insert(key(pool[i].id(), pool[j].id())) {
            continue;
        }
        out.push(MoleculePair::new(pool[i].clone(), pool[j].clone(), Some(0.0), task.clone()));
    }
    Ok(out)
}

/// Split of one run together with its repeat number.
#[derive(Clone, Debug)]
pub struct RunSplit {
    pub repeat: usize,
    pub split: SplitSpec,
}

/// Splits for `repeats` independent repetitions of `scheme`.
pub fn protocol_splits(dataset: &[MoleculePair], scheme: SplitScheme, repeats: usize, seed: u64) -> Result<Vec<RunSplit>> {
    let mut out = Vec::new();
    for repeat in 0..repeats {
        let s = seeding::derive_seed(&[seed, stream::SPLIT, repeat as u64]);
        for split in make_splits(dataset, scheme, s)? {
            out.push(RunSplit { repeat, split });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub repeat: usize,
    pub fold: Option<usize>,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub final_lr: f64,
    pub valid_metric: f64,
    pub test_metric: f64,
    /// Whether every encoder parameter equalled the checkpoint before the
    /// first update. Absent for runs from scratch.
    pub encoder_from_checkpoint: Option<bool>,
    #[serde(skip)]
    pub trained_indices: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub objective: Objective,
    pub metric: String,
    pub scheme: SplitScheme,
    pub runs: Vec<RunResult>,
    pub mean: f64,
    pub std: f64,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub checkpoint: Option<CheckpointInfo>,
    pub encoder: EncoderConfig,
    pub version: String,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Batch loss on a tape: mean squared error, or mean binary cross-entropy
/// on the logit.
fn batch_gradients(
    model: &Model,
    pairs: &[(&MoleculePair, f64)],
    objective: Objective,
    exec: Exec,
) -> Result<(f64, GradBuffer)> {
    let k = 1.0 / pairs.len() as f64;
    let parts = exec.map(pairs, |_, &(pair, y)| -> Result<(f64, GradBuffer)> {
        let mut s = Session::new(&model.params);
        let v = model.pair_forward(&mut s, &pair.larger.molecule, &pair.smaller.molecule)?;
        let out = model.head_forward(&mut s, v.z_pair);
        let x = s.value(out).get(0, 0);
        let (loss, seed) = match objective {
            Objective::Regression => ((x - y) * (x - y), 2.0 * (x - y)),
            Objective::BinaryClassification => {
                let sp = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
                (sp - y * x, sigmoid(x) - y)
            }
        };
        let grads = s.tape.backward(&[(out, Mat::filled(1, 1, seed * k))]);
        let mut buf = GradBuffer::new(&model.params);
        s.collect(&grads, &mut buf);
        Ok((loss * k, buf))
    });
    let mut total = GradBuffer::new(&model.params);
    let mut loss = 0.0;
    for p in parts {
        let (l, g) = p?;
        loss += l;
        total.merge(&g);
    }
    if !loss.is_finite() || !total.is_finite() {
        return Err(Error::Numeric("non-finite fine-tuning loss".into()));
    }
    Ok((loss, total))
}

fn metric_on(
    model: &Model,
    dataset: &[MoleculePair],
    idx: &[usize],
    cfg: &FinetuneConfig,
    exec: Exec,
) -> Result<f64> {
    let objective = cfg.objective();
    let preds = exec.map(idx, |_, &i| predict_property(model, &dataset[i], objective));
    let mut preds = preds.into_iter().collect::<Result<Vec<_>>>()?;
    if cfg.log_labels {
        preds.iter_mut().for_each(|p| *p = p.exp());
    }
    let labels: Vec<f64> = idx.iter().map(|&i| dataset[i].label.expect("labels checked")).collect();
    evaluate(&preds, &labels, objective)
}

/// Serves shuffled training batches and records every index it hands out.
#[derive(Debug)]
pub struct TrainLoader<'a> {
    indices: &'a [usize],
    pub served: BTreeSet<usize>,
}

impl<'a> TrainLoader<'a> {
    pub fn new(indices: &'a [usize]) -> Self {
        TrainLoader {
            indices,
            served: BTreeSet::new(),
        }
    }

    pub fn epoch<R: Rng>(&mut self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut order = self.indices.to_vec();
        order.shuffle(rng);
        self.served.extend(order.iter().copied());
        order.chunks(batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Initial model of a run: fresh parameters, with the encoder taken from
/// the checkpoint when one is given.
fn initial_model(encoder: &EncoderConfig, pretrained: Option<&ParamStore>, seed: u64) -> Result<(Model, Option<bool>)> {
    let mut model = Model::new(encoder.clone(), seed)?;
    let Some(ckpt) = pretrained else {
        return Ok((model, None));
    };
    model.params.load_prefix(ckpt, ENCODER_PREFIX)?;
    let matches = model
        .params
        .iter()
        .filter(|(_, name, _)| name.starts_with(ENCODER_PREFIX))
        .all(|(_, name, value)| ckpt.id(name).map(|id| ckpt.get(id) == value).unwrap_or(false));
    Ok((model, Some(matches)))
}

/// Trains one model on `split` with early stopping and plateau decay and
/// scores the best validation state on the test set.
pub fn train_run(
    cfg: &FinetuneConfig,
    encoder: &EncoderConfig,
    dataset: &[MoleculePair],
    run: &RunSplit,
    pretrained: Option<&ParamStore>,
    exec: Exec,
) -> Result<RunResult> {
    let split = &run.split;
    if split.train.is_empty() || split.valid.is_empty() || split.test.is_empty() {
        return Err(Error::Split(format!(
            "repeat {} fold {:?} has an empty train, validation or test list",
            run.repeat, split.fold_index
        )));
    }
    let fold = split.fold_index.unwrap_or(0) as u64;
    let run_seed = seeding::derive_seed(&[cfg.seed, stream::FINETUNE, run.repeat as u64, fold]);
    let (mut model, from_ckpt) = initial_model(encoder, pretrained, run_seed)?;
    let objective = cfg.objective();
    let maximize = higher_is_better(objective);
    let mut plateau = Plateau::new(cfg.effective_lr(), cfg.plateau_patience, cfg.plateau_factor, maximize);
    let mut adam = Adam::new(&model.params, plateau.lr);
    let mut loader = TrainLoader::new(&split.train);
    let mut rng = seeding::rng_from(&[run_seed, stream::SHUFFLE]);
    let target = |i: usize| {
        let y = dataset[i].label.expect("labels checked");
        if cfg.log_labels {
            y.ln()
        } else {
            y
        }
    };

    let mut best_params = model.params.clone();
    let (mut best_epoch, mut since_best, mut epochs_run) = (0, 0, 0);
    for epoch in 0..cfg.max_epochs {
        for batch in loader.epoch(cfg.batch_size, &mut rng) {
            let pairs: Vec<(&MoleculePair, f64)> = batch.iter().map(|&i| (&dataset[i], target(i))).collect();
            let (_, grads) = batch_gradients(&model, &pairs, objective, exec)?;
            adam.lr = plateau.lr;
            adam.step(&mut model.params, &grads);
        }
        epochs_run = epoch + 1;
        let valid = metric_on(&model, dataset, &split.valid, cfg, exec)?;
        if plateau.observe(valid) {
            best_params = model.params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    if let Some(&leak) = loader.served.intersection(&split.test.iter().copied().collect()).next() {
        return Err(Error::Contract(format!("test pair {leak} was used for training")));
    }
    model.params = best_params;
    let test = metric_on(&model, dataset, &split.test, cfg, exec)?;
    Ok(RunResult {
        repeat: run.repeat,
        fold: split.fold_index,
        n_train: split.train.len(),
        n_valid: split.valid.len(),
        n_test: split.test.len(),
        best_epoch,
        epochs_run,
        final_lr: plateau.lr,
        valid_metric: round4(plateau.best.unwrap_or(f64::NAN)),
        test_metric: round4(test),
        encoder_from_checkpoint: from_ckpt,
        trained_indices: loader.served,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every split, fine-tuning either from scratch or from the encoder
/// of a pre-training checkpoint, and assembles the report.
pub fn run_finetune(
    cfg: &FinetuneConfig,
    encoder: &EncoderConfig,
    dataset: &[MoleculePair],
    runs: &[RunSplit],
    checkpoint: Option<&Path>,
    exec: Exec,
) -> Result<Report> {
    cfg.validate()?;
    if runs.is_empty() {
        return Err(Error::Split("no splits to run".into()));
    }
    if let Some(i) = dataset.iter().position(|p| p.label.is_none()) {
        return Err(Error::Dataset(format!("pair {i} has no label")));
    }
    let objective = cfg.objective();
    for p in dataset {
        let y = p.label.unwrap();
        if objective == Objective::BinaryClassification && y != 0.0 && y != 1.0 {
            return Err(Error::config("finetune.objective", format!("classification needs 0/1 labels, found {y}")));
        }
        if cfg.log_labels && !(y > 0.0) {
            return Err(Error::Dataset(format!("log-normalised labels must be positive, found {y}")));
        }
    }
    let (encoder, pretrained, ckpt_info) = match checkpoint {
        Some(path) => {
            let (manifest, params) = checkpoint::load(path)?;
            let info = CheckpointInfo {
                path: path.display().to_string(),
                sha256: checkpoint::file_sha256(path)?,
            };
            (manifest.encoder, Some(params), Some(info))
        }
        None => (encoder.clone(), None, None),
    };
    let mut results = Vec::with_capacity(runs.len());
    for run in runs {
        let r = train_run(cfg, &encoder, dataset, run, pretrained.as_ref(), exec)?;
        log::info!(
            "repeat {} fold {:?}: valid {:.4} test {:.4} after {} epochs",
            r.repeat,
            r.fold,
            r.valid_metric,
            r.test_metric,
            r.epochs_run
        );
        results.push(r);
    }
    let tests: Vec<f64> = results.iter().map(|r| r.test_metric).collect();
    let (mean, std) = mean_std(&tests);
    let config = serde_json::to_value(cfg).expect("config serialises");
    let config_sha256 = hex::encode(Sha256::digest(config.to_string().as_bytes()));
    Ok(Report {
        objective,
        metric: match objective {
            Objective::Regression => "rmse".into(),
            Objective::BinaryClassification => "auroc".into(),
        },
        scheme: runs[0].split.scheme,
        runs: results,
        mean: round4(mean),
        std: round4(std),
        config,
        config_sha256,
        checkpoint: ckpt_info,
        encoder,
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_auroc(preds: &[f64], labels: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi == 1.0 && yj == 0.0 {
                    den += 1.0;
                    num += match preds[i].partial_cmp(&preds[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        let p = [0.1, 0.4, 0.35, 0.8];
        let y = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(auroc(&p, &y).unwrap(), 0.75);
        assert_eq!(brute_auroc(&p, &y), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[1.0, 1.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auroc_matches_pairwise_oracle_with_ties() {
        let mut rng = seeding::rng_from(&[11]);
        for n in 2..=50 {
            let preds: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..6) as f64) / 5.0).collect();
            let mut labels: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
            labels[0] = 0.0;
            labels[1] = 1.0;
            assert_eq!(auroc(&preds, &labels).unwrap(), brute_auroc(&preds, &labels));
        }
    }

    #[test]
    fn plateau_examples() {
        let flat = vec![1.0; 21];
        assert!((plateau_schedule(&flat, 0.005, 20, 0.1, false) - 0.0005).abs() < 1e-15);
        assert_eq!(plateau_schedule(&flat[..20], 0.005, 20, 0.1, false), 0.005);
        let mut recovering = vec![1.0; 20];
        recovering.push(0.5);
        let mut p = Plateau::new(0.005, 20, 0.1, false);
        for &v in &recovering {
            p.observe(v);
        }
        assert_eq!((p.lr, p.stale), (0.005, 0));
        let long = vec![1.0; 41];
        assert!((plateau_schedule(&long, 0.005, 20, 0.1, false) - 0.00005).abs() < 1e-15);
    }

    #[test]
    fn classification_probabilities_are_in_range() {
        for x in [-800.0, -3.0, 0.0, 2.5, 900.0] {
            let p = sigmoid(x);
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn invalid_config_names_field() {
        let cfg = FinetuneConfig {
            plateau_factor: 1.0,
            ..FinetuneConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "finetune.plateau_factor"));
    }
}
