//! Contrastive and force objectives and the joint pre-training loop.
//!
//! A step runs in three stages so that only one autodiff tape per worker is
//! alive at a time. The 2D and 3D embeddings of every pair are computed
//! first, then the contrastive loss and its gradient with respect to those
//! embeddings, and finally each pair is re-encoded and back-propagated from
//! its embedding gradients plus its weighted force loss.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, EpochLoss, Manifest};
use crate::data::MoleculePair;
use crate::encoders::{EncoderConfig, Model};
use crate::geometry::{build_virtual_geometry_replicated, VirtualGeometry};
use crate::nn::{Adam, GradBuffer, Session};
use crate::seeding::{self, stream};
use crate::tape::{Tape, Var};
use crate::task::Task;
use crate::{Error, Exec, Mat, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub task: Task,
    /// Target atoms per geometry, capped by the larger molecule's size.
    pub n_target_atoms: usize,
    pub replicas_per_atom: usize,
    pub alpha: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate; the task default applies when unset.
    pub lr: Option<f64>,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many epochs (0 = only at
    /// the end).
    pub checkpoint_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            task: Task::Chromophore,
            n_target_atoms: 5,
            replicas_per_atom: 1,
            alpha: 0.1,
            tau: 0.1,
            batch_size: 32,
            epochs: 100,
            lr: None,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("pretrain.alpha", format!("must be >= 0, got {}", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("pretrain.tau", format!("must be > 0, got {}", self.tau)));
        }
        if self.n_target_atoms == 0 {
            return Err(Error::config("pretrain.n_target_atoms", "must be at least 1"));
        }
        if self.replicas_per_atom == 0 {
            return Err(Error::config("pretrain.replicas_per_atom", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("pretrain.batch_size", "must be at least 1"));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config("pretrain.lr", format!("must be > 0, got {lr}")));
            }
        }
        Ok(())
    }

    pub fn effective_lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.task.pretrain_lr())
    }
}

fn check_finite(name: &str, m: &Mat) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{name} contains non-finite values")))
    }
}

/// Records the symmetric NT-Xent loss on a tape.
pub fn ntxent_on_tape(t: &mut Tape, z2d: Var, z3d: Var, tau: f64) -> Var {
    let b = t.value(z2d).rows();
    let a = t.normalize_rows(z2d);
    let c = t.normalize_rows(z3d);
    let sim = t.matmul_nt(a, c);
    let logits = t.scale(sim, 1.0 / tau);
    let row_ls = t.log_softmax_rows(logits);
    let logits_t = t.transpose(logits);
    let col_ls = t.log_softmax_rows(logits_t);
    let eye = t.leaf(Mat::identity(b));
    let both = t.add(row_ls, col_ls);
    let diag = t.mul(both, eye);
    let total = t.sum_all(diag);
    t.scale(total, -1.0 / b as f64)
}

/// Symmetric NT-Xent over cosine similarities of paired rows.
pub fn ntxent_loss(z2d: &Mat, z3d: &Mat, tau: f64) -> Result<f64> {
    Ok(ntxent_with_grad(z2d, z3d, tau)?.0)
}

/// NT-Xent value with its gradients with respect to both embedding sets.
pub fn ntxent_with_grad(z2d: &Mat, z3d: &Mat, tau: f64) -> Result<(f64, Mat, Mat)> {
    if z2d.shape() != z3d.shape() || z2d.rows() == 0 {
        return Err(Error::Contract(format!(
            "ntxent_loss needs two equal non-empty shapes, got {:?} and {:?}",
            z2d.shape(),
            z3d.shape()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::config("tau", "must be > 0"));
    }
    check_finite("2D embeddings", z2d)?;
    check_finite("3D embeddings", z3d)?;
    let mut t = Tape::new();
    let a = t.leaf(z2d.clone());
    let b = t.leaf(z3d.clone());
    let loss = ntxent_on_tape(&mut t, a, b, tau);
    let value = t.value(loss).get(0, 0);
    let mut g = t.backward_scalar(loss);
    Ok((value, g.take(a).unwrap(), g.take(b).unwrap()))
}

/// Mean squared L2 deviation over all replica atoms.
pub fn force_loss(fhat: &[Mat], fstar: &[Mat]) -> Result<f64> {
    if fhat.len() != fstar.len() || fhat.iter().zip(fstar).any(|(a, b)| a.shape() != b.shape() || a.cols() != 3) {
        return Err(Error::Contract("force_loss needs matching n×N2×3 inputs".into()));
    }
    let rows: usize = fhat.iter().map(Mat::rows).sum();
    if rows == 0 {
        return Ok(0.0);
    }
    let total: f64 = fhat
        .iter()
        .zip(fstar)
        .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    Ok(total / rows as f64)
}

fn stacked_targets(vg: &VirtualGeometry) -> Mat {
    Mat::vcat(&vg.pseudo_forces.iter().collect::<Vec<_>>())
}

/// Records the force loss of one geometry given the fused embeddings of
/// both molecules; returns `(loss, predictions)`.
pub fn force_loss_on_tape(s: &mut Session<'_>, model: &Model, h1: Var, h2: Var, vg: &VirtualGeometry) -> (Var, Var) {
    let f = model.forces_forward(s, h1, h2, vg);
    let target = s.input(stacked_targets(vg));
    let diff = s.tape.sub(f, target);
    let sq = s.tape.mul(diff, diff);
    let sum = s.tape.sum_all(sq);
    let rows = s.value(f).rows().max(1);
    (s.tape.scale(sum, 1.0 / rows as f64), f)
}

/// Geometry for the pair at global index `index` in `epoch`.
pub fn epoch_geometry(pair: &MoleculePair, cfg: &PretrainConfig, epoch: usize, index: usize) -> Result<VirtualGeometry> {
    let seed = seeding::derive_seed(&[cfg.seed, stream::GEOMETRY, epoch as u64, index as u64]);
    let n = cfg.n_target_atoms.min(pair.larger.n_atoms());
    build_virtual_geometry_replicated(pair, n, cfg.replicas_per_atom, seed)
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss_total: f64,
    pub loss_cont: f64,
    pub loss_force: f64,
    /// Gradients of `loss_total` (mean over used pairs).
    pub grads: GradBuffer,
    /// Number of pairs that contributed; the rest were skipped.
    pub used: usize,
}

/// What a step back-propagates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// `L_cont + alpha * L_force`.
    Joint,
    /// `L_cont` alone, without evaluating the force head.
    ContrastiveOnly,
}

/// One optimisation step over `batch`, given as `(global index, pair)`.
pub fn pretrain_step(
    model: &Model,
    batch: &[(usize, &MoleculePair)],
    cfg: &PretrainConfig,
    epoch: usize,
    exec: Exec,
) -> Result<StepOutput> {
    step_with(model, batch, cfg, epoch, exec, Objective::Joint)
}

pub fn step_with(
    model: &Model,
    batch: &[(usize, &MoleculePair)],
    cfg: &PretrainConfig,
    epoch: usize,
    exec: Exec,
    objective: Objective,
) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(Error::Contract("pretrain_step needs a non-empty batch".into()));
    }
    let geoms = exec.map(batch, |_, &(idx, pair)| match epoch_geometry(pair, cfg, epoch, idx) {
        Ok(vg) => Some(vg),
        Err(e) => {
            log::warn!("epoch {epoch}: skipping pair {idx}: {e}");
            None
        }
    });
    let live: Vec<(&MoleculePair, VirtualGeometry)> = batch
        .iter()
        .zip(geoms)
        .filter_map(|(&(_, p), g)| g.map(|g| (p, g)))
        .collect();
    if live.is_empty() {
        return Err(Error::DegenerateGeometry(format!(
            "epoch {epoch}: every pair of the batch was skipped"
        )));
    }
    let used = live.len();

    let embeddings = exec.map(&live, |_, (pair, vg)| -> Result<(Mat, Mat)> {
        let mut s = Session::new(&model.params);
        let v = model.pair_forward(&mut s, &pair.larger.molecule, &pair.smaller.molecule)?;
        let z2 = model.project_2d(&mut s, v.z_pair);
        let z3 = model.geometry_forward(&mut s, vg)?;
        Ok((s.value(z2).clone(), s.value(z3).clone()))
    });
    let embeddings = embeddings.into_iter().collect::<Result<Vec<_>>>()?;
    let z2d = Mat::vcat(&embeddings.iter().map(|e| &e.0).collect::<Vec<_>>());
    let z3d = Mat::vcat(&embeddings.iter().map(|e| &e.1).collect::<Vec<_>>());
    let (loss_cont, dz2, dz3) = ntxent_with_grad(&z2d, &z3d, cfg.tau)?;

    let alpha = cfg.alpha;
    let per_pair = exec.map(&live, |i, (pair, vg)| -> Result<(GradBuffer, f64)> {
        let mut s = Session::new(&model.params);
        let v = model.pair_forward(&mut s, &pair.larger.molecule, &pair.smaller.molecule)?;
        let z2 = model.project_2d(&mut s, v.z_pair);
        let z3 = model.geometry_forward(&mut s, vg)?;
        let mut seeds = vec![
            (z2, Mat::row_vector(dz2.row(i))),
            (z3, Mat::row_vector(dz3.row(i))),
        ];
        let mut lf = 0.0;
        if objective == Objective::Joint {
            let (loss, _) = force_loss_on_tape(&mut s, model, v.h1, v.h2, vg);
            lf = s.value(loss).get(0, 0);
            if alpha > 0.0 {
                seeds.push((loss, Mat::filled(1, 1, alpha / used as f64)));
            }
        }
        let grads = s.tape.backward(&seeds);
        let mut buf = GradBuffer::new(&model.params);
        s.collect(&grads, &mut buf);
        Ok((buf, lf))
    });
    let mut grads = GradBuffer::new(&model.params);
    let mut force_sum = 0.0;
    for r in per_pair {
        let (buf, lf) = r?;
        grads.merge(&buf);
        force_sum += lf;
    }
    if !grads.is_finite() {
        return Err(Error::Numeric(format!("epoch {epoch}: non-finite gradients")));
    }
    let loss_force = force_sum / used as f64;
    let loss_total = match objective {
        Objective::Joint => loss_cont + alpha * loss_force,
        Objective::ContrastiveOnly => loss_cont,
    };
    Ok(StepOutput {
        loss_total,
        loss_cont,
        loss_force,
        grads,
        used,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss_total: f64,
    pub loss_cont: f64,
    pub loss_force: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: Model,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochLoss>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Default loss-log location next to a checkpoint.
pub fn log_path_for(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".loss.csv");
    checkpoint.with_file_name(name)
}

fn manifest(model: &Model, cfg: &PretrainConfig, epoch: usize, history: &[EpochLoss]) -> Manifest {
    Manifest {
        kind: "pretrain".into(),
        encoder: model.config.clone(),
        config: serde_json::to_value(cfg).expect("config serialises"),
        seed: cfg.seed,
        epoch,
        lr: cfg.effective_lr(),
        loss_history: history.to_vec(),
    }
}

/// Pre-trains a fresh model on `dataset` and writes the checkpoint to
/// `out`. Per-step losses go to a CSV next to the checkpoint.
pub fn run_pretraining(
    cfg: &PretrainConfig,
    encoder: &EncoderConfig,
    dataset: &[MoleculePair],
    out: &Path,
    exec: Exec,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    encoder.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("pre-training dataset is empty".into()));
    }
    let mut model = Model::new(encoder.clone(), cfg.seed)?;
    let lr = cfg.effective_lr();
    let mut adam = Adam::new(&model.params, lr);
    let log_path = log_path_for(out);
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "epoch,step,loss_total,loss_cont,loss_force,lr").map_err(|e| Error::io(&log_path, e))?;

    let mut steps = Vec::new();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = seeding::rng_from(&[cfg.seed, stream::SHUFFLE, epoch as u64]);
        order.shuffle(&mut rng);
        let (mut sum_t, mut sum_c, mut sum_f, mut n) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(usize, &MoleculePair)> = chunk.iter().map(|&i| (i, &dataset[i])).collect();
            let outcome = pretrain_step(&model, &batch, cfg, epoch, exec);
            let out_step = match outcome {
                Ok(o) => o,
                Err(Error::DegenerateGeometry(msg)) => {
                    log::warn!("{msg}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            adam.step(&mut model.params, &out_step.grads);
            let rec = StepRecord {
                epoch,
                step,
                loss_total: out_step.loss_total,
                loss_cont: out_step.loss_cont,
                loss_force: out_step.loss_force,
                lr,
            };
            writeln!(
                log,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                rec.epoch, rec.step, rec.loss_total, rec.loss_cont, rec.loss_force, rec.lr
            )
            .map_err(|e| Error::io(&log_path, e))?;
            sum_t += rec.loss_total;
            sum_c += rec.loss_cont;
            sum_f += rec.loss_force;
            n += 1;
            steps.push(rec);
            step += 1;
        }
        let k = n.max(1) as f64;
        history.push(EpochLoss {
            epoch,
            loss_total: sum_t / k,
            loss_cont: sum_c / k,
            loss_force: sum_f / k,
        });
        log::info!(
            "epoch {epoch}: loss {:.4} (contrastive {:.4}, force {:.4})",
            sum_t / k,
            sum_c / k,
            sum_f / k
        );
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs {
            checkpoint::save(out, &manifest(&model, cfg, epoch + 1, &history), &model.params)?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    checkpoint::save(out, &manifest(&model, cfg, cfg.epochs, &history), &model.params)?;
    Ok(PretrainOutcome {
        model,
        steps,
        epochs: history,
        checkpoint: out.to_path_buf(),
        log: log_path,
    })
}
