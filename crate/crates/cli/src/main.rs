mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrl3d_core::data::{load_pair_dataset, ConformerCache, DatasetFormat, LoadOptions, MoleculePair, SplitScheme};
use mrl3d_core::finetune::{evaluate, protocol_splits, run_finetune, sample_negatives};
use mrl3d_core::geometry::build_virtual_geometry;
use mrl3d_core::pretrain::run_pretraining;
use mrl3d_core::task::{Objective, Task};
use mrl3d_core::{selfcheck, Error, Exec, Result};

use config::{key_listing, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "mrl3d", version, about = "Geometric pre-training for molecular pair encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML config file; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run every stage on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug, Clone, Default)]
struct DataArgs {
    /// Pair dataset (overrides data.path).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset format: csv-smiles or sdf-pairs (overrides data.format).
    #[arg(long)]
    format: Option<String>,
    /// Dataset family: chromophore, solvation or ddi.
    #[arg(long)]
    task: Option<Task>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pre-train the pair encoders on unlabelled pairs.
    #[command(after_help = key_listing(&["data", "encoder", "pretrain"]))]
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Target atoms per virtual geometry.
        #[arg(long)]
        n: Option<usize>,
        /// Weight of the force loss.
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
        /// Contrastive temperature.
        #[arg(long, allow_negative_numbers = true)]
        tau: Option<f64>,
        /// Number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fine-tune on a labelled dataset and write a metrics report.
    #[command(after_help = key_listing(&["data", "encoder", "finetune", "split"]))]
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Split scheme: kfold5, molecule or scaffold.
        #[arg(long)]
        split: Option<SplitScheme>,
        /// Pre-training checkpoint whose encoders initialise the model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a predictions CSV with `prediction` and `label` columns.
    #[command(after_help = key_listing(&["finetune"]))]
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Predictions file.
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        task: Option<Task>,
    },
    /// Build one virtual geometry and write it as XYZ plus a JSON sidecar.
    #[command(name = "construct-env", after_help = key_listing(&["data", "pretrain"]))]
    ConstructEnv {
        #[command(flatten)]
        common: Common,
        /// CSV whose first record is the pair to place.
        #[arg(long)]
        pair: PathBuf,
        /// Number of target atoms.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run the structural property suite.
    #[command(after_help = key_listing(&[]))]
    Selfcheck {
        #[command(flatten)]
        common: Common,
        /// Fraction of the full sample counts to run.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    cfg.apply_seed();
    Ok(cfg)
}

fn exec(common: &Common) -> Exec {
    if common.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn load_options(cfg: &RunConfig, seed: u64, exec: Exec, task: &str) -> LoadOptions {
    let cache = cfg
        .data
        .cache_dir
        .clone()
        .or_else(|| std::env::var_os("MRL_CACHE_DIR").map(PathBuf::from))
        .map(ConformerCache::new);
    LoadOptions {
        seed,
        cache,
        exec,
        task_id: task.into(),
    }
}

fn dataset(cfg: &RunConfig, opts: &LoadOptions) -> Result<Vec<MoleculePair>> {
    let path = cfg
        .data
        .path
        .as_deref()
        .ok_or_else(|| Error::config("data.path", "no dataset given (use --data or data.path)"))?;
    let format: DatasetFormat = cfg.data.format.as_deref().unwrap_or("csv-smiles").parse()?;
    let loaded = load_pair_dataset(path, format, opts)?;
    if loaded.skipped > 0 || !loaded.failed_conformers.is_empty() {
        log::warn!(
            "{}: skipped {} records, {} molecules without conformers",
            path.display(),
            loaded.skipped,
            loaded.failed_conformers.len()
        );
    }
    Ok(loaded.pairs)
}

fn apply_data_args(cfg: &mut RunConfig, data: &DataArgs) {
    if let Some(p) = &data.data {
        cfg.data.path = Some(p.clone());
    }
    if let Some(f) = &data.format {
        cfg.data.format = Some(f.clone());
    }
    if let Some(t) = data.task {
        cfg.pretrain.task = t;
        cfg.finetune.task = t;
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Pretrain {
            common,
            data,
            n,
            alpha,
            tau,
            epochs,
        } => {
            let mut cfg = load_config(&common)?;
            apply_data_args(&mut cfg, &data);
            let p = &mut cfg.pretrain;
            p.n_target_atoms = n.unwrap_or(p.n_target_atoms);
            p.alpha = alpha.unwrap_or(p.alpha);
            p.tau = tau.unwrap_or(p.tau);
            p.epochs = epochs.unwrap_or(p.epochs);
            cfg.validate()?;
            let exec = exec(&common);
            let pairs = dataset(&cfg, &load_options(&cfg, cfg.pretrain.seed, exec, "pretrain"))?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("pretrain.ckpt"));
            let outcome = run_pretraining(&cfg.pretrain, &cfg.encoder, &pairs, &out, exec)?;
            if let Some(last) = outcome.epochs.last() {
                println!(
                    "pre-trained {} pairs for {} epochs: final loss {:.4} (contrastive {:.4}, force {:.4})",
                    pairs.len(),
                    outcome.epochs.len(),
                    last.loss_total,
                    last.loss_cont,
                    last.loss_force
                );
            }
            println!("checkpoint {}\nloss log {}", outcome.checkpoint.display(), outcome.log.display());
            Ok(true)
        }
        Command::Finetune {
            common,
            data,
            split,
            checkpoint,
        } => {
            let mut cfg = load_config(&common)?;
            apply_data_args(&mut cfg, &data);
            if let Some(s) = split {
                cfg.split.scheme = s;
            }
            if checkpoint.is_some() {
                cfg.finetune.checkpoint = checkpoint;
            }
            cfg.validate()?;
            let exec = exec(&common);
            let ft = &cfg.finetune;
            let mut pairs = dataset(&cfg, &load_options(&cfg, ft.seed, exec, "finetune"))?;
            if ft.objective() == Objective::BinaryClassification && pairs.iter().all(|p| p.label == Some(1.0)) {
                let negatives = sample_negatives(&pairs, ft.seed)?;
                log::info!("added {} sampled negative pairs", negatives.len());
                pairs.extend(negatives);
            }
            let runs = protocol_splits(&pairs, cfg.split.scheme, ft.repeats, ft.seed)?;
            let report = run_finetune(ft, &cfg.encoder, &pairs, &runs, ft.checkpoint.as_deref(), exec)?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("report.json"));
            write_file(&out, &report.to_json())?;
            println!(
                "{} runs, test {} {:.4} ± {:.4}; report {}",
                report.runs.len(),
                report.metric,
                report.mean,
                report.std,
                out.display()
            );
            Ok(true)
        }
        Command::Evaluate { common, preds, task } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = task {
                cfg.finetune.task = t;
            }
            cfg.validate()?;
            let (p, y) = read_predictions(&preds)?;
            let objective = cfg.finetune.objective();
            let value = evaluate(&p, &y, objective)?;
            let name = if objective == Objective::Regression { "rmse" } else { "auroc" };
            println!("{name} {value:.4}");
            Ok(true)
        }
        Command::ConstructEnv { common, pair, n } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let seed = cfg.pretrain.seed;
            let n = n.unwrap_or(cfg.pretrain.n_target_atoms);
            let mut data_cfg = cfg.clone();
            data_cfg.data.path = Some(pair);
            data_cfg.data.format = Some("csv-smiles".into());
            let pairs = dataset(&data_cfg, &load_options(&cfg, seed, exec(&common), "construct-env"))?;
            let first = pairs.first().ok_or_else(|| Error::Dataset("pair file has no usable record".into()))?;
            let vg = build_virtual_geometry(first, n, seed)?;
            let stem = common.out.unwrap_or_else(|| PathBuf::from("env"));
            let xyz = stem.with_extension("xyz");
            let json = stem.with_extension("json");
            write_file(&xyz, &vg.to_xyz())?;
            let mut sidecar = serde_json::to_string_pretty(&vg.sidecar()).expect("sidecar serialises");
            sidecar.push('\n');
            write_file(&json, &sidecar)?;
            println!("{}\n{}", xyz.display(), json.display());
            Ok(true)
        }
        Command::Selfcheck { common, scale } => {
            if !(scale > 0.0 && scale <= 1.0) {
                return Err(Error::config("scale", format!("must lie in (0, 1], got {scale}")));
            }
            let cfg = load_config(&common)?;
            let outcomes = selfcheck::run_all(cfg.seed.unwrap_or(0), scale);
            for o in &outcomes {
                println!("{o}");
            }
            Ok(outcomes.iter().all(|o| o.passed))
        }
    }
}

fn read_predictions(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').map(str::trim).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::parse(path.display().to_string(), format!("missing `{name}` column")))
    };
    let (pi, li) = (col("prediction")?, col("label")?);
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            fields
                .get(i)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::parse(path.display().to_string(), format!("bad number on data line {}", n + 1)))
        };
        preds.push(num(pi)?);
        labels.push(num(li)?);
    }
    Ok((preds, labels))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
