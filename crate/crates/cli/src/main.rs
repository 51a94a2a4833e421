//! `mspnet` command-line pipeline: boundary extraction, synthetic corpora,
//! training, evaluation and occlusion maps.
//!
//! Settings are resolved as flags > JSON config (`--config`) > defaults.
//! Every stochastic step is seeded from `--seed`, so repeated runs write
//! byte-identical files.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mspnet::network::{load_checkpoint, save_checkpoint, Architecture, Model, ModelConfig};
use mspnet::occlusion::{export_importance, importance_map};
use mspnet::rng::{derive_seed, derive_seed_path, rng_from_seed};
use mspnet::shapedata::*;
use mspnet::training::{evaluate, fit, split_by_subject, write_epoch_log, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "mspnet", version, about = "Multi-structure point-cloud networks")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Base seed for every random stream [default: config value or 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker cap; everything currently runs on one thread
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// JSON config with optional `extract`, `synth`, `model`, `train` and
    /// `explain` sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample boundary point clouds from labelled volumes
    Extract(ExtractArgs),
    /// Generate the synthetic ellipsoid corpus
    Synth(SynthArgs),
    /// Train a model on a dataset manifest
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset
    Eval(EvalArgs),
    /// Per-point occlusion importance for one subject and structure
    Explain(ExplainArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Label volumes (`<stem>.json` + `<stem>.raw`), one subject each
    #[arg(long = "volume", required = true, num_args = 1..)]
    volumes: Vec<PathBuf>,
    /// Structure labels, in branch order
    #[arg(long, required = true, value_delimiter = ',')]
    labels: Vec<u16>,
    /// Points per structure
    #[arg(long)]
    points: Option<usize>,
    /// Targets per volume: class indices, or values with `--regression`
    #[arg(long, value_delimiter = ',')]
    targets: Vec<f64>,
    #[arg(long)]
    regression: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    structures: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    regression: bool,
    #[arg(long)]
    dent_depth: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint, epoch log and split
    #[arg(long)]
    out: PathBuf,
    /// `mspnet` or `pointnet`
    #[arg(long)]
    model: Option<Architecture>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    reg_weight: Option<f64>,
    /// Train/validation/test fractions
    #[arg(long, value_delimiter = ',', num_args = 3)]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    augment: Option<bool>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train` (`model.json`)
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `train`, `val`, `test` (split recomputed from the checkpoint) or `all`
    #[arg(long, default_value = "test")]
    split: String,
    /// Metrics JSON path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    subject: String,
    #[arg(long, default_value_t = 0)]
    structure: usize,
    /// Neighbours occluded together with each point [default: 32]
    #[arg(long)]
    k: Option<usize>,
    /// Reference class [default: the model's prediction]
    #[arg(long)]
    class: Option<usize>,
    /// Output prefix; writes `<out>.csv` and `<out>.ply`
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    extract: Option<ExtractConfig>,
    #[serde(default)]
    synth: Option<Value>,
    #[serde(default)]
    model: Option<Value>,
    #[serde(default)]
    train: Option<Value>,
    #[serde(default)]
    explain: Option<ExplainConfig>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct ExtractConfig {
    points: usize,
    seed: u64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig { points: 512, seed: 0 }
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct ExplainConfig {
    k: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { k: 32 }
    }
}

/// Command-line or config mistakes; reported with exit code 1.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

/// Deserializes a config section over the type's defaults.
fn section<T: DeserializeOwned + Default>(value: Option<Value>, name: &str) -> Result<T> {
    match value {
        None => Ok(T::default()),
        Some(v) => serde_json::from_value(v).map_err(|e| usage(format!("config section {name}: {e}"))),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<mspnet::Error>() {
            return match e {
                e if e.is_numeric() => 3,
                mspnet::Error::Parameter(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    if cli.global.threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    let config = load_config(cli.global.config.as_deref())?;
    let seed = cli.global.seed;
    match cli.command {
        Command::Extract(args) => cmd_extract(args, config, seed),
        Command::Synth(args) => cmd_synth(args, config, seed),
        Command::Train(args) => cmd_train(args, config, seed),
        Command::Eval(args) => cmd_eval(args),
        Command::Explain(args) => cmd_explain(args, config),
    }
}

fn cmd_extract(args: ExtractArgs, config: FileConfig, seed: Option<u64>) -> Result<()> {
    let cfg = config.extract.unwrap_or_default();
    let points = args.points.unwrap_or(cfg.points);
    let seed = seed.unwrap_or(cfg.seed);
    if !args.targets.is_empty() && args.targets.len() != args.volumes.len() {
        return Err(usage(format!("{} targets for {} volumes", args.targets.len(), args.volumes.len())));
    }
    fs::create_dir_all(&args.out)?;
    let mut entries = Vec::with_capacity(args.volumes.len());
    for (v, path) in args.volumes.iter().enumerate() {
        let volume = LabelVolume::read(path).with_context(|| format!("reading volume {}", path.display()))?;
        let subject =
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("subject{v}"));
        let mut clouds = Vec::with_capacity(args.labels.len());
        for (j, &label) in args.labels.iter().enumerate() {
            let boundary = extract_boundary(&volume, label)
                .with_context(|| format!("volume {}, label {label}", path.display()))?;
            let mut rng = rng_from_seed(derive_seed_path(seed, &[v as u64, j as u64]));
            let mut cloud = sample_uniform(&boundary, points, &mut rng)?;
            cloud.structure_id = j as u32;
            let name = PathBuf::from(format!("{subject}_s{j}.xyz"));
            cloud.write_ascii(&args.out.join(&name))?;
            clouds.push(name);
        }
        let target =
            args.targets.get(v).map(|&t| if args.regression { Target::Value(t) } else { Target::Class(t as usize) });
        entries.push(ManifestEntry { subject_id: subject, target, clouds });
    }
    write_manifest(&args.out.join("manifest.json"), &entries)?;
    eprintln!("extracted {} subjects x {} structures", entries.len(), args.labels.len());
    Ok(())
}

fn cmd_synth(args: SynthArgs, config: FileConfig, seed: Option<u64>) -> Result<()> {
    let mut spec: SynthSpec = section(config.synth, "synth")?;
    if let Some(v) = args.subjects {
        spec.subjects = v;
    }
    if let Some(v) = args.structures {
        spec.structures = v;
    }
    if let Some(v) = args.points {
        spec.points = v;
    }
    if let Some(v) = args.dent_depth {
        spec.dent_depth = v;
    }
    if args.regression {
        spec.task = Task::Regression;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let corpus = synth_dataset(&spec)?;
    let manifest = write_dataset(&args.out, &corpus.samples)?;
    let masks = json!({ "spec": spec, "dent_masks": corpus.dent_masks });
    fs::write(args.out.join("synth.json"), serde_json::to_string(&masks)? + "\n")?;
    eprintln!("wrote {} subjects to {}", corpus.samples.len(), manifest.display());
    Ok(())
}

/// Task and output count implied by the dataset's targets.
fn task_of(samples: &[MultiStructureSample]) -> Result<(Task, usize)> {
    let first = samples.first().context("dataset is empty")?;
    match first.target {
        Target::Value(_) => Ok((Task::Regression, 1)),
        Target::Class(_) => {
            let max = samples.iter().filter_map(|s| s.target.class()).max().unwrap_or(0);
            Ok((Task::Classification, (max + 1).max(2)))
        }
    }
}

fn cmd_train(args: TrainArgs, config: FileConfig, seed: Option<u64>) -> Result<()> {
    let mut train_cfg: TrainConfig = section(config.train, "train")?;
    let mut model_cfg: ModelConfig = section(config.model, "model")?;
    if let Some(v) = args.epochs {
        train_cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        train_cfg.learning_rate = v;
    }
    if let Some(v) = args.reg_weight {
        train_cfg.reg_weight = v;
    }
    if let Some(r) = args.ratios {
        train_cfg.ratios = [r[0], r[1], r[2]];
    }
    if let Some(v) = args.augment {
        train_cfg.augment = v;
    }
    if let Some(s) = seed {
        train_cfg.seed = s;
    }
    if let Some(a) = args.model {
        model_cfg.architecture = a;
    }

    let dataset = read_dataset(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let (task, outputs) = task_of(&dataset)?;
    model_cfg.task = task;
    model_cfg.outputs = outputs;
    model_cfg.structures = dataset[0].clouds.len();
    model_cfg.points = dataset[0].clouds[0].len();

    let model = Model::new(model_cfg, derive_seed(train_cfg.seed, 0))?;
    let (outcome, split) = fit(model, &dataset, &train_cfg)?;

    fs::create_dir_all(&args.out)?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| dataset[i].subject_id.clone()).collect::<Vec<_>>();
    let metadata = json!({
        "seed": train_cfg.seed,
        "ratios": train_cfg.ratios,
        "train": train_cfg,
        "best_epoch": outcome.best_epoch,
        "split": { "train": ids(&split.train), "val": ids(&split.val), "test": ids(&split.test) },
    });
    save_checkpoint(&outcome.model, &args.out.join("model"), metadata)?;
    write_epoch_log(&args.out.join("epochs.csv"), &outcome.log)?;
    eprintln!("best epoch {} of {}", outcome.best_epoch, train_cfg.epochs);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (model, meta) = load_checkpoint(&args.checkpoint)?;
    let dataset = read_dataset(&args.data)?;
    let samples = if args.split == "all" {
        dataset
    } else {
        let seed = meta["seed"].as_u64().context("checkpoint metadata lacks a seed")?;
        let ratios: [f64; 3] =
            serde_json::from_value(meta["ratios"].clone()).context("checkpoint metadata lacks ratios")?;
        let split = split_by_subject(&dataset, ratios, seed)?;
        let Some(idx) = split.part(&args.split) else {
            return Err(usage(format!("unknown split {:?} (train, val, test or all)", args.split)));
        };
        idx.iter().map(|&i| dataset[i].clone()).collect()
    };
    let metrics = evaluate(&model, &samples)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&args.out, metrics.to_json()?)?;
    eprintln!("{} on {} subjects: {}", args.split, samples.len(), mspnet::fmt::sig9(metrics.headline()));
    Ok(())
}

fn cmd_explain(args: ExplainArgs, config: FileConfig) -> Result<()> {
    let k = args.k.unwrap_or(config.explain.unwrap_or_default().k);
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let dataset = read_dataset(&args.data)?;
    let Some(sample) = dataset.iter().find(|s| s.subject_id == args.subject) else {
        bail!(mspnet::Error::Format(format!("subject {:?} not in {}", args.subject, args.data.display())));
    };
    let map = importance_map(&model, sample, args.structure, k, args.class)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    export_importance(&map, &sample.clouds[args.structure], &args.out)?;
    eprintln!("reference class {}, max |importance| {}", map.reference_class, mspnet::fmt::sig9(map.max_abs()));
    Ok(())
}
