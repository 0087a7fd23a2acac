//! The `synapse-net` command line: train, tune, predict, evaluate, phantom and overlay.
//!
//! Every command writes a `run_manifest.json` into its output directory. Errors map to exit
//! codes through [`Error::exit_code`].

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use candle_core::DType;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::components::Connectivity;
use crate::config::ExperimentConfig;
use crate::data::io::{
    detect_scheme, read_case, read_mask, subject_dirs, subject_modalities, write_mask, write_raw_case,
};
use crate::data::{generate_phantom, prepare_case, split_ids, PhantomSpec, PreparedCase, Split};
use crate::error::{Error, Result};
use crate::inference::{
    binarize_volume, check_provenance, predict_case, score_case, tune_with_config, TunerRecord, TuningCase,
};
use crate::metrics::{CaseMetrics, MatchRule};
use crate::modality::Modality;
use crate::overlay::write_overlays;
use crate::report::{aggregate, compare, CohortReport};
use crate::train::{config_hash, load_model, Trainer, MANIFEST_FILE};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const PARAMS_FILE: &str = "params.json";
pub const SPLIT_FILE: &str = "split.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const PHANTOM_SPEC_FILE: &str = "phantom_spec.json";

#[derive(Debug, Parser)]
#[command(name = "synapse-net", version, about = "Multi-modal brain lesion segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoints `last/` and `best/`, the log and the split.
    Train(TrainArgs),
    /// Grid-search the threshold and minimum component size on validation subjects.
    Tune(TuneArgs),
    /// Segment subjects with tuned post-processing; writes `<subject>/mask.nii.gz`.
    Predict(PredictArgs),
    /// Score predictions against ground truth; optional paired t-tests against a baseline.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dataset in the raw layout.
    Phantom(PhantomArgs),
    /// Write per-slice PNG overlays (green TP, red FN, blue FP).
    Overlay(OverlayArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset root with one directory per subject.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `profile.optimizer.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `profile.optimizer.max_steps`.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Separate validation root; without it `val_fraction` of `--data` is held out.
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    /// Train in double precision.
    #[arg(long)]
    pub f64: bool,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Checkpoint directory, or a training output directory (uses `best/`, else `last/`).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub val_data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Tuned parameters written by `tune`.
    #[arg(long)]
    pub params: PathBuf,
    /// Root with one directory per subject.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction root (`<subject>/mask.nii.gz` or raw layout).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth root.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// A baseline prediction root or a baseline `report.json`.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Lesion matching: `overlap` or an IoU threshold such as `0.5`.
    #[arg(long, default_value = "overlap")]
    pub match_rule: String,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Phantom spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    /// Subject directory holding the images.
    #[arg(long)]
    pub image: PathBuf,
    /// Subject directory holding the predicted mask.
    #[arg(long)]
    pub pred: PathBuf,
    /// Subject directory holding the ground truth.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Background modality; defaults to the first one present.
    #[arg(long)]
    pub modality: Option<Modality>,
    /// Class index to draw; defaults to the union of all classes.
    #[arg(long)]
    pub class: Option<usize>,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub tool_version: String,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_path: None,
            config_hash: None,
            seed: None,
            started_unix: unix_now(),
            finished_unix: 0,
            artifacts: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    fn finish(mut self, out: &Path, artifacts: Vec<PathBuf>) -> Result<()> {
        self.finished_unix = unix_now();
        self.artifacts = artifacts
            .iter()
            .map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string())
            .collect();
        self.artifacts.sort();
        write_json(&out.join(RUN_MANIFEST_FILE), &self)
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Tune(a) => cmd_tune(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Phantom(a) => cmd_phantom(&a),
        Command::Overlay(a) => cmd_overlay(&a),
    }
}

fn load_prepared(root: &Path, cfg: &ExperimentConfig) -> Result<Vec<PreparedCase>> {
    let scheme = crate::data::LabelScheme::for_classes(cfg.profile.num_classes());
    subject_dirs(root)?
        .iter()
        .map(|d| prepare_case(&read_case(d, &cfg.profile.modalities, scheme)?, cfg.model.input_size))
        .collect()
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut manifest = RunManifest::new("train");
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.profile.optimizer.seed = seed;
    }
    if let Some(m) = a.max_steps {
        cfg.profile.optimizer.max_steps = Some(m);
    }
    cfg.validate()?;
    let cases = load_prepared(&a.data, &cfg)?;
    let (train, val) = match &a.val_data {
        Some(v) => (cases, load_prepared(v, &cfg)?),
        None => {
            let ids: Vec<String> = cases.iter().map(|c| c.subject_id.clone()).collect();
            let (_, val_ids) = split_ids(&ids, cfg.val_fraction);
            cases.into_iter().partition(|c| !val_ids.contains(&c.subject_id))
        }
    };
    create_dir(&a.out)?;
    let split = serde_json::json!({
        "train": train.iter().map(|c| &c.subject_id).collect::<Vec<_>>(),
        "validation": val.iter().map(|c| &c.subject_id).collect::<Vec<_>>(),
    });
    write_json(&a.out.join(SPLIT_FILE), &split)?;
    let dtype = if a.f64 { DType::F64 } else { DType::F32 };
    let mut trainer = Trainer::new(&cfg, train, val, dtype)?.with_output(&a.out)?;
    log::info!(
        "training {} slices, {} steps ({} per epoch)",
        trainer.data.len(),
        trainer.total_steps(),
        trainer.steps_per_epoch()
    );
    trainer.run()?;
    manifest.config_path = Some(a.config.clone());
    manifest.config_hash = Some(config_hash(&cfg)?);
    manifest.seed = Some(cfg.profile.optimizer.seed);
    let mut artifacts = vec![a.out.join("last"), a.out.join(crate::train::LOG_FILE), a.out.join(SPLIT_FILE)];
    if a.out.join("best").is_dir() {
        artifacts.push(a.out.join("best"));
    }
    manifest.finish(&a.out, artifacts)
}

/// A directory holding `checkpoint.json`, or a training output directory containing one under
/// `best/` or `last/`.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    for dir in [path.to_path_buf(), path.join("best"), path.join("last")] {
        if dir.join(MANIFEST_FILE).is_file() {
            return Ok(dir);
        }
    }
    Err(Error::data(path.display().to_string(), "no checkpoint found"))
}

pub fn cmd_tune(a: &TuneArgs) -> Result<()> {
    let mut manifest = RunManifest::new("tune");
    let ckpt = resolve_checkpoint(&a.checkpoint)?;
    let (model, meta) = load_model(&ckpt, DType::F32)?;
    let cfg = &meta.config;
    let cases = load_prepared(&a.val_data, cfg)?;
    let tuning: Vec<TuningCase> = cases
        .iter()
        .map(|c| {
            let pv = predict_case(&model, c, &cfg.inference)?;
            Ok(TuningCase {
                subject_id: c.subject_id.clone(),
                split: Split::Validation,
                probs: pv.probs,
                truth: c.original_mask.data.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let record = tune_with_config(&tuning, &cfg.inference)?;
    log::info!("tuned tau {} s_min {} (mean DSC {:.4})", record.tau, record.s_min, record.mean_dsc);
    create_dir(&a.out)?;
    let path = a.out.join(PARAMS_FILE);
    record.write(&path)?;
    manifest.config_hash = Some(meta.config_hash.clone());
    manifest.seed = Some(meta.seed);
    manifest.finish(&a.out, vec![path])
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let mut manifest = RunManifest::new("predict");
    let ckpt = resolve_checkpoint(&a.checkpoint)?;
    let (model, meta) = load_model(&ckpt, DType::F32)?;
    let record = TunerRecord::read(&a.params)?;
    let cfg = &meta.config;
    let dirs = subject_dirs(&a.input)?;
    let scheme = crate::data::LabelScheme::for_classes(cfg.profile.num_classes());
    let cases: Vec<_> = dirs
        .iter()
        .map(|d| read_case(d, &cfg.profile.modalities, scheme))
        .collect::<Result<_>>()?;
    let ids: Vec<&str> = cases.iter().map(|c| c.volume.subject_id.as_str()).collect();
    check_provenance(&record, &ids)?;
    let conn = Connectivity::from_count(cfg.inference.connectivity as usize)?;
    create_dir(&a.out)?;
    let mut artifacts = Vec::new();
    for case in &cases {
        let prepared = prepare_case(case, cfg.model.input_size)?;
        let pv = predict_case(&model, &prepared, &cfg.inference)?;
        let mask = binarize_volume(&pv, record.params(), record.per_class.as_deref(), conn, prepared.class_names.clone())?;
        artifacts.push(write_mask(&a.out.join(&prepared.subject_id), &mask, case.volume.spacing)?);
    }
    manifest.config_hash = Some(meta.config_hash.clone());
    manifest.seed = Some(meta.seed);
    manifest.finish(&a.out, artifacts)
}

fn parse_rule(s: &str) -> Result<MatchRule> {
    if s == "overlap" {
        return Ok(MatchRule::Overlap);
    }
    match s.parse::<f64>() {
        Ok(t) if t > 0.0 && t <= 1.0 => Ok(MatchRule::Iou(t)),
        _ => Err(Error::config(format!("--match-rule must be `overlap` or an IoU in (0, 1], got `{s}`"))),
    }
}

/// Scores every ground-truth subject against `pred/<subject>`.
pub fn score_directory(pred: &Path, gt: &Path, rule: MatchRule) -> Result<Vec<CaseMetrics>> {
    let mut out = Vec::new();
    for dir in subject_dirs(gt)? {
        let subject = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let scheme = detect_scheme(&dir)?;
        let (truth, spacing) = read_mask(&dir, scheme)?;
        let pdir = pred.join(&subject);
        if !pdir.is_dir() {
            return Err(Error::data(&subject, format!("no prediction under {}", pred.display())));
        }
        let (p, _) = read_mask(&pdir, scheme)?;
        out.push(score_case(&subject, &p, &truth, spacing, rule)?);
    }
    Ok(out)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let manifest = RunManifest::new("evaluate");
    let rule = parse_rule(&a.match_rule)?;
    let mut report = aggregate(&score_directory(&a.pred, &a.gt, rule)?)?;
    if let Some(b) = &a.baseline {
        let baseline = if b.is_dir() {
            aggregate(&score_directory(b, &a.gt, rule)?)?
        } else {
            CohortReport::read_json(b)?
        };
        report.comparisons = compare(&report, &baseline)?;
    }
    create_dir(&a.out)?;
    let (json, csv) = (a.out.join(REPORT_JSON), a.out.join(REPORT_CSV));
    report.write_json(&json)?;
    report.write_csv(&csv)?;
    manifest.finish(&a.out, vec![json, csv])
}

pub fn cmd_phantom(a: &PhantomArgs) -> Result<()> {
    let mut manifest = RunManifest::new("phantom");
    let text = fs::read_to_string(&a.spec).map_err(|e| Error::io(&a.spec, e))?;
    let spec: PhantomSpec =
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", a.spec.display())))?;
    let cases = generate_phantom(&spec)?;
    create_dir(&a.out)?;
    let mut artifacts = Vec::new();
    for case in &cases {
        artifacts.push(write_raw_case(&a.out, case, Some(spec.seed))?);
    }
    let spec_path = a.out.join(PHANTOM_SPEC_FILE);
    write_json(&spec_path, &spec)?;
    artifacts.push(spec_path);
    manifest.config_path = Some(a.spec.clone());
    manifest.seed = Some(spec.seed);
    manifest.finish(&a.out, artifacts)
}

pub fn cmd_overlay(a: &OverlayArgs) -> Result<()> {
    let manifest = RunManifest::new("overlay");
    let modality = match a.modality {
        Some(m) => m,
        None => subject_modalities(&a.image)?[0],
    };
    let scheme = detect_scheme(&a.gt)?;
    let case = read_case(&a.image, &[modality], scheme)?;
    let (truth, _) = read_mask(&a.gt, scheme)?;
    let (pred, _) = read_mask(&a.pred, scheme)?;
    if pred.data.dim() != truth.data.dim() || truth.spatial_shape() != case.volume.spatial_shape() {
        return Err(Error::shape(format!(
            "image {:?}, prediction {:?} and ground truth {:?} differ",
            case.volume.spatial_shape(),
            pred.data.dim(),
            truth.data.dim()
        )));
    }
    let select = |m: &crate::volume::Mask| match a.class {
        Some(k) if k < m.num_classes() => Ok(m.class(k).mapv(|v| v > 0)),
        Some(k) => Err(Error::config(format!("class {k} out of range for {} classes", m.num_classes()))),
        None => Ok(m.any_class().mapv(|v| v > 0)),
    };
    let (p, t) = (select(&pred)?, select(&truth)?);
    let written = write_overlays(&a.out, case.volume.channel(0), p.view(), t.view())?;
    manifest.finish(&a.out, written)
}
