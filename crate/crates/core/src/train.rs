//! The training loop: weighted slice sampling, augmentation, composite loss, AdamW with a
//! warmup + cosine schedule, per-epoch validation and resumable checkpoints.
//!
//! Every random draw of step `t` comes from a generator seeded by `(seed, t)`, so a run resumed
//! from a checkpoint replays exactly the same batches as an uninterrupted one.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::data::{augment, collate, difficulty_weights, PreparedCase, SliceDataset, WeightedSampler};
use crate::error::{Error, Result};
use crate::inference::{cohort_mean_dsc, PostprocessParams};
use crate::losses::{total_loss, LossTargets};
use crate::model::SynapseNet;
use crate::optim::{clip_grad_norm, schedule, AdamW};

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const OPTIMIZER_FILE: &str = "optimizer.safetensors";
pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const NAN_DUMP_FILE: &str = "nan_batch.json";

/// Validation post-processing used to pick the best checkpoint.
pub const VALIDATION_PARAMS: PostprocessParams = PostprocessParams { tau: 0.5, s_min: 0 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub main: f64,
    pub aux: [f64; 2],
    pub lesion: f64,
    pub boundary: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    #[serde(default)]
    pub val_dsc: Option<f64>,
}

/// JSON sidecar of a checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub step: usize,
    pub epoch: usize,
    pub total_steps: usize,
    pub seed: u64,
    /// SHA-256 of the serialized experiment config.
    pub config_hash: String,
    /// SHA-256 over parameter names, shapes and values.
    pub weights_digest: String,
    pub config: ExperimentConfig,
    pub history: Vec<EpochRecord>,
    /// Loss sum and step count of the epoch in progress.
    pub epoch_loss: (f64, usize),
    pub best_val_dsc: Option<f64>,
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(cfg)?)))
}

/// Generator for all draws of one optimizer step.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

pub struct Trainer {
    pub model: SynapseNet,
    pub optimizer: AdamW,
    pub config: ExperimentConfig,
    pub data: SliceDataset,
    pub val: Vec<PreparedCase>,
    sampler: WeightedSampler,
    /// Steps taken so far.
    pub step: usize,
    pub history: Vec<EpochRecord>,
    epoch_loss: (f64, usize),
    pub best_val_dsc: Option<f64>,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    /// A fresh model and optimizer; weights are drawn from the optimizer seed.
    pub fn new(cfg: &ExperimentConfig, train: Vec<PreparedCase>, val: Vec<PreparedCase>, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let model = SynapseNet::new(&cfg.model, &cfg.profile.modalities, cfg.profile.optimizer.seed, dtype)?;
        Self::with_model(cfg, model, train, val)
    }

    pub fn with_model(cfg: &ExperimentConfig, model: SynapseNet, train: Vec<PreparedCase>, val: Vec<PreparedCase>) -> Result<Self> {
        let data = SliceDataset::new(train)?;
        if data.is_empty() {
            return Err(Error::data("training set", "no slices to train on"));
        }
        if let Some(c) = data.cases.first() {
            let (m, _, h, w) = c.image.dim();
            if m != cfg.model.num_streams || (h, w) != cfg.model.input_size {
                return Err(Error::data(
                    &c.subject_id,
                    format!("slices are {m}x{h}x{w}, model expects {}x{:?}", cfg.model.num_streams, cfg.model.input_size),
                ));
            }
        }
        let weights = match &cfg.profile.sampler {
            Some(s) => difficulty_weights(&data.lesion_areas(), s),
            None => vec![1.0 / data.len() as f64; data.len()],
        };
        Ok(Trainer {
            sampler: WeightedSampler::new(&weights)?,
            optimizer: AdamW::new(&cfg.profile.optimizer),
            model,
            config: cfg.clone(),
            data,
            val,
            step: 0,
            history: Vec::new(),
            epoch_loss: (0.0, 0),
            best_val_dsc: None,
            out_dir: None,
        })
    }

    /// Directory for checkpoints (`last/`, `best/`) and the JSON-lines log.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.out_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    /// Draws per epoch equal the number of slices.
    pub fn steps_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.config.profile.optimizer.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        let o = &self.config.profile.optimizer;
        let full = o.epochs * self.steps_per_epoch();
        o.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn warmup_steps(&self) -> usize {
        (self.config.profile.optimizer.warmup_epochs * self.steps_per_epoch()).min(self.total_steps())
    }

    fn epoch_of(&self, step: usize) -> usize {
        step / self.steps_per_epoch()
    }

    fn log(&self, value: &serde_json::Value) -> Result<()> {
        if let Some(dir) = &self.out_dir {
            let path = dir.join(LOG_FILE);
            let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{value}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// One optimizer step.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let o = &self.config.profile.optimizer;
        let mut rng = step_rng(o.seed, self.step);
        let picks = self.sampler.draw(&mut rng, o.batch_size);
        let samples: Vec<_> = picks
            .iter()
            .map(|&i| {
                let (x, y) = self.data.slice(i);
                augment(&x, &y, &self.config.profile.augmentation, &mut rng)
            })
            .collect();
        let (x, y) = collate(&samples)?;
        let x = x.to_dtype(self.model.dtype())?;
        let heads = self.model.forward(&x)?;
        let targets = LossTargets::from_mask(y.view(), self.data.spacing(picks[0]), &self.config.profile.loss, &x)?;
        let loss = total_loss(&heads, &targets, &self.config.profile.loss)?;
        let value = loss.total.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(self.non_finite(&picks, &loss, value));
        }
        let mut grads = loss.total.backward()?;
        let grad_norm = clip_grad_norm(self.model.params(), &mut grads, o.grad_clip)?;
        if !grad_norm.is_finite() {
            return Err(self.non_finite(&picks, &loss, value));
        }
        let eta = schedule(self.step + 1, self.total_steps(), self.warmup_steps());
        self.optimizer.step(self.model.params(), &grads, eta)?;
        let record = StepRecord {
            step: self.step,
            epoch: self.epoch_of(self.step),
            lr: eta * o.lr,
            loss: value,
            main: loss.main,
            aux: loss.aux,
            lesion: loss.lesion,
            boundary: loss.boundary,
            grad_norm,
        };
        self.step += 1;
        self.epoch_loss.0 += value;
        self.epoch_loss.1 += 1;
        Ok(record)
    }

    fn non_finite(&self, picks: &[usize], loss: &crate::losses::LossBreakdown, value: f64) -> Error {
        let slices: Vec<(String, usize)> = picks
            .iter()
            .map(|&i| {
                let (c, z) = self.data.index[i];
                (self.data.cases[c].subject_id.clone(), z)
            })
            .collect();
        let dump = serde_json::json!({
            "step": self.step,
            "loss": value.to_string(),
            "main": loss.main.to_string(),
            "aux": [loss.aux[0].to_string(), loss.aux[1].to_string()],
            "lesion": loss.lesion.to_string(),
            "boundary": loss.boundary.to_string(),
            "slices": slices,
        });
        let mut message = format!("loss {value}");
        if let Some(dir) = &self.out_dir {
            let path = dir.join(NAN_DUMP_FILE);
            if fs::write(&path, dump.to_string()).is_ok() {
                message = format!("{message}; batch written to {}", path.display());
            }
        }
        Error::NonFinite { step: self.step, message }
    }

    /// Mean validation DSC at the fixed validation post-processing, if there are validation cases.
    pub fn validate(&self) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        cohort_mean_dsc(&self.model, &self.val, VALIDATION_PARAMS, &self.config.inference).map(Some)
    }

    fn finish_epoch(&mut self) -> Result<()> {
        let (sum, n) = self.epoch_loss;
        if n == 0 {
            return Ok(());
        }
        let val_dsc = self.validate()?;
        let rec = EpochRecord {
            epoch: self.epoch_of(self.step - 1),
            steps: n,
            mean_loss: sum / n as f64,
            val_dsc,
        };
        log::info!(
            "epoch {} mean loss {:.5}{}",
            rec.epoch,
            rec.mean_loss,
            val_dsc.map(|d| format!(" val dsc {d:.4}")).unwrap_or_default()
        );
        self.log(&serde_json::json!({ "kind": "epoch", "record": rec }))?;
        self.history.push(rec);
        self.epoch_loss = (0.0, 0);
        if let (Some(d), Some(dir)) = (val_dsc, self.out_dir.clone()) {
            if self.best_val_dsc.is_none_or(|b| d > b) {
                self.best_val_dsc = Some(d);
                self.save_checkpoint(&dir.join("best"))?;
            }
        }
        Ok(())
    }

    /// A step plus its log line; closes the epoch when the step ends one.
    pub fn advance(&mut self) -> Result<StepRecord> {
        let rec = self.train_step()?;
        log::debug!("step {} loss {:.5} lr {:.3e}", rec.step, rec.loss, rec.lr);
        self.log(&serde_json::json!({ "kind": "step", "record": rec }))?;
        if self.step % self.steps_per_epoch() == 0 || self.step == self.total_steps() {
            self.finish_epoch()?;
        }
        Ok(rec)
    }

    /// Trains until `until` steps have been taken (or the schedule ends). Epoch boundaries trigger
    /// validation; the final state is saved to `last/` when an output directory is set.
    pub fn run_until(&mut self, until: usize) -> Result<()> {
        let stop = until.min(self.total_steps());
        while self.step < stop {
            self.advance()?;
        }
        if let Some(dir) = self.out_dir.clone() {
            self.save_checkpoint(&dir.join("last"))?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(usize::MAX)
    }

    pub fn manifest(&self) -> Result<CheckpointManifest> {
        Ok(CheckpointManifest {
            step: self.step,
            epoch: if self.step == 0 { 0 } else { self.epoch_of(self.step - 1) },
            total_steps: self.total_steps(),
            seed: self.config.profile.optimizer.seed,
            config_hash: config_hash(&self.config)?,
            weights_digest: self.model.params().digest()?,
            config: self.config.clone(),
            history: self.history.clone(),
            epoch_loss: self.epoch_loss,
            best_val_dsc: self.best_val_dsc,
        })
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<CheckpointManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.model.params().save(&dir.join(WEIGHTS_FILE))?;
        self.optimizer.save(&dir.join(OPTIMIZER_FILE))?;
        let m = self.manifest()?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(m)
    }

    /// Restores model, optimizer and loop state from `dir`; the data must be the same as in the
    /// original run for the continuation to match.
    pub fn resume(dir: &Path, train: Vec<PreparedCase>, val: Vec<PreparedCase>, dtype: DType) -> Result<Self> {
        let (model, m) = load_model(dir, dtype)?;
        let mut t = Self::with_model(&m.config, model, train, val)?;
        t.optimizer.load(&dir.join(OPTIMIZER_FILE), dtype)?;
        t.step = m.step;
        t.history = m.history;
        t.epoch_loss = m.epoch_loss;
        t.best_val_dsc = m.best_val_dsc;
        Ok(t)
    }
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Model stored in a checkpoint directory, with its manifest.
pub fn load_model(dir: &Path, dtype: DType) -> Result<(SynapseNet, CheckpointManifest)> {
    let m = read_manifest(dir)?;
    if config_hash(&m.config)? != m.config_hash {
        return Err(Error::config(format!("{}: config hash mismatch", dir.display())));
    }
    let model = SynapseNet::new(&m.config.model, &m.config.profile.modalities, m.seed, dtype)?;
    model.params().load(&dir.join(WEIGHTS_FILE))?;
    Ok((model, m))
}

/// SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
