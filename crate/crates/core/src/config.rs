//! Architecture, task, loss, augmentation and optimizer configuration.
//!
//! Every struct rejects unknown keys when deserialized, so a typo in a JSON
//! config file is reported instead of silently falling back to a default.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::Modality;

/// Number of 2x downsamplings between the first and fifth encoder stage.
pub const NUM_DOWNSAMPLINGS: u32 = 4;
pub const DOWNSAMPLE_FACTOR: usize = 1 << NUM_DOWNSAMPLINGS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_streams: usize,
    pub stage_channels: Vec<usize>,
    pub swin_layers: usize,
    pub swin_heads: usize,
    pub swin_window: usize,
    pub cbam_reduction: usize,
    pub num_classes: usize,
    /// `(height, width)`
    pub input_size: (usize, usize),
    #[serde(default = "default_cross_heads")]
    pub cross_heads: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default = "default_cbam_min_hidden")]
    pub cbam_min_hidden: usize,
}

fn default_cross_heads() -> usize {
    4
}

fn default_mlp_ratio() -> usize {
    4
}

fn default_cbam_min_hidden() -> usize {
    4
}

impl ModelConfig {
    /// Desk-scale widths `[16, 32, 64, 128, 256]` at the 208x208 working resolution.
    pub fn desk(num_streams: usize, num_classes: usize) -> Self {
        ModelConfig {
            num_streams,
            stage_channels: vec![16, 32, 64, 128, 256],
            swin_layers: 1,
            swin_heads: 4,
            swin_window: 7,
            cbam_reduction: 8,
            num_classes,
            input_size: (208, 208),
            cross_heads: default_cross_heads(),
            mlp_ratio: default_mlp_ratio(),
            cbam_min_hidden: default_cbam_min_hidden(),
        }
    }

    /// Doubled widths `[32, 64, 128, 256, 512]`.
    pub fn paper_scale(num_streams: usize, num_classes: usize) -> Self {
        ModelConfig {
            stage_channels: vec![32, 64, 128, 256, 512],
            ..Self::desk(num_streams, num_classes)
        }
    }

    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_size = (h, w);
        self
    }

    pub fn channels(&self, stage: usize) -> usize {
        self.stage_channels[stage]
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.stage_channels[4]
    }

    /// Spatial size of encoder stage `stage` (0-based).
    pub fn stage_size(&self, stage: usize) -> (usize, usize) {
        (self.input_size.0 >> stage, self.input_size.1 >> stage)
    }

    pub fn bottleneck_size(&self) -> (usize, usize) {
        self.stage_size(4)
    }

    /// Architectural invariants that do not depend on the task.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.num_streams == 0 {
            v.push("num_streams must be at least 1".to_string());
        }
        if self.stage_channels.len() != 5 {
            v.push(format!(
                "stage_channels must have 5 entries, got {}",
                self.stage_channels.len()
            ));
        } else if self.stage_channels.windows(2).any(|w| w[0] >= w[1]) || self.stage_channels[0] == 0 {
            v.push("stage_channels must be positive and strictly increasing".to_string());
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % DOWNSAMPLE_FACTOR != 0 || w % DOWNSAMPLE_FACTOR != 0 {
            v.push(format!(
                "input_size ({h}, {w}) must be positive and divisible by {DOWNSAMPLE_FACTOR}"
            ));
        }
        if self.swin_layers == 0 {
            v.push("swin_layers must be at least 1".to_string());
        }
        if self.swin_window == 0 {
            v.push("swin_window must be at least 1".to_string());
        }
        if self.num_classes == 0 {
            v.push("num_classes must be at least 1".to_string());
        }
        if self.cbam_reduction == 0 {
            v.push("cbam_reduction must be at least 1".to_string());
        }
        if let Some(&c5) = self.stage_channels.get(4) {
            if self.swin_heads == 0 || c5 % self.swin_heads != 0 {
                v.push(format!("swin_heads {} must divide c5 = {c5}", self.swin_heads));
            }
            if self.cross_heads == 0 || c5 % self.cross_heads != 0 {
                v.push(format!("cross_heads {} must divide c5 = {c5}", self.cross_heads));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(v.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskName {
    #[serde(rename = "WMH")]
    Wmh,
    #[serde(rename = "ISLES")]
    Isles,
    #[serde(rename = "BraTS")]
    Brats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Focal-Tversky + boundary main loss (WMH, ISLES).
    Vascular,
    /// Per-class Dice main loss over nested tumour regions.
    Brats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Zero on the foreground, distance to the nearest foreground voxel elsewhere.
    UnsignedOutside,
    /// Negative inside, positive outside; magnitude is the distance to the surface.
    Signed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub smooth: f64,
    pub gamma: f64,
    pub alpha_t: f64,
    pub alpha: f64,
    pub beta: f64,
    pub w_focal: f64,
    pub w_tversky: f64,
    /// Weights for `(z_aux1, z_aux2)`.
    pub aux_weights: Vec<f64>,
    pub lambda_boundary: f64,
    pub lambda_lesion: f64,
    pub mode: LossMode,
    #[serde(default = "default_distance_mode")]
    pub distance_mode: DistanceMode,
    /// Distance assigned everywhere when a target slice has no foreground.
    #[serde(default = "default_distance_cap")]
    pub distance_cap: f64,
    #[serde(default = "default_prob_clamp")]
    pub prob_clamp: f64,
    /// Divide distances by the slice diagonal, so the boundary term lives on the same
    /// scale as the overlap losses. Capped distances saturate at 1.
    #[serde(default)]
    pub normalize_distance: bool,
}

fn default_distance_mode() -> DistanceMode {
    DistanceMode::UnsignedOutside
}

fn default_distance_cap() -> f64 {
    // Unreachable on a 208x208 slice at 1 mm (diagonal ~294 mm) yet finite.
    300.0
}

fn default_prob_clamp() -> f64 {
    1e-7
}

impl LossConfig {
    pub fn for_mode(mode: LossMode) -> Self {
        LossConfig {
            smooth: 1.0,
            gamma: 2.0,
            alpha_t: 0.25,
            alpha: 0.3,
            beta: 0.7,
            w_focal: 0.5,
            w_tversky: 0.5,
            aux_weights: vec![0.5, 0.25],
            lambda_boundary: 0.5,
            lambda_lesion: 0.25,
            mode,
            distance_mode: default_distance_mode(),
            distance_cap: default_distance_cap(),
            prob_clamp: default_prob_clamp(),
            normalize_distance: false,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let weights = [
            ("smooth", self.smooth),
            ("gamma", self.gamma),
            ("alpha_t", self.alpha_t),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("w_focal", self.w_focal),
            ("w_tversky", self.w_tversky),
            ("lambda_boundary", self.lambda_boundary),
            ("lambda_lesion", self.lambda_lesion),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                v.push(format!("loss.{name} must be finite and >= 0"));
            }
        }
        if self.aux_weights.len() != 2 || self.aux_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            v.push("loss.aux_weights must hold two finite weights >= 0".to_string());
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            v.push("loss.prob_clamp must lie in (0, 0.5)".to_string());
        }
        if !(self.distance_cap > 0.0) {
            v.push("loss.distance_cap must be positive".to_string());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    pub flip_prob: f64,
    pub affine_prob: f64,
    pub rotation_deg: f64,
    pub scale_frac: f64,
    pub elastic_prob: f64,
    /// Application probability range; each sample draws its probability uniformly from it.
    pub photometric_prob: [f64; 2],
    pub channel_dropout_prob: f64,
    #[serde(default = "default_gamma_range")]
    pub gamma_range: [f64; 2],
    #[serde(default = "default_jitter")]
    pub brightness: f64,
    #[serde(default = "default_jitter")]
    pub contrast: f64,
    #[serde(default = "default_elastic_spacing")]
    pub elastic_spacing: f64,
    #[serde(default = "default_elastic_sigma")]
    pub elastic_sigma: f64,
}

fn default_gamma_range() -> [f64; 2] {
    [0.8, 1.2]
}

fn default_jitter() -> f64 {
    0.1
}

fn default_elastic_spacing() -> f64 {
    32.0
}

fn default_elastic_sigma() -> f64 {
    4.0
}

impl AugmentationConfig {
    pub fn wmh() -> Self {
        Self::tier(0.5, 0.75, 20.0, 0.20, 0.5, [0.30, 0.50], 0.5)
    }

    pub fn isles() -> Self {
        Self::tier(0.5, 0.75, 15.0, 0.15, 0.3, [0.30, 0.30], 0.25)
    }

    pub fn brats() -> Self {
        Self::tier(0.5, 0.5, 10.0, 0.10, 0.0, [0.15, 0.20], 0.0)
    }

    /// All probabilities zero.
    pub fn none() -> Self {
        Self::tier(0.0, 0.0, 0.0, 0.0, 0.0, [0.0, 0.0], 0.0)
    }

    fn tier(
        flip: f64,
        affine: f64,
        rotation_deg: f64,
        scale_frac: f64,
        elastic: f64,
        photometric: [f64; 2],
        dropout: f64,
    ) -> Self {
        AugmentationConfig {
            flip_prob: flip,
            affine_prob: affine,
            rotation_deg,
            scale_frac,
            elastic_prob: elastic,
            photometric_prob: photometric,
            channel_dropout_prob: dropout,
            gamma_range: default_gamma_range(),
            brightness: default_jitter(),
            contrast: default_jitter(),
            elastic_spacing: default_elastic_spacing(),
            elastic_sigma: default_elastic_sigma(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let probs = [
            ("flip_prob", self.flip_prob),
            ("affine_prob", self.affine_prob),
            ("elastic_prob", self.elastic_prob),
            ("photometric_prob[0]", self.photometric_prob[0]),
            ("photometric_prob[1]", self.photometric_prob[1]),
            ("channel_dropout_prob", self.channel_dropout_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                v.push(format!("augmentation.{name} must lie in [0, 1]"));
            }
        }
        if self.photometric_prob[0] > self.photometric_prob[1] {
            v.push("augmentation.photometric_prob range is reversed".to_string());
        }
        if !(0.0..1.0).contains(&self.scale_frac) || self.rotation_deg < 0.0 {
            v.push("augmentation rotation/scale magnitudes out of range".to_string());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub size_percentile: f64,
    pub oversample_factor: f64,
    pub enabled: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            size_percentile: 25.0,
            oversample_factor: 3.0,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    /// Hard cap on optimizer steps, for desk-scale runs.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

fn default_warmup() -> usize {
    15
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_eps() -> f64 {
    1e-8
}

fn default_clip() -> Option<f64> {
    Some(1.0)
}

impl OptimizerConfig {
    fn table(lr: f64, epochs: usize, batch_size: usize, weight_decay: f64) -> Self {
        OptimizerConfig {
            lr,
            epochs,
            batch_size,
            weight_decay,
            warmup_epochs: default_warmup(),
            seed: 0,
            betas: default_betas(),
            eps: default_eps(),
            grad_clip: default_clip(),
            max_steps: None,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            v.push("optimizer.lr must be finite and >= 0".to_string());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            v.push("optimizer.epochs and batch_size must be positive".to_string());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            v.push("optimizer.weight_decay must be finite and >= 0".to_string());
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            v.push("optimizer.betas must lie in [0, 1)".to_string());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                v.push("optimizer.grad_clip must be positive".to_string());
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskProfile {
    pub name: TaskName,
    pub modalities: Vec<Modality>,
    pub loss: LossConfig,
    pub augmentation: AugmentationConfig,
    pub sampler: Option<SamplerConfig>,
    pub optimizer: OptimizerConfig,
}

impl TaskProfile {
    pub fn wmh() -> Self {
        TaskProfile {
            name: TaskName::Wmh,
            modalities: vec![Modality::Flair, Modality::T1w],
            loss: LossConfig::for_mode(LossMode::Vascular),
            augmentation: AugmentationConfig::wmh(),
            sampler: Some(SamplerConfig::default()),
            optimizer: OptimizerConfig::table(1e-4, 150, 18, 1.5e-4),
        }
    }

    pub fn isles() -> Self {
        TaskProfile {
            name: TaskName::Isles,
            modalities: vec![Modality::Dwi, Modality::Adc],
            loss: LossConfig::for_mode(LossMode::Vascular),
            augmentation: AugmentationConfig::isles(),
            sampler: Some(SamplerConfig::default()),
            optimizer: OptimizerConfig::table(1e-4, 120, 18, 1.5e-4),
        }
    }

    pub fn brats() -> Self {
        TaskProfile {
            name: TaskName::Brats,
            modalities: vec![Modality::T1w, Modality::T1c, Modality::T2w, Modality::Flair],
            loss: LossConfig::for_mode(LossMode::Brats),
            augmentation: AugmentationConfig::brats(),
            sampler: None,
            optimizer: OptimizerConfig::table(5e-5, 300, 8, 1e-4),
        }
    }

    pub fn preset(name: TaskName) -> Self {
        match name {
            TaskName::Wmh => Self::wmh(),
            TaskName::Isles => Self::isles(),
            TaskName::Brats => Self::brats(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.loss.mode {
            LossMode::Vascular => 1,
            LossMode::Brats => 3,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        match self.loss.mode {
            LossMode::Vascular => crate::volume::lesion_class_names(),
            LossMode::Brats => crate::volume::tumor_class_names(),
        }
    }

    /// Model configuration at desk widths matched to this task.
    pub fn desk_model(&self) -> ModelConfig {
        ModelConfig::desk(self.modalities.len(), self.num_classes())
    }
}

/// Checks the model/task pair and returns every violated invariant.
pub fn validate_config(cfg: &ModelConfig, profile: &TaskProfile) -> Vec<String> {
    let mut v = cfg.violations();
    if profile.modalities.len() != cfg.num_streams {
        v.push("stream/modality mismatch".to_string());
    }
    let unique: HashSet<_> = profile.modalities.iter().collect();
    if unique.len() != profile.modalities.len() {
        v.push("duplicate modality in profile".to_string());
    }
    if profile.num_classes() != cfg.num_classes {
        v.push(format!(
            "num_classes {} does not match {:?} loss mode ({} classes)",
            cfg.num_classes,
            profile.loss.mode,
            profile.num_classes()
        ));
    }
    v.extend(profile.loss.violations());
    v.extend(profile.augmentation.violations());
    v.extend(profile.optimizer.violations());
    if let Some(s) = &profile.sampler {
        if !(s.size_percentile > 0.0 && s.size_percentile < 100.0) {
            v.push("sampler.size_percentile must lie in (0, 100)".to_string());
        }
        if !(s.oversample_factor >= 1.0) {
            v.push("sampler.oversample_factor must be >= 1".to_string());
        }
    }
    v
}

/// Settings for sliding-window inference and the post-processing grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    /// Window `(height, width)`; `None` means the full network input.
    #[serde(default)]
    pub window: Option<(usize, usize)>,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    /// Gaussian sigma as a fraction of the window size.
    #[serde(default = "default_sigma_frac")]
    pub sigma_frac: f64,
    #[serde(default = "default_tau_range")]
    pub tau_range: (f64, f64),
    #[serde(default = "default_tau_step")]
    pub tau_step: f64,
    #[serde(default = "default_s_range")]
    pub s_min_range: (usize, usize),
    #[serde(default = "default_connectivity")]
    pub connectivity: u8,
    #[serde(default)]
    pub per_class_tuning: bool,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_overlap() -> f64 {
    0.5
}

fn default_sigma_frac() -> f64 {
    0.125
}

fn default_tau_range() -> (f64, f64) {
    (0.10, 0.80)
}

fn default_tau_step() -> f64 {
    0.05
}

fn default_s_range() -> (usize, usize) {
    (2, 15)
}

fn default_connectivity() -> u8 {
    26
}

fn default_batch() -> usize {
    8
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            window: None,
            overlap: default_overlap(),
            sigma_frac: default_sigma_frac(),
            tau_range: default_tau_range(),
            tau_step: default_tau_step(),
            s_min_range: default_s_range(),
            connectivity: default_connectivity(),
            per_class_tuning: false,
            batch_size: default_batch(),
        }
    }
}

impl InferenceConfig {
    /// Thresholds from the low to the high end of `tau_range`, inclusive.
    pub fn tau_grid(&self) -> Vec<f64> {
        let (lo, hi) = self.tau_range;
        if self.tau_step <= 0.0 || hi < lo {
            return Vec::new();
        }
        let n = ((hi - lo) / self.tau_step + 1e-9).floor() as usize;
        // Rounded to 1e-6 so 0.1 + 6 * 0.05 prints and compares as 0.4.
        (0..=n)
            .map(|i| ((lo + i as f64 * self.tau_step) * 1e6).round() / 1e6)
            .collect()
    }

    pub fn s_min_grid(&self) -> Vec<usize> {
        let (lo, hi) = self.s_min_range;
        (lo..=hi).collect()
    }
}

/// Top-level JSON config consumed by the command-line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub profile: TaskProfile,
    #[serde(default)]
    pub inference: InferenceConfig,
    /// Fraction of subjects held out for per-epoch validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_val_fraction() -> f64 {
    0.2
}

impl ExperimentConfig {
    pub fn for_task(name: TaskName) -> Self {
        let profile = TaskProfile::preset(name);
        ExperimentConfig {
            model: profile.desk_model(),
            profile,
            inference: InferenceConfig::default(),
            val_fraction: default_val_fraction(),
        }
    }

    /// CPU-sized variant for phantom runs: `size`² inputs, small attention windows, no
    /// augmentation, normalized boundary distances and a short high-lr schedule.
    pub fn desk(name: TaskName, size: usize, max_steps: usize) -> Self {
        let mut cfg = Self::for_task(name);
        cfg.model = cfg.model.with_input_size(size, size);
        cfg.model.swin_window = if (size / 16) % 2 == 0 { 2 } else { 1 };
        cfg.profile.augmentation = AugmentationConfig::none();
        cfg.profile.loss.normalize_distance = true;
        let o = &mut cfg.profile.optimizer;
        o.lr = 2e-3;
        o.warmup_epochs = 1;
        o.batch_size = 8;
        o.max_steps = Some(max_steps);
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = validate_config(&self.model, &self.profile);
        if !(0.0..1.0).contains(&self.val_fraction) {
            v.push("val_fraction must lie in [0, 1)".to_string());
        }
        if !(0.0..1.0).contains(&self.inference.overlap) {
            v.push("inference.overlap must lie in [0, 1)".to_string());
        }
        if ![6u8, 26].contains(&self.inference.connectivity) {
            v.push("inference.connectivity must be 6 or 26".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(v.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wmh_profile_with_two_streams_is_valid() {
        let p = TaskProfile::wmh();
        assert_eq!(p.modalities, vec![Modality::Flair, Modality::T1w]);
        assert!(validate_config(&ModelConfig::desk(2, 1), &p).is_empty());
    }

    #[test]
    fn stream_count_mismatch_is_reported() {
        let mut p = TaskProfile::wmh();
        p.modalities = vec![Modality::Flair, Modality::T1w, Modality::T2w, Modality::T1c];
        assert_eq!(
            validate_config(&ModelConfig::desk(2, 1), &p),
            vec!["stream/modality mismatch".to_string()]
        );
    }

    #[test]
    fn desk_size_208_divides_by_16() {
        let cfg = ModelConfig::desk(2, 1);
        assert_eq!(cfg.input_size, (208, 208));
        assert_eq!(cfg.stage_channels, vec![16, 32, 64, 128, 256]);
        assert!(cfg.violations().is_empty());
        assert_eq!(cfg.bottleneck_size(), (13, 13));
    }

    #[test]
    fn rejects_bad_architecture() {
        let mut cfg = ModelConfig::desk(2, 1).with_input_size(200, 208);
        cfg.stage_channels = vec![16, 16, 64, 128, 256];
        let v = cfg.violations();
        assert_eq!(v.len(), 2, "{v:?}");
        cfg.stage_channels.pop();
        assert!(cfg.violations().iter().any(|m| m.contains("5 entries")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut json = serde_json::to_value(ModelConfig::desk(2, 1)).unwrap();
        json["dropout"] = serde_json::json!(0.1);
        assert!(serde_json::from_value::<ModelConfig>(json).is_err());
    }

    #[test]
    fn tau_grid_covers_interval() {
        let g = InferenceConfig::default().tau_grid();
        assert_eq!(g.len(), 15);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[6], 0.4);
        assert_eq!(*g.last().unwrap(), 0.8);
        assert_eq!(InferenceConfig::default().s_min_grid(), (2..=15).collect::<Vec<_>>());
    }

    #[test]
    fn experiment_round_trips() {
        for name in [TaskName::Wmh, TaskName::Isles, TaskName::Brats] {
            let cfg = ExperimentConfig::for_task(name);
            cfg.validate().unwrap();
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        }
    }
}
