//! Two-stage inference: Gaussian-blended sliding-window probabilities, a validation-only grid
//! search for the threshold and minimum component size, and test-set evaluation.

use candle_core::{DType, Device, Tensor};
use ndarray::{s, Array2, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::components::{label, remove_small, Connectivity};
use crate::config::InferenceConfig;
use crate::data::{restore_geometry, CropPad, PreparedCase, Split};
use crate::error::{Error, Result};
use crate::metrics::{CaseMetrics, ClassMetrics, MatchRule};
use crate::model::SynapseNet;
use crate::report::{aggregate, CohortReport};
use crate::volume::{Mask, Spacing};

/// Provenance tag of parameters tuned on validation cases only.
pub const VALIDATION_ONLY: &str = "validation-only";

/// Anything mapping `[B, M, h, w]` images to `[B, K, h, w]` probabilities.
pub trait SlicePredictor {
    fn num_classes(&self) -> usize;
    fn predict(&self, x: &Tensor) -> Result<Tensor>;
}

impl SlicePredictor for SynapseNet {
    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn predict(&self, x: &Tensor) -> Result<Tensor> {
        if x.dim(1)? != self.modalities().len() {
            return Err(Error::shape(format!(
                "model expects {} channels, input has {}",
                self.modalities().len(),
                x.dim(1)?
            )));
        }
        self.predict_probs(x)
    }
}

/// Probabilities at the original geometry of a case.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    pub subject_id: String,
    /// `[K, D, H, W]` in `[0, 1]`.
    pub probs: Array4<f32>,
    /// The crop/pad that produced the network input; already undone in `probs`.
    pub transform: CropPad,
    pub spacing: Spacing,
}

/// Gaussian importance map with per-axis sigma `sigma_frac * size`, peak 1.
pub fn gaussian_importance(h: usize, w: usize, sigma_frac: f64) -> Array2<f64> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sy, sx) = ((h as f64 * sigma_frac).max(1e-6), (w as f64 * sigma_frac).max(1e-6));
    Array2::from_shape_fn((h, w), |(r, c)| {
        (-0.5 * (((r as f64 - cy) / sy).powi(2) + ((c as f64 - cx) / sx).powi(2))).exp()
    })
}

/// Window origins covering `[0, n)` with step `round(window * (1 - overlap))`; the last window is
/// flush with the end.
pub fn window_starts(n: usize, window: usize, overlap: f64) -> Vec<usize> {
    if window >= n {
        return vec![0];
    }
    let step = ((window as f64 * (1.0 - overlap)).round() as usize).max(1);
    let mut v: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + window < n).collect();
    v.push(n - window);
    v
}

/// Tiles every axial slice of `case` with `window`-sized patches, blends the per-patch
/// probabilities with a Gaussian importance map, normalizes by the summed weights and maps the
/// result back to the original slice geometry.
pub fn sliding_window_predict<P: SlicePredictor + ?Sized>(
    model: &P,
    case: &PreparedCase,
    window: (usize, usize),
    overlap: f64,
    sigma_frac: f64,
    batch_size: usize,
) -> Result<ProbabilityVolume> {
    let (m, d, h, w) = case.image.dim();
    let (wh, ww) = window;
    if wh > h || ww > w || wh == 0 || ww == 0 {
        return Err(Error::config(format!("window {wh}x{ww} does not fit a {h}x{w} slice")));
    }
    let k = model.num_classes();
    let weight = gaussian_importance(wh, ww, sigma_frac);
    let mut tiles = Vec::new();
    for z in 0..d {
        for &r in &window_starts(h, wh, overlap) {
            for &c in &window_starts(w, ww, overlap) {
                tiles.push((z, r, c));
            }
        }
    }
    let mut acc = Array4::<f64>::zeros((k, d, h, w));
    let mut wsum = Array3::<f64>::zeros((d, h, w));
    for chunk in tiles.chunks(batch_size.max(1)) {
        let mut values = Vec::with_capacity(chunk.len() * m * wh * ww);
        for &(z, r, c) in chunk {
            values.extend(case.image.slice(s![.., z, r..r + wh, c..c + ww]).iter().copied());
        }
        let x = Tensor::from_vec(values, (chunk.len(), m, wh, ww), &Device::Cpu)?;
        let p = model.predict(&x)?;
        if p.dims() != [chunk.len(), k, wh, ww] {
            return Err(Error::shape(format!("predictor returned {:?}", p.dims())));
        }
        let p = p.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        let p = Array4::from_shape_vec((chunk.len(), k, wh, ww), p).map_err(|e| Error::shape(e.to_string()))?;
        for (i, &(z, r, c)) in chunk.iter().enumerate() {
            for ki in 0..k {
                let mut dst = acc.slice_mut(s![ki, z, r..r + wh, c..c + ww]);
                ndarray::Zip::from(&mut dst)
                    .and(&p.slice(s![i, ki, .., ..]))
                    .and(&weight)
                    .for_each(|a, &v, &g| *a += v * g);
            }
            let mut ws = wsum.slice_mut(s![z, r..r + wh, c..c + ww]);
            ws += &weight;
        }
    }
    let mut probs = Array4::<f32>::zeros((k, d, h, w));
    for ki in 0..k {
        ndarray::Zip::from(probs.index_axis_mut(Axis(0), ki))
            .and(acc.index_axis(Axis(0), ki))
            .and(&wsum)
            .for_each(|o, &a, &s| *o = (a / s).clamp(0.0, 1.0) as f32);
    }
    Ok(ProbabilityVolume {
        subject_id: case.subject_id.clone(),
        probs: restore_geometry(&case.transform, &probs)?,
        transform: case.transform,
        spacing: case.spacing,
    })
}

/// Sliding-window prediction with the window, overlap and sigma from `cfg`; the window defaults to
/// the full working slice.
pub fn predict_case<P: SlicePredictor + ?Sized>(model: &P, case: &PreparedCase, cfg: &InferenceConfig) -> Result<ProbabilityVolume> {
    let (_, _, h, w) = case.image.dim();
    let window = cfg.window.unwrap_or((h, w));
    sliding_window_predict(model, case, window, cfg.overlap, cfg.sigma_frac, cfg.batch_size)
}

/// Threshold and minimum connected-component size in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessParams {
    pub tau: f64,
    pub s_min: usize,
}

/// `P >= tau`, then removal of connected components with fewer than `s_min` voxels.
pub fn binarize_and_filter(probs: ArrayView3<f32>, params: PostprocessParams, conn: Connectivity) -> Array3<bool> {
    let fg = probs.mapv(|p| p as f64 >= params.tau);
    if params.s_min <= 1 {
        return fg;
    }
    remove_small(fg.view(), params.s_min, conn)
}

/// Per-class binarization; `per_class` overrides `params` for class `k` when present.
pub fn binarize_volume(
    pv: &ProbabilityVolume,
    params: PostprocessParams,
    per_class: Option<&[PostprocessParams]>,
    conn: Connectivity,
    class_names: Vec<String>,
) -> Result<Mask> {
    let (k, d, h, w) = pv.probs.dim();
    let mut data = Array4::<u8>::zeros((k, d, h, w));
    for ki in 0..k {
        let p = per_class.and_then(|v| v.get(ki).copied()).unwrap_or(params);
        let b = binarize_and_filter(pv.probs.index_axis(Axis(0), ki), p, conn);
        data.index_axis_mut(Axis(0), ki).assign(&b.mapv(u8::from));
    }
    Mask::new(data, class_names)
}

/// A validation case for the grid search.
#[derive(Debug, Clone)]
pub struct TuningCase {
    pub subject_id: String,
    pub split: Split,
    /// `[K, D, H, W]`
    pub probs: Array4<f32>,
    /// `[K, D, H, W]`
    pub truth: Array4<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub tau: f64,
    pub s_min: usize,
    pub mean_dsc: f64,
}

/// Outcome of the grid search, written as the tuner's JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerRecord {
    pub tau: f64,
    pub s_min: usize,
    pub mean_dsc: f64,
    /// Every cell in scan order (`tau` outer, `s_min` inner).
    pub grid_scores: Vec<GridScore>,
    pub provenance: String,
    pub validation_ids: Vec<String>,
    /// Separately tuned parameters per class, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<Vec<PostprocessParams>>,
}

impl TunerRecord {
    pub fn params(&self) -> PostprocessParams {
        PostprocessParams { tau: self.tau, s_min: self.s_min }
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Components of `P >= tau` with their sizes and overlap with the truth, for scoring every
/// `s_min` from one labeling.
struct ThresholdedClass {
    sizes: Vec<usize>,
    hits: Vec<usize>,
    truth: usize,
}

impl ThresholdedClass {
    fn new(probs: ArrayView3<f32>, truth: ArrayView3<u8>, tau: f64, conn: Connectivity) -> Self {
        let fg = probs.mapv(|p| p as f64 >= tau);
        let lab = label(fg.view(), conn);
        let mut hits = vec![0; lab.count];
        let mut n_truth = 0;
        for (&l, &t) in lab.labels.iter().zip(truth.iter()) {
            if t > 0 {
                n_truth += 1;
                if l > 0 {
                    hits[l as usize - 1] += 1;
                }
            }
        }
        ThresholdedClass { sizes: lab.sizes(), hits, truth: n_truth }
    }

    fn dsc(&self, s_min: usize) -> f64 {
        let (mut tp, mut pred) = (0, 0);
        for (&s, &h) in self.sizes.iter().zip(&self.hits) {
            if s >= s_min {
                pred += s;
                tp += h;
            }
        }
        let denom = pred + self.truth;
        if denom == 0 {
            1.0
        } else {
            (2 * tp) as f64 / denom as f64
        }
    }
}

fn check_validation_only(cases: &[TuningCase]) -> Result<()> {
    if let Some(c) = cases.iter().find(|c| c.split != Split::Validation) {
        return Err(Error::Leakage(format!(
            "tuning received {} case `{}`; only validation cases may be used",
            serde_json::to_string(&c.split).unwrap_or_default(),
            c.subject_id
        )));
    }
    Ok(())
}

/// Exhaustive search for the `(tau, s_min)` maximizing the mean over cases of the class-averaged
/// DSC. The first cell reaching the maximum in scan order wins (strict improvement).
pub fn tune_params(cases: &[TuningCase], taus: &[f64], s_mins: &[usize], conn: Connectivity) -> Result<TunerRecord> {
    if taus.is_empty() || s_mins.is_empty() {
        return Err(Error::config("empty tuning grid"));
    }
    if cases.is_empty() {
        return Err(Error::config("tuning needs at least one validation case"));
    }
    check_validation_only(cases)?;
    for c in cases {
        if c.probs.dim() != c.truth.dim() {
            return Err(Error::data(&c.subject_id, "probabilities and truth differ in shape"));
        }
    }
    let mut grid_scores = Vec::with_capacity(taus.len() * s_mins.len());
    let mut best = GridScore { tau: taus[0], s_min: s_mins[0], mean_dsc: f64::NEG_INFINITY };
    for &tau in taus {
        let per_case: Vec<Vec<ThresholdedClass>> = cases
            .iter()
            .map(|c| {
                (0..c.probs.dim().0)
                    .map(|k| ThresholdedClass::new(c.probs.index_axis(Axis(0), k), c.truth.index_axis(Axis(0), k), tau, conn))
                    .collect()
            })
            .collect();
        for &s_min in s_mins {
            let mut total = 0.0;
            for classes in &per_case {
                let sum: f64 = classes.iter().map(|t| t.dsc(s_min)).sum();
                total += sum / classes.len() as f64;
            }
            let cell = GridScore { tau, s_min, mean_dsc: total / cases.len() as f64 };
            if cell.mean_dsc > best.mean_dsc {
                best = cell;
            }
            grid_scores.push(cell);
        }
    }
    let mut validation_ids: Vec<String> = cases.iter().map(|c| c.subject_id.clone()).collect();
    validation_ids.sort();
    Ok(TunerRecord {
        tau: best.tau,
        s_min: best.s_min,
        mean_dsc: best.mean_dsc,
        grid_scores,
        provenance: VALIDATION_ONLY.to_string(),
        validation_ids,
        per_class: None,
    })
}

/// Runs [`tune_params`] once per class and records the per-class winners; the shared fields hold
/// the joint search.
pub fn tune_params_per_class(cases: &[TuningCase], taus: &[f64], s_mins: &[usize], conn: Connectivity) -> Result<TunerRecord> {
    let mut record = tune_params(cases, taus, s_mins, conn)?;
    let k = cases[0].probs.dim().0;
    let mut per_class = Vec::with_capacity(k);
    for ki in 0..k {
        let single: Vec<TuningCase> = cases
            .iter()
            .map(|c| TuningCase {
                subject_id: c.subject_id.clone(),
                split: c.split,
                probs: c.probs.slice(s![ki..ki + 1, .., .., ..]).to_owned(),
                truth: c.truth.slice(s![ki..ki + 1, .., .., ..]).to_owned(),
            })
            .collect();
        per_class.push(tune_params(&single, taus, s_mins, conn)?.params());
    }
    record.per_class = Some(per_class);
    Ok(record)
}

/// Grid search using the grids and connectivity of `cfg`.
pub fn tune_with_config(cases: &[TuningCase], cfg: &InferenceConfig) -> Result<TunerRecord> {
    let conn = Connectivity::from_count(cfg.connectivity as usize)?;
    let (taus, s_mins) = (cfg.tau_grid(), cfg.s_min_grid());
    if cfg.per_class_tuning {
        tune_params_per_class(cases, &taus, &s_mins, conn)
    } else {
        tune_params(cases, &taus, &s_mins, conn)
    }
}

/// Metrics of every class of one case. Masks must share geometry and class names.
pub fn score_case(subject_id: &str, pred: &Mask, truth: &Mask, spacing: Spacing, rule: MatchRule) -> Result<CaseMetrics> {
    if pred.data.dim() != truth.data.dim() {
        return Err(Error::shape(format!(
            "{subject_id}: prediction has shape {:?}, ground truth {:?}",
            pred.data.dim(),
            truth.data.dim()
        )));
    }
    if pred.class_names != truth.class_names {
        return Err(Error::shape(format!(
            "{subject_id}: prediction classes {:?} differ from ground truth {:?}",
            pred.class_names, truth.class_names
        )));
    }
    let classes = (0..truth.num_classes())
        .map(|k| {
            let p = pred.class(k).mapv(|v| v > 0);
            let t = truth.class(k).mapv(|v| v > 0);
            ClassMetrics::compute(&truth.class_names[k], p.view(), t.view(), spacing, rule)
        })
        .collect();
    Ok(CaseMetrics { subject_id: subject_id.to_string(), classes })
}

/// Mean over cases of the class-averaged DSC after post-processing with `params`.
pub fn cohort_mean_dsc<P: SlicePredictor + ?Sized>(
    model: &P,
    cases: &[PreparedCase],
    params: PostprocessParams,
    cfg: &InferenceConfig,
) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::config("no cases to score"));
    }
    let conn = Connectivity::from_count(cfg.connectivity as usize)?;
    let mut total = 0.0;
    for case in cases {
        let pv = predict_case(model, case, cfg)?;
        let pred = binarize_volume(&pv, params, None, conn, case.class_names.clone())?;
        let k = pred.num_classes();
        let sum: f64 = (0..k)
            .map(|c| {
                let p = pred.class(c).mapv(|v| v > 0);
                let t = case.original_mask.class(c).mapv(|v| v > 0);
                crate::metrics::dsc(p.view(), t.view())
            })
            .sum();
        total += sum / k as f64;
    }
    Ok(total / cases.len() as f64)
}

/// Refuses parameters that were not tuned on validation data only, or whose validation set
/// overlaps the cases about to be evaluated.
pub fn check_provenance(record: &TunerRecord, test_ids: &[&str]) -> Result<()> {
    if record.provenance != VALIDATION_ONLY {
        return Err(Error::Leakage(format!(
            "post-processing parameters have provenance `{}`, expected `{VALIDATION_ONLY}`",
            record.provenance
        )));
    }
    if let Some(id) = test_ids.iter().find(|id| record.validation_ids.iter().any(|v| v == *id)) {
        return Err(Error::Leakage(format!("test case `{id}` was used for tuning")));
    }
    Ok(())
}

/// Predicts, post-processes and scores test cases with tuned parameters.
pub fn evaluate_test<P: SlicePredictor + ?Sized>(
    model: &P,
    cases: &[(PreparedCase, Split)],
    record: &TunerRecord,
    cfg: &InferenceConfig,
    rule: MatchRule,
) -> Result<CohortReport> {
    if let Some((c, _)) = cases.iter().find(|(_, s)| *s != Split::Test) {
        return Err(Error::Leakage(format!("`{}` is not tagged as a test case", c.subject_id)));
    }
    let ids: Vec<&str> = cases.iter().map(|(c, _)| c.subject_id.as_str()).collect();
    check_provenance(record, &ids)?;
    let conn = Connectivity::from_count(cfg.connectivity as usize)?;
    let mut metrics = Vec::with_capacity(cases.len());
    for (case, _) in cases {
        let pv = predict_case(model, case, cfg)?;
        let pred = binarize_volume(&pv, record.params(), record.per_class.as_deref(), conn, case.class_names.clone())?;
        metrics.push(score_case(&case.subject_id, &pred, &case.original_mask, case.spacing, rule)?);
    }
    aggregate(&metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dsc;

    /// Probability equal to the window mean of channel 0, everywhere in the window.
    struct MeanPredictor;

    impl SlicePredictor for MeanPredictor {
        fn num_classes(&self) -> usize {
            1
        }

        fn predict(&self, x: &Tensor) -> Result<Tensor> {
            let (b, _, h, w) = x.dims4()?;
            let mean = x.narrow(1, 0, 1)?.mean_keepdim(2)?.mean_keepdim(3)?;
            Ok(mean.broadcast_as((b, 1, h, w))?.contiguous()?)
        }
    }

    /// Identity on channel 0.
    struct EchoPredictor;

    impl SlicePredictor for EchoPredictor {
        fn num_classes(&self) -> usize {
            1
        }

        fn predict(&self, x: &Tensor) -> Result<Tensor> {
            Ok(x.narrow(1, 0, 1)?.contiguous()?)
        }
    }

    fn prepared(image: Array4<f32>) -> PreparedCase {
        let (_, d, h, w) = image.dim();
        PreparedCase {
            subject_id: "s".into(),
            mask: Array4::zeros((1, d, h, w)),
            class_names: vec!["lesion".into()],
            transform: CropPad::new((h, w), (h, w)),
            spacing: [1.0; 3],
            original_mask: Mask::new(Array4::zeros((1, d, h, w)), vec!["lesion".into()]).unwrap(),
            image,
        }
    }

    #[test]
    fn starts_cover_the_axis() {
        assert_eq!(window_starts(16, 16, 0.5), vec![0]);
        assert_eq!(window_starts(16, 8, 0.5), vec![0, 4, 8]);
        assert_eq!(window_starts(12, 8, 0.5), vec![0, 4]);
        assert_eq!(window_starts(13, 8, 0.5), vec![0, 4, 5]);
    }

    #[test]
    fn single_window_equals_full_slice_prediction() {
        let img = Array4::from_shape_fn((1, 2, 8, 8), |(_, z, r, c)| ((z * 64 + r * 8 + c) as f32) / 128.0);
        let case = prepared(img.clone());
        let pv = sliding_window_predict(&EchoPredictor, &case, (8, 8), 0.5, 0.125, 4).unwrap();
        for (a, b) in pv.probs.iter().zip(img.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_output_survives_any_tiling() {
        let img = Array4::from_elem((1, 1, 12, 20), 0.3f32);
        let pv = sliding_window_predict(&MeanPredictor, &prepared(img), (8, 8), 0.5, 0.125, 3).unwrap();
        assert!(pv.probs.iter().all(|&p| (p - 0.3).abs() < 1e-6));
    }

    #[test]
    fn overlap_is_gaussian_weighted_mean() {
        // Two windows of width 8 over 12 columns: starts 0 and 4, overlap columns 4..8.
        let (a, b) = (0.2f32, 0.8f32);
        let img = Array4::from_shape_fn((1, 1, 8, 12), |(_, _, _, c)| if c < 4 { a } else if c >= 8 { b } else { 0.5 });
        let pv = sliding_window_predict(&MeanPredictor, &prepared(img), (8, 8), 0.5, 0.125, 2).unwrap();
        // Window means: left (4 a + 4 * 0.5) / 8, right (4 * 0.5 + 4 b) / 8.
        let (pa, pb) = ((4.0 * a as f64 + 2.0) / 8.0, (2.0 + 4.0 * b as f64) / 8.0);
        let g = |x: f64| (-0.5 * ((x - 3.5) / 1.0).powi(2)).exp();
        for col in 4..8 {
            let (wl, wr) = (g(col as f64), g((col - 4) as f64));
            let want = (wl * pa + wr * pb) / (wl + wr);
            for row in 0..8 {
                assert!((pv.probs[[0, 0, row, col]] as f64 - want).abs() < 1e-6, "col {col}");
            }
        }
        assert!((pv.probs[[0, 0, 0, 0]] as f64 - pa).abs() < 1e-6);
        assert!((pv.probs[[0, 0, 0, 11]] as f64 - pb).abs() < 1e-6);
    }

    #[test]
    fn filter_drops_small_components() {
        let mut p = Array3::<f32>::zeros((1, 6, 12));
        for c in 0..3 {
            p[[0, 0, c]] = 0.9;
        }
        for c in 0..10 {
            p[[0, 4, c]] = 0.9;
        }
        let m = binarize_and_filter(p.view(), PostprocessParams { tau: 0.5, s_min: 5 }, Connectivity::TwentySix);
        assert_eq!(m.iter().filter(|&&v| v).count(), 10);
        assert!(!m[[0, 0, 0]]);
        let mut q = Array3::<f32>::zeros((1, 5, 5));
        q[[0, 0, 0]] = 1.0;
        q[[0, 3, 3]] = 1.0;
        q[[0, 3, 4]] = 1.0;
        let m = binarize_and_filter(q.view(), PostprocessParams { tau: 0.5, s_min: 2 }, Connectivity::TwentySix);
        assert_eq!(m.iter().filter(|&&v| v).count(), 2);
        let half = Array3::from_elem((1, 2, 2), 0.5f32);
        let m = binarize_and_filter(half.view(), PostprocessParams { tau: 0.5, s_min: 0 }, Connectivity::TwentySix);
        assert!(m.iter().all(|&v| v));
    }

    fn tuning_case(id: &str, split: Split) -> TuningCase {
        let truth = Array4::from_shape_fn((1, 1, 4, 4), |(_, _, r, c)| u8::from(r < 2 && c < 2));
        let probs = truth.mapv(|t| if t > 0 { 0.6 } else { 0.2 });
        TuningCase { subject_id: id.into(), split, probs, truth }
    }

    #[test]
    fn one_cell_grid_and_tie_break() {
        let cases = vec![tuning_case("v1", Split::Validation)];
        let r = tune_params(&cases, &[0.3], &[2], Connectivity::TwentySix).unwrap();
        assert_eq!((r.tau, r.s_min), (0.3, 2));
        // Every tau in (0.2, 0.6] separates perfectly; the first one wins.
        let r = tune_params(&cases, &[0.1, 0.3, 0.5, 0.7], &[2, 3, 4, 5], Connectivity::TwentySix).unwrap();
        assert_eq!((r.tau, r.s_min, r.mean_dsc), (0.3, 2, 1.0));
        assert_eq!(r.grid_scores.len(), 16);
        assert!(tune_params(&cases, &[], &[2], Connectivity::TwentySix).is_err());
    }

    #[test]
    fn leakage_guard_rejects_test_cases() {
        let cases = vec![tuning_case("v1", Split::Validation), tuning_case("t1", Split::Test)];
        let err = tune_params(&cases, &[0.5], &[2], Connectivity::TwentySix).unwrap_err();
        assert!(matches!(err, Error::Leakage(_)));
        let ok = tune_params(&cases[..1], &[0.5], &[2], Connectivity::TwentySix).unwrap();
        assert!(check_provenance(&ok, &["t1"]).is_ok());
        assert!(check_provenance(&ok, &["v1"]).is_err());
        let mut forged = ok.clone();
        forged.provenance = String::new();
        assert!(check_provenance(&forged, &["t1"]).is_err());
    }

    #[test]
    fn filter_is_monotone_in_s_min() {
        let p = Array3::from_shape_fn((3, 7, 7), |(z, r, c)| ((z * 13 + r * 7 + c * 3) % 10) as f32 / 10.0);
        let mut prev = usize::MAX;
        for s_min in 0..12 {
            let m = binarize_and_filter(p.view(), PostprocessParams { tau: 0.6, s_min }, Connectivity::Six);
            let n = m.iter().filter(|&&v| v).count();
            assert!(n <= prev);
            prev = n;
        }
        let m = binarize_and_filter(p.view(), PostprocessParams { tau: 0.6, s_min: 0 }, Connectivity::Six);
        assert_eq!(dsc(m.view(), m.view()), 1.0);
    }
}
