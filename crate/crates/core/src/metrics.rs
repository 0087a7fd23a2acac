//! Voxel-level and lesion-level segmentation metrics on 3-D binary masks.

use ndarray::ArrayView3;
use serde::{Deserialize, Serialize};

use crate::components::{label, Connectivity};
use crate::distance::squared_edt;
use crate::volume::Spacing;

/// `2TP / (2TP + FP + FN)`; 1.0 when both masks are empty.
pub fn dsc(pred: ArrayView3<bool>, gt: ArrayView3<bool>) -> f64 {
    let c = Confusion::count(pred, gt);
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn count(pred: ArrayView3<bool>, gt: ArrayView3<bool>) -> Self {
        assert_eq!(pred.dim(), gt.dim(), "mask shapes differ");
        let mut c = Confusion::default();
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                _ => {}
            }
        }
        c
    }
}

/// Euclidean length of the volume diagonal in mm; returned by [`hd95`] when a mask is empty.
pub fn volume_diagonal(shape: (usize, usize, usize), spacing: Spacing) -> f64 {
    let d = [shape.0 as f64 * spacing[0], shape.1 as f64 * spacing[1], shape.2 as f64 * spacing[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Foreground voxels with at least one background (or out-of-volume) face neighbour.
pub fn boundary(mask: ArrayView3<bool>) -> Vec<bool> {
    let (nz, ny, nx) = mask.dim();
    let mut out = vec![false; nz * ny * nx];
    for ((z, y, x), &fg) in mask.indexed_iter() {
        if !fg {
            continue;
        }
        let bg = |dz: isize, dy: isize, dx: isize| {
            let (zz, yy, xx) = (z as isize + dz, y as isize + dy, x as isize + dx);
            if zz < 0 || yy < 0 || xx < 0 || zz >= nz as isize || yy >= ny as isize || xx >= nx as isize {
                return true;
            }
            !mask[[zz as usize, yy as usize, xx as usize]]
        };
        out[(z * ny + y) * nx + x] = bg(-1, 0, 0) || bg(1, 0, 0) || bg(0, -1, 0) || bg(0, 1, 0) || bg(0, 0, -1) || bg(0, 0, 1);
    }
    out
}

/// Linear-interpolation percentile of unsorted values, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty set");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

pub fn percentile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = (v.len() - 1) as f64 * q / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Distances from each boundary voxel of `from` to the nearest boundary voxel of `to`.
fn directed_surface_distances(from: &[bool], to: &[bool], shape: [usize; 3], spacing: Spacing) -> Vec<f64> {
    let d2 = squared_edt(to, &shape, &spacing);
    from.iter()
        .zip(&d2)
        .filter(|(&b, _)| b)
        .map(|(_, &d)| d.sqrt())
        .collect()
}

/// Symmetric 95th-percentile surface distance in mm. `(value, sentinel)`: when either mask is
/// empty the value is the volume diagonal and `sentinel` is true.
pub fn hd95(pred: ArrayView3<bool>, gt: ArrayView3<bool>, spacing: Spacing) -> (f64, bool) {
    assert_eq!(pred.dim(), gt.dim(), "mask shapes differ");
    let dim = pred.dim();
    let bp = boundary(pred);
    let bg = boundary(gt);
    if !bp.iter().any(|&b| b) || !bg.iter().any(|&b| b) {
        return (volume_diagonal(dim, spacing), true);
    }
    let shape = [dim.0, dim.1, dim.2];
    let ab = directed_surface_distances(&bp, &bg, shape, spacing);
    let ba = directed_surface_distances(&bg, &bp, shape, spacing);
    (percentile(&ab, 95.0).max(percentile(&ba, 95.0)), false)
}

/// `|V_gt - V_pred| / V_gt * 100`. `(value, sentinel)`: for an empty ground truth the value is 0
/// when the prediction is empty too and 100 otherwise, with `sentinel` set.
pub fn avd(pred: ArrayView3<bool>, gt: ArrayView3<bool>, spacing: Spacing) -> (f64, bool) {
    let voxel = spacing[0] * spacing[1] * spacing[2];
    let vp = pred.iter().filter(|&&b| b).count() as f64 * voxel;
    let vg = gt.iter().filter(|&&b| b).count() as f64 * voxel;
    if vg == 0.0 {
        return (if vp == 0.0 { 0.0 } else { 100.0 }, true);
    }
    ((vg - vp).abs() / vg * 100.0, false)
}

/// How a predicted component is matched to a ground-truth lesion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "threshold")]
pub enum MatchRule {
    /// Any shared voxel.
    Overlap,
    /// Intersection over union of the two components at least the threshold.
    Iou(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LesionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl LesionCounts {
    /// `TP / (TP + FN)`; 1.0 when all counts are zero, 0.0 when only false positives exist.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            if self.fp == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    /// `2TP / (2TP + FP + FN)`; 1.0 when all counts are zero.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

/// Detected, spurious and missed lesions under 26-connectivity.
pub fn lesion_match(pred: ArrayView3<bool>, gt: ArrayView3<bool>, rule: MatchRule) -> LesionCounts {
    assert_eq!(pred.dim(), gt.dim(), "mask shapes differ");
    let lp = label(pred, Connectivity::TwentySix);
    let lg = label(gt, Connectivity::TwentySix);
    let (np, ng) = (lp.count, lg.count);
    // Pairwise overlap counts between predicted and ground-truth components.
    let mut overlap = std::collections::HashMap::<(u32, u32), usize>::new();
    for (&a, &b) in lp.labels.iter().zip(lg.labels.iter()) {
        if a > 0 && b > 0 {
            *overlap.entry((a, b)).or_default() += 1;
        }
    }
    let sp = lp.sizes();
    let sg = lg.sizes();
    let matched = |a: u32, b: u32, inter: usize| match rule {
        MatchRule::Overlap => inter > 0,
        MatchRule::Iou(t) => {
            let union = sp[a as usize - 1] + sg[b as usize - 1] - inter;
            inter as f64 / union as f64 >= t
        }
    };
    let mut gt_hit = vec![false; ng];
    let mut pred_hit = vec![false; np];
    for (&(a, b), &inter) in &overlap {
        if matched(a, b, inter) {
            pred_hit[a as usize - 1] = true;
            gt_hit[b as usize - 1] = true;
        }
    }
    let tp = gt_hit.iter().filter(|&&h| h).count();
    LesionCounts {
        tp,
        fp: pred_hit.iter().filter(|&&h| !h).count(),
        fn_: ng - tp,
    }
}

/// Metrics of one class of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub dsc: f64,
    pub hd95: f64,
    pub hd95_sentinel: bool,
    pub avd: f64,
    pub avd_sentinel: bool,
    pub lesions: LesionCounts,
    pub lesion_recall: f64,
    pub lesion_f1: f64,
}

impl ClassMetrics {
    pub fn compute(class: &str, pred: ArrayView3<bool>, gt: ArrayView3<bool>, spacing: Spacing, rule: MatchRule) -> Self {
        let (hd, hd_s) = hd95(pred, gt, spacing);
        let (av, av_s) = avd(pred, gt, spacing);
        let lesions = lesion_match(pred, gt, rule);
        ClassMetrics {
            class: class.to_string(),
            dsc: dsc(pred, gt),
            hd95: hd,
            hd95_sentinel: hd_s,
            avd: av,
            avd_sentinel: av_s,
            lesion_recall: lesions.recall(),
            lesion_f1: lesions.f1(),
            lesions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub subject_id: String,
    pub classes: Vec<ClassMetrics>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn mask(dim: (usize, usize, usize), on: &[[usize; 3]]) -> Array3<bool> {
        let mut m = Array3::from_elem(dim, false);
        for p in on {
            m[*p] = true;
        }
        m
    }

    #[test]
    fn dsc_hand_values() {
        let p = mask((1, 1, 8), &[[0, 0, 0], [0, 0, 1], [0, 0, 2]]);
        let g = mask((1, 1, 8), &[[0, 0, 0], [0, 0, 1], [0, 0, 3], [0, 0, 4]]);
        assert!((dsc(p.view(), g.view()) - 4.0 / 7.0).abs() < 1e-15);
        let e = mask((1, 1, 8), &[]);
        assert_eq!(dsc(e.view(), e.view()), 1.0);
        let d = mask((1, 1, 8), &[[0, 0, 7]]);
        assert_eq!(dsc(d.view(), g.view()), 0.0);
    }

    #[test]
    fn hd95_two_points() {
        let p = mask((1, 1, 10), &[[0, 0, 1]]);
        let g = mask((1, 1, 10), &[[0, 0, 6]]);
        assert_eq!(hd95(p.view(), g.view(), [1.0, 1.0, 1.0]), (5.0, false));
        assert_eq!(hd95(p.view(), p.view(), [1.0, 1.0, 1.0]), (0.0, false));
        let e = mask((1, 1, 10), &[]);
        let (v, s) = hd95(p.view(), e.view(), [2.0, 1.0, 1.0]);
        assert!(s);
        assert!((v - (4.0f64 + 1.0 + 100.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn avd_hand_values() {
        let g = Array3::from_shape_fn((1, 1, 20), |(_, _, x)| x < 10);
        let p = Array3::from_shape_fn((1, 1, 20), |(_, _, x)| x < 13);
        assert!((avd(p.view(), g.view(), [1.0, 1.0, 1.0]).0 - 30.0).abs() < 1e-12);
        assert!((avd(p.view(), g.view(), [2.0, 2.0, 2.0]).0 - 30.0).abs() < 1e-12);
        assert!(avd(p.view(), p.view().mapv(|_| false).view(), [1.0; 3]).1);
    }

    #[test]
    fn blob_spanning_two_lesions_detects_both() {
        let g = mask((8, 8, 8), &[[4, 4, 1], [4, 4, 5]]);
        let p = Array3::from_shape_fn((8, 8, 8), |(z, y, x)| z == 4 && y == 4 && x <= 6);
        let c = lesion_match(p.view(), g.view(), MatchRule::Overlap);
        assert_eq!(c, LesionCounts { tp: 2, fp: 0, fn_: 0 });
        let empty = mask((8, 8, 8), &[]);
        let c = lesion_match(empty.view(), g.view(), MatchRule::Overlap);
        assert_eq!(c, LesionCounts { tp: 0, fp: 0, fn_: 2 });
        assert_eq!(c.recall(), 0.0);
    }

    #[test]
    fn lesion_scores() {
        let c = LesionCounts { tp: 2, fp: 1, fn_: 1 };
        assert!((c.recall() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.f1() - 4.0 / 6.0).abs() < 1e-15);
        let z = LesionCounts::default();
        assert_eq!((z.recall(), z.f1()), (1.0, 1.0));
    }

    #[test]
    fn iou_rule_rejects_small_overlap() {
        let g = Array3::from_shape_fn((1, 1, 10), |(_, _, x)| x < 5);
        let p = Array3::from_shape_fn((1, 1, 10), |(_, _, x)| (4..10).contains(&x));
        let c = lesion_match(p.view(), g.view(), MatchRule::Iou(0.5));
        assert_eq!(c, LesionCounts { tp: 0, fp: 1, fn_: 1 });
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile(&v, 2.0) - 2.98).abs() < 1e-12);
        assert!((percentile(&v, 98.0) - 98.02).abs() < 1e-12);
    }
}
