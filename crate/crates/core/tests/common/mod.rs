//! Brute-force reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::collections::VecDeque;

use ndarray::{Array3, ArrayView3};

/// Component labels (0 = background) under 26-connectivity, by breadth-first search.
pub fn bfs_labels(mask: ArrayView3<bool>) -> (Array3<usize>, usize) {
    let (nz, ny, nx) = mask.dim();
    let mut labels = Array3::<usize>::zeros((nz, ny, nx));
    let mut count = 0;
    for start in ndarray::indices((nz, ny, nx)) {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        let mut queue = VecDeque::from([start]);
        while let Some((z, y, x)) = queue.pop_front() {
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (zz, yy, xx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                        if zz < 0 || yy < 0 || xx < 0 || zz >= nz as i64 || yy >= ny as i64 || xx >= nx as i64 {
                            continue;
                        }
                        let p = (zz as usize, yy as usize, xx as usize);
                        if mask[p] && labels[p] == 0 {
                            labels[p] = count;
                            queue.push_back(p);
                        }
                    }
                }
            }
        }
    }
    (labels, count)
}

/// Keeps components with at least `min_size` voxels.
pub fn keep_large(mask: ArrayView3<bool>, min_size: usize) -> Array3<bool> {
    let (labels, n) = bfs_labels(mask);
    let mut sizes = vec![0usize; n + 1];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    labels.mapv(|l| l > 0 && sizes[l] >= min_size)
}

pub fn counts(pred: ArrayView3<bool>, gt: ArrayView3<bool>) -> (usize, usize, usize) {
    let mut c = (0, 0, 0);
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        match (p, g) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            _ => {}
        }
    }
    c
}

pub fn dice(pred: ArrayView3<bool>, gt: ArrayView3<bool>) -> f64 {
    let (tp, fp, fn_) = counts(pred, gt);
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn surface(mask: ArrayView3<bool>) -> Vec<[usize; 3]> {
    let (nz, ny, nx) = mask.dim();
    let dims = [nz as i64, ny as i64, nx as i64];
    let mut out = Vec::new();
    for (z, y, x) in ndarray::indices((nz, ny, nx)) {
        if !mask[[z, y, x]] {
            continue;
        }
        let p = [z as i64, y as i64, x as i64];
        let exposed = (0..3).any(|axis| {
            [-1i64, 1].iter().any(|&step| {
                let mut q = p;
                q[axis] += step;
                q[axis] < 0 || q[axis] >= dims[axis] || !mask[[q[0] as usize, q[1] as usize, q[2] as usize]]
            })
        });
        if exposed {
            out.push([z, y, x]);
        }
    }
    out
}

fn interpolated_percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = (v.len() - 1) as f64 * q / 100.0;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Exhaustive all-pairs 95th-percentile surface distance; the diagonal when a mask is empty.
pub fn hd95_all_pairs(pred: ArrayView3<bool>, gt: ArrayView3<bool>, spacing: [f64; 3]) -> f64 {
    let (a, b) = (surface(pred), surface(gt));
    if a.is_empty() || b.is_empty() {
        let (nz, ny, nx) = pred.dim();
        let d = [nz as f64 * spacing[0], ny as f64 * spacing[1], nx as f64 * spacing[2]];
        return (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    }
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| -> Vec<f64> {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| {
                        (0..3)
                            .map(|i| ((p[i] as f64 - q[i] as f64) * spacing[i]).powi(2))
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect()
    };
    interpolated_percentile(directed(&a, &b), 95.0).max(interpolated_percentile(directed(&b, &a), 95.0))
}

/// `(tp, fp, fn)` lesions: ground-truth components hit by a matching prediction, predicted
/// components matching nothing, and ground-truth components never hit. `iou = None` matches on
/// any overlap.
pub fn lesion_counts(pred: ArrayView3<bool>, gt: ArrayView3<bool>, iou: Option<f64>) -> (usize, usize, usize) {
    let (lp, np) = bfs_labels(pred);
    let (lg, ng) = bfs_labels(gt);
    let mut inter = vec![vec![0usize; ng + 1]; np + 1];
    let mut sp = vec![0usize; np + 1];
    let mut sg = vec![0usize; ng + 1];
    for (&a, &b) in lp.iter().zip(lg.iter()) {
        sp[a] += 1;
        sg[b] += 1;
        inter[a][b] += 1;
    }
    let hit = |a: usize, b: usize| {
        let i = inter[a][b];
        match iou {
            None => i > 0,
            Some(t) => i > 0 && i as f64 / (sp[a] + sg[b] - i) as f64 >= t,
        }
    };
    let tp = (1..=ng).filter(|&b| (1..=np).any(|a| hit(a, b))).count();
    let fp = (1..=np).filter(|&a| !(1..=ng).any(|b| hit(a, b))).count();
    (tp, fp, ng - tp)
}
