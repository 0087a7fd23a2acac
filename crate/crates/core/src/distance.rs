//! Exact Euclidean distance transforms on anisotropic grids.

use ndarray::{Array2, ArrayView2};

pub use crate::config::DistanceMode;

/// Squared distance from every voxel to the nearest `true` voxel of `seeds`, row-major over
/// `shape` with per-axis `spacing`. Voxels are `f64::INFINITY` when `seeds` is empty.
pub fn squared_edt(seeds: &[bool], shape: &[usize], spacing: &[f64]) -> Vec<f64> {
    assert_eq!(shape.len(), spacing.len(), "one spacing per axis");
    assert_eq!(seeds.len(), shape.iter().product::<usize>(), "seed count");
    let mut d: Vec<f64> = seeds
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..shape.len() {
        let n = shape[axis];
        let stride: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        for o in 0..outer {
            for i in 0..stride {
                let base = o * n * stride + i;
                line.clear();
                line.extend((0..n).map(|k| d[base + k * stride]));
                lower_envelope(&line, spacing[axis], &mut out);
                for k in 0..n {
                    d[base + k * stride] = out[k];
                }
            }
        }
    }
    d
}

/// One-dimensional pass: `out[p] = min_q (s(p - q))^2 + f[q]`.
fn lower_envelope(f: &[f64], s: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let x = |q: usize| q as f64 * s;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let cut = ((f[q] + x(q) * x(q)) - (f[p] + x(p) * x(p))) / (2.0 * (x(q) - x(p)));
                    if cut <= z[z.len() - 1] {
                        v.pop();
                        z.pop();
                        if v.is_empty() {
                            z.clear();
                        }
                    } else {
                        v.push(q);
                        z.push(cut);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        return;
    }
    z.push(f64::INFINITY);
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let xp = x(p);
        while z[k + 1] < xp {
            k += 1;
        }
        let dq = xp - x(v[k]);
        *o = dq * dq + f[v[k]];
    }
}

/// Distances to the nearest `true` voxel (not squared).
pub fn edt(seeds: &[bool], shape: &[usize], spacing: &[f64]) -> Vec<f64> {
    squared_edt(seeds, shape, spacing)
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

/// Per-slice distance map of a binary target.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    pub values: Array2<f64>,
    pub mode: DistanceMode,
    /// The target had no foreground, so every value is the cap.
    pub empty_target: bool,
}

/// Distance map of a 2-D binary mask with `(dy, dx)` spacing.
///
/// `UnsignedOutside`: 0 on the foreground, distance to the nearest foreground pixel elsewhere.
/// `Signed`: the same outside; inside, minus the distance to the nearest background pixel less
/// one pixel step, so pixels on the inner boundary are 0. Values are capped at `cap`, and an
/// empty target maps to `cap` everywhere.
pub fn distance_map(mask: ArrayView2<u8>, spacing: (f64, f64), mode: DistanceMode, cap: f64) -> DistanceMap {
    let (h, w) = mask.dim();
    let fg: Vec<bool> = mask.iter().map(|&v| v > 0).collect();
    let shape = [h, w];
    let sp = [spacing.0, spacing.1];
    if !fg.iter().any(|&b| b) {
        return DistanceMap {
            values: Array2::from_elem((h, w), cap),
            mode,
            empty_target: true,
        };
    }
    let outside = edt(&fg, &shape, &sp);
    let inside = match mode {
        DistanceMode::UnsignedOutside => None,
        DistanceMode::Signed => {
            let bg: Vec<bool> = fg.iter().map(|&b| !b).collect();
            Some(edt(&bg, &shape, &sp))
        }
    };
    let step = spacing.0.min(spacing.1);
    let values = Array2::from_shape_fn((h, w), |(r, c)| {
        let i = r * w + c;
        if fg[i] {
            match &inside {
                Some(d) if d[i].is_finite() => -(d[i] - step).clamp(0.0, cap),
                _ => 0.0,
            }
        } else {
            outside[i].min(cap)
        }
    });
    DistanceMap {
        values,
        mode,
        empty_target: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(seeds: &[bool], shape: &[usize], spacing: &[f64]) -> Vec<f64> {
        let n = seeds.len();
        let coords = |mut i: usize| {
            let mut c = vec![0usize; shape.len()];
            for a in (0..shape.len()).rev() {
                c[a] = i % shape[a];
                i /= shape[a];
            }
            c
        };
        (0..n)
            .map(|p| {
                let cp = coords(p);
                (0..n)
                    .filter(|&q| seeds[q])
                    .map(|q| {
                        let cq = coords(q);
                        (0..shape.len())
                            .map(|a| {
                                let d = (cp[a] as f64 - cq[a] as f64) * spacing[a];
                                d * d
                            })
                            .sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn single_pixel_distance_scales_with_spacing() {
        let mut m = Array2::<u8>::zeros((8, 8));
        m[[4, 2]] = 1;
        let d = distance_map(m.view(), (1.0, 0.5), DistanceMode::UnsignedOutside, 300.0);
        assert_eq!(d.values[[4, 5]], 1.5);
        assert_eq!(d.values[[4, 2]], 0.0);
        assert!(!d.empty_target);
    }

    #[test]
    fn full_and_empty_targets() {
        let full = Array2::<u8>::ones((4, 4));
        let d = distance_map(full.view(), (1.0, 1.0), DistanceMode::UnsignedOutside, 300.0);
        assert!(d.values.iter().all(|&v| v == 0.0));
        let empty = Array2::<u8>::zeros((4, 4));
        let d = distance_map(empty.view(), (1.0, 1.0), DistanceMode::UnsignedOutside, 300.0);
        assert!(d.empty_target);
        assert!(d.values.iter().all(|&v| v == 300.0));
    }

    #[test]
    fn signed_is_negative_inside() {
        let mut m = Array2::<u8>::zeros((9, 9));
        for r in 2..7 {
            for c in 2..7 {
                m[[r, c]] = 1;
            }
        }
        let d = distance_map(m.view(), (1.0, 1.0), DistanceMode::Signed, 300.0);
        assert_eq!(d.values[[4, 4]], -2.0);
        assert_eq!(d.values[[2, 4]], 0.0);
        assert_eq!(d.values[[0, 4]], 2.0);
    }

    proptest! {
        #[test]
        fn matches_brute_force_2d(bits in proptest::collection::vec(proptest::bool::weighted(0.1), 12 * 9),
                                  sy in 0.5f64..3.0, sx in 0.5f64..3.0) {
            let shape = [12, 9];
            let got = squared_edt(&bits, &shape, &[sy, sx]);
            let want = brute(&bits, &shape, &[sy, sx]);
            for (g, w) in got.iter().zip(&want) {
                if w.is_infinite() {
                    prop_assert!(g.is_infinite());
                } else {
                    prop_assert!((g - w).abs() <= 1e-9 * w.max(1.0));
                }
            }
        }

        #[test]
        fn matches_brute_force_3d(bits in proptest::collection::vec(proptest::bool::weighted(0.05), 5 * 6 * 7)) {
            let shape = [5, 6, 7];
            let sp = [2.0, 1.0, 0.75];
            let got = squared_edt(&bits, &shape, &sp);
            let want = brute(&bits, &shape, &sp);
            for (g, w) in got.iter().zip(&want) {
                if w.is_infinite() {
                    prop_assert!(g.is_infinite());
                } else {
                    prop_assert!((g - w).abs() <= 1e-9 * w.max(1.0));
                }
            }
        }
    }
}
