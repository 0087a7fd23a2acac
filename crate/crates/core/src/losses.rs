//! Segmentation losses and the deep-supervision objective.
//!
//! Sums run over the whole batch tensor, so a batch is scored as one pooled volume.

use candle_core::{Tensor, D};
use ndarray::{s, Array4, ArrayView4};

use crate::config::{LossConfig, LossMode, DOWNSAMPLE_FACTOR};
use crate::distance::distance_map;
use crate::error::{Error, Result};
use crate::model::HeadOutputs;
use crate::nn::ops;

/// `1 - (2 sum(PT) + eps) / (sum(P) + sum(T) + eps)`.
pub fn dice_loss(p: &Tensor, t: &Tensor, eps: f64) -> Result<Tensor> {
    check_same(p, t)?;
    let inter = (p * t)?.sum_all()?;
    let denom = (p.sum_all()? + t.sum_all()?)?;
    let ratio = ((inter * 2.0)? + eps)?.div(&(denom + eps)?)?;
    Ok(ratio.affine(-1.0, 1.0)?)
}

/// Dice loss computed separately for each channel of `[B, K, ...]` and averaged over `K`.
pub fn dice_loss_per_class(p: &Tensor, t: &Tensor, eps: f64) -> Result<Tensor> {
    check_same(p, t)?;
    let k = p.dim(1)?;
    let per_class = |x: &Tensor| -> Result<Tensor> {
        Ok(x.transpose(0, 1)?.contiguous()?.reshape((k, ()))?.sum(D::Minus1)?)
    };
    let inter = per_class(&(p * t)?)?;
    let denom = (per_class(p)? + per_class(t)?)?;
    let ratio = ((inter * 2.0)? + eps)?.div(&(denom + eps)?)?;
    Ok(ratio.affine(-1.0, 1.0)?.mean_all()?)
}

/// Mean of `-alpha_t (1 - p_t)^gamma log p_t`, with `p` clamped to `[clamp, 1 - clamp]`.
pub fn focal_loss(p: &Tensor, y: &Tensor, gamma: f64, alpha_t: f64, clamp: f64) -> Result<Tensor> {
    check_same(p, y)?;
    let p = p.clamp(clamp, 1.0 - clamp)?;
    // p_t = y p + (1 - y)(1 - p) = 1 - p - y + 2 y p
    let pt = ((&p * y)? * 2.0)?.sub(&p)?.sub(y)?.affine(1.0, 1.0)?;
    let ce = pt.log()?.neg()?;
    let mod_factor = if gamma == 0.0 {
        None
    } else {
        Some(pt.affine(-1.0, 1.0)?.powf(gamma)?)
    };
    let per_voxel = match mod_factor {
        Some(m) => (m * ce)?,
        None => ce,
    };
    Ok((per_voxel.mean_all()? * alpha_t)?)
}

/// `1 - (TP + eps) / (TP + alpha FP + beta FN + eps)` on soft counts.
pub fn tversky_loss(p: &Tensor, t: &Tensor, alpha: f64, beta: f64, eps: f64) -> Result<Tensor> {
    check_same(p, t)?;
    let tp = (p * t)?.sum_all()?;
    let fp = (p.sum_all()? - &tp)?;
    let fnn = (t.sum_all()? - &tp)?;
    let denom = (((&tp + (fp * alpha)?)? + (fnn * beta)?)? + eps)?;
    let ti = (tp + eps)?.div(&denom)?;
    Ok(ti.affine(-1.0, 1.0)?)
}

/// `w_f focal(sigmoid(z), y) + w_t tversky(sigmoid(z), y)`.
pub fn focal_tversky(z: &Tensor, y: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let p = ops::sigmoid(z)?;
    let f = focal_loss(&p, y, cfg.gamma, cfg.alpha_t, cfg.prob_clamp)?;
    let t = tversky_loss(&p, y, cfg.alpha, cfg.beta, cfg.smooth)?;
    Ok(((f * cfg.w_focal)? + (t * cfg.w_tversky)?)?)
}

/// `mean(P * d_G)`.
pub fn boundary_loss(p: &Tensor, d: &Tensor) -> Result<Tensor> {
    check_same(p, d)?;
    Ok((p * d)?.mean_all()?)
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "loss inputs differ in shape: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Max-pools a `[B, K, H, W]` binary mask by `factor` over all classes into `[B, 1, H/f, W/f]`,
/// so any lesion voxel marks its coarse cell.
pub fn downsample_any(mask: ArrayView4<u8>, factor: usize) -> Array4<u8> {
    let (b, k, h, w) = mask.dim();
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Array4::<u8>::zeros((b, 1, oh, ow));
    for bi in 0..b {
        for ci in 0..k {
            for r in 0..oh {
                for c in 0..ow {
                    let block = mask.slice(s![bi, ci, r * factor..(r + 1) * factor, c * factor..(c + 1) * factor]);
                    if block.iter().any(|&v| v > 0) {
                        out[[bi, 0, r, c]] = 1;
                    }
                }
            }
        }
    }
    out
}

/// Tensors a batch is scored against.
#[derive(Debug, Clone)]
pub struct LossTargets {
    /// `[B, K, H, W]` in {0, 1}.
    pub mask: Tensor,
    /// Per-slice distance maps `[B, K, H, W]`; present in vascular mode.
    pub distance: Option<Tensor>,
    /// `[B, 1, H/16, W/16]`.
    pub lesion: Tensor,
    /// Number of `(b, k)` slices whose target was empty.
    pub empty_slices: usize,
}

impl LossTargets {
    /// Builds targets from a `[B, K, H, W]` mask with in-plane `(dy, dx)` spacing.
    pub fn from_mask(mask: ArrayView4<u8>, spacing: (f64, f64), cfg: &LossConfig, like: &Tensor) -> Result<Self> {
        let (b, k, h, w) = mask.dim();
        let dev = like.device();
        let to_tensor = |a: &[f32], shape: (usize, usize, usize, usize)| -> Result<Tensor> {
            Ok(Tensor::from_slice(a, shape, dev)?.to_dtype(like.dtype())?)
        };
        let m: Vec<f32> = mask.iter().map(|&v| if v > 0 { 1.0 } else { 0.0 }).collect();
        let mut empty_slices = 0;
        let distance = match cfg.mode {
            LossMode::Vascular => {
                let mut d = Vec::with_capacity(b * k * h * w);
                for bi in 0..b {
                    for ci in 0..k {
                        let dm = distance_map(
                            mask.slice(s![bi, ci, .., ..]),
                            spacing,
                            cfg.distance_mode,
                            cfg.distance_cap,
                        );
                        empty_slices += dm.empty_target as usize;
                        if cfg.normalize_distance {
                            let diag = ((h as f64 * spacing.0).powi(2) + (w as f64 * spacing.1).powi(2)).sqrt();
                            d.extend(dm.values.iter().map(|&v| (v.min(diag) / diag) as f32));
                        } else {
                            d.extend(dm.values.iter().map(|&v| v as f32));
                        }
                    }
                }
                Some(to_tensor(&d, (b, k, h, w))?)
            }
            LossMode::Brats => None,
        };
        let lesion = downsample_any(mask, DOWNSAMPLE_FACTOR);
        let lesion_dims = lesion.dim();
        let lesion: Vec<f32> = lesion.iter().map(|&v| v as f32).collect();
        Ok(LossTargets {
            mask: to_tensor(&m, (b, k, h, w))?,
            distance,
            lesion: to_tensor(&lesion, lesion_dims)?,
            empty_slices,
        })
    }
}

/// Scalar loss terms; `total` keeps the graph for backpropagation.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: Tensor,
    pub main: f64,
    pub aux: [f64; 2],
    pub lesion: f64,
    /// Boundary term inside `main` (before `lambda_boundary`); zero in tumour mode.
    pub boundary: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// `L_main + sum_k w_k L_aux,k + lambda_lesion L_lesion`.
pub fn total_loss(heads: &HeadOutputs, targets: &LossTargets, cfg: &LossConfig) -> Result<LossBreakdown> {
    let k = heads.main.dim(1)?;
    if targets.mask.dim(1)? != k {
        return Err(Error::shape(format!(
            "model predicts {k} classes, target has {}",
            targets.mask.dim(1)?
        )));
    }
    let y = &targets.mask;
    let (main, boundary, aux1, aux2) = match cfg.mode {
        LossMode::Vascular => {
            let d = targets
                .distance
                .as_ref()
                .ok_or_else(|| Error::config("vascular loss needs distance maps"))?;
            let ft = focal_tversky(&heads.main, y, cfg)?;
            let b = boundary_loss(&ops::sigmoid(&heads.main)?, d)?;
            let main = (ft + (&b * cfg.lambda_boundary)?)?;
            (
                main,
                b,
                focal_tversky(&heads.aux1, y, cfg)?,
                focal_tversky(&heads.aux2, y, cfg)?,
            )
        }
        LossMode::Brats => {
            let dice = |z: &Tensor| dice_loss_per_class(&ops::sigmoid(z)?, y, cfg.smooth);
            (
                dice(&heads.main)?,
                ops::scalar_like(&heads.main, 0.0)?,
                dice(&heads.aux1)?,
                dice(&heads.aux2)?,
            )
        }
    };
    let lesion = focal_loss(
        &ops::sigmoid(&heads.lesion)?,
        &targets.lesion,
        cfg.gamma,
        cfg.alpha_t,
        cfg.prob_clamp,
    )?;
    let total = (((&main + (&aux1 * cfg.aux_weights[0])?)? + (&aux2 * cfg.aux_weights[1])?)?
        + (&lesion * cfg.lambda_lesion)?)?;
    Ok(LossBreakdown {
        main: scalar(&main)?,
        aux: [scalar(&aux1)?, scalar(&aux2)?],
        lesion: scalar(&lesion)?,
        boundary: scalar(&boundary)?,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use proptest::prelude::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_slice(v, v.len(), &Device::Cpu).unwrap()
    }

    fn val(x: Tensor) -> f64 {
        x.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn dice_of_hand_masks() {
        // |P & T| = 2, |P| = 3, |T| = 4
        let p = t(&[1., 1., 1., 0., 0., 0.]);
        let y = t(&[1., 1., 0., 1., 1., 0.]);
        assert!((val(dice_loss(&p, &y, 1e-12).unwrap()) - (1.0 - 4.0 / 7.0)).abs() < 1e-9);
        let z = t(&[0.; 4]);
        assert_eq!(val(dice_loss(&z, &z, 1.0).unwrap()), 0.0);
    }

    #[test]
    fn focal_single_voxel() {
        let l = val(focal_loss(&t(&[0.9]), &t(&[1.0]), 2.0, 0.25, 1e-7).unwrap());
        let want = 0.25 * 0.01 * -(0.9f64.ln());
        assert!((l - want).abs() < 1e-12);
    }

    #[test]
    fn tversky_of_hand_counts() {
        // TP = 2, FP = 2, FN = 1
        let p = t(&[1., 1., 1., 1., 0.]);
        let y = t(&[1., 1., 0., 0., 1.]);
        let l = val(tversky_loss(&p, &y, 0.3, 0.7, 1e-12).unwrap());
        assert!((l - (1.0 - 2.0 / 3.3)).abs() < 1e-9);
    }

    #[test]
    fn boundary_single_voxel() {
        let mut p = vec![0.0; 16];
        p[5] = 1.0;
        let mut d = vec![1.0; 16];
        d[5] = 3.0;
        assert!((val(boundary_loss(&t(&p), &t(&d)).unwrap()) - 3.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn downsampling_keeps_single_voxels() {
        let mut m = Array4::<u8>::zeros((1, 2, 32, 32));
        m[[0, 1, 17, 3]] = 1;
        let d = downsample_any(m.view(), 16);
        assert_eq!(d.dim(), (1, 1, 2, 2));
        assert_eq!(d[[0, 0, 1, 0]], 1);
        assert_eq!(d.iter().map(|&v| v as usize).sum::<usize>(), 1);
    }

    #[test]
    fn per_class_dice_is_class_mean() {
        let dev = Device::Cpu;
        let p = Tensor::new(&[[[[0.2f64, 0.9]], [[0.5, 0.5]]]], &dev).unwrap();
        let y = Tensor::new(&[[[[0.0f64, 1.0]], [[1.0, 1.0]]]], &dev).unwrap();
        let got = val(dice_loss_per_class(&p, &y, 1.0).unwrap());
        let c0 = 1.0 - (2.0 * 0.9 + 1.0) / (1.1 + 1.0 + 1.0);
        let c1 = 1.0 - (2.0 * 1.0 + 1.0) / (1.0 + 2.0 + 1.0);
        assert!((got - (c0 + c1) / 2.0).abs() < 1e-12);
        assert_eq!(p.dtype(), DType::F64);
    }

    proptest! {
        #[test]
        fn tversky_is_monotone_in_beta(p in proptest::collection::vec(0.0f64..1.0, 20),
                                       y in proptest::collection::vec(0u8..2, 20),
                                       b in 0.1f64..0.8) {
            let fn_mass: f64 = p.iter().zip(&y).map(|(p, &y)| (1.0 - p) * y as f64).sum();
            prop_assume!(fn_mass > 1e-3);
            let yt: Vec<f64> = y.iter().map(|&v| v as f64).collect();
            let lo = val(tversky_loss(&t(&p), &t(&yt), 0.3, b, 1.0).unwrap());
            let hi = val(tversky_loss(&t(&p), &t(&yt), 0.3, b + 0.1, 1.0).unwrap());
            prop_assert!(hi > lo);
        }

        #[test]
        fn losses_are_permutation_equivariant(p in proptest::collection::vec(0.01f64..0.99, 12),
                                              y in proptest::collection::vec(0u8..2, 12),
                                              rot in 0usize..12) {
            let yt: Vec<f64> = y.iter().map(|&v| v as f64).collect();
            let mut pr = p.clone();
            pr.rotate_left(rot);
            let mut yr = yt.clone();
            yr.rotate_left(rot);
            let a = val(focal_loss(&t(&p), &t(&yt), 2.0, 0.25, 1e-7).unwrap());
            let b = val(focal_loss(&t(&pr), &t(&yr), 2.0, 0.25, 1e-7).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
            let a = val(tversky_loss(&t(&p), &t(&yt), 0.3, 0.7, 1.0).unwrap());
            let b = val(tversky_loss(&t(&pr), &t(&yr), 0.3, 0.7, 1.0).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
