//! Per-slice PNG overlays: true positives green, false negatives red, false positives blue, drawn
//! over the grey-scale image.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::{ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};

pub const TRUE_POSITIVE: Rgb<u8> = Rgb([0, 255, 0]);
pub const FALSE_NEGATIVE: Rgb<u8> = Rgb([255, 0, 0]);
pub const FALSE_POSITIVE: Rgb<u8> = Rgb([0, 0, 255]);

/// One `[H, W]` slice; the image is min-max scaled to grey.
pub fn overlay_slice(image: ArrayView2<f32>, pred: ArrayView2<bool>, truth: ArrayView2<bool>) -> Result<RgbImage> {
    if image.dim() != pred.dim() || pred.dim() != truth.dim() {
        return Err(Error::shape(format!(
            "overlay inputs differ: image {:?}, prediction {:?}, truth {:?}",
            image.dim(),
            pred.dim(),
            truth.dim()
        )));
    }
    let (h, w) = image.dim();
    let (lo, hi) = image
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let mut img = RgbImage::new(w as u32, h as u32);
    for ((r, c), &v) in image.indexed_iter() {
        let px = match (pred[[r, c]], truth[[r, c]]) {
            (true, true) => TRUE_POSITIVE,
            (false, true) => FALSE_NEGATIVE,
            (true, false) => FALSE_POSITIVE,
            (false, false) => {
                let g = (((v - lo) / range) * 255.0).round().clamp(0.0, 255.0) as u8;
                Rgb([g, g, g])
            }
        };
        img.put_pixel(c as u32, r as u32, px);
    }
    Ok(img)
}

/// Writes `slice_NNN.png` for every axial slice of `[D, H, W]` inputs.
pub fn write_overlays(
    dir: &Path,
    image: ArrayView3<f32>,
    pred: ArrayView3<bool>,
    truth: ArrayView3<bool>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for (z, ((im, p), t)) in image
        .axis_iter(Axis(0))
        .zip(pred.axis_iter(Axis(0)))
        .zip(truth.axis_iter(Axis(0)))
        .enumerate()
    {
        let path = dir.join(format!("slice_{z:03}.png"));
        overlay_slice(im, p, t)?
            .save(&path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn count(img: &RgbImage, px: Rgb<u8>) -> usize {
        img.pixels().filter(|&&p| p == px).count()
    }

    #[test]
    fn colors_follow_confusion_counts() {
        let image = Array2::from_shape_fn((6, 6), |(r, c)| (r * 6 + c) as f32);
        let truth = Array2::from_shape_fn((6, 6), |(r, c)| r < 3 && c < 4);
        let pred = Array2::from_shape_fn((6, 6), |(r, c)| r < 3 && (2..6).contains(&c));
        let img = overlay_slice(image.view(), pred.view(), truth.view()).unwrap();
        assert_eq!(count(&img, TRUE_POSITIVE), 6);
        assert_eq!(count(&img, FALSE_NEGATIVE), 6);
        assert_eq!(count(&img, FALSE_POSITIVE), 6);
    }

    #[test]
    fn perfect_prediction_is_all_green_and_empty_is_all_red() {
        let image = Array2::<f32>::zeros((4, 4));
        let truth = Array2::from_shape_fn((4, 4), |(r, _)| r == 1);
        let img = overlay_slice(image.view(), truth.view(), truth.view()).unwrap();
        assert_eq!(count(&img, TRUE_POSITIVE), 4);
        assert_eq!(count(&img, FALSE_NEGATIVE) + count(&img, FALSE_POSITIVE), 0);
        let none = Array2::from_elem((4, 4), false);
        let img = overlay_slice(image.view(), none.view(), truth.view()).unwrap();
        assert_eq!(count(&img, FALSE_NEGATIVE), 4);
        assert_eq!(count(&img, TRUE_POSITIVE), 0);
    }
}
