//! Intensity normalization and in-plane crop/pad to the network input size.

use ndarray::{s, Array3, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::metrics::percentile_sorted;
use crate::modality::Modality;
use crate::volume::Volume;

/// Brain voxels of a skull-stripped volume: nonzero in any modality.
pub fn brain_mask(volume: &Volume) -> Array3<bool> {
    let (d, h, w) = volume.spatial_shape();
    let mut m = Array3::from_elem((d, h, w), false);
    for c in volume.data.axis_iter(Axis(0)) {
        m.zip_mut_with(&c, |o, &v| *o |= v != 0.0);
    }
    m
}

/// Mean and standard deviation (population) of the masked values inside their `[P2, P98]` band.
pub fn band_statistics(values: ArrayView3<f32>, mask: ArrayView3<bool>) -> Option<(f64, f64)> {
    let mut v: Vec<f64> = values
        .iter()
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x as f64)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile_sorted(&v, 2.0), percentile_sorted(&v, 98.0));
    let band: Vec<f64> = v.into_iter().filter(|&x| x >= lo && x <= hi).collect();
    let n = band.len() as f64;
    let mean = band.iter().sum::<f64>() / n;
    let var = band.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Result of [`zscore_normalize`].
#[derive(Debug, Clone)]
pub struct Normalized {
    pub volume: Volume,
    /// Modalities whose band standard deviation was below `1e-6`; they are zeroed.
    pub degenerate: Vec<Modality>,
}

/// Per-modality z-scoring with statistics from the `[P2, P98]` band of masked intensities.
pub fn zscore_normalize(volume: &Volume, mask: ArrayView3<bool>) -> Result<Normalized> {
    if mask.dim() != volume.spatial_shape() {
        return Err(Error::data(&volume.subject_id, "brain mask does not match the volume"));
    }
    let mut out = volume.clone();
    let mut degenerate = Vec::new();
    for (m, mut c) in out.data.axis_iter_mut(Axis(0)).enumerate() {
        let (mean, sd) = band_statistics(c.view(), mask)
            .ok_or_else(|| Error::data(&volume.subject_id, "brain mask is empty"))?;
        if sd < 1e-6 {
            log::warn!(
                "{}: {} has no intensity spread inside the brain, set to zero",
                volume.subject_id,
                volume.modalities[m]
            );
            c.fill(0.0);
            degenerate.push(volume.modalities[m]);
        } else {
            c.mapv_inplace(|x| ((x as f64 - mean) / sd) as f32);
        }
    }
    Ok(Normalized { volume: out, degenerate })
}

/// One axis of a crop/pad: `len` samples copied from `src_start` in the source to `dst_start`
/// in the destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AxisMap {
    pub source: usize,
    pub target: usize,
    pub src_start: usize,
    pub dst_start: usize,
    pub len: usize,
}

impl AxisMap {
    pub fn new(source: usize, target: usize) -> Self {
        if source >= target {
            AxisMap { source, target, src_start: (source - target) / 2, dst_start: 0, len: target }
        } else {
            AxisMap { source, target, src_start: 0, dst_start: (target - source) / 2, len: source }
        }
    }

    /// Padding before and after, zero when cropping.
    pub fn padding(&self) -> (usize, usize) {
        (self.dst_start, self.target - self.dst_start - self.len)
    }

    fn inverse(&self) -> Self {
        AxisMap {
            source: self.target,
            target: self.source,
            src_start: self.dst_start,
            dst_start: self.src_start,
            len: self.len,
        }
    }
}

/// Center crop or symmetric zero pad of the two trailing axes; the extra sample of an odd pad goes
/// to the trailing side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CropPad {
    pub rows: AxisMap,
    pub cols: AxisMap,
}

impl CropPad {
    pub fn new(source: (usize, usize), target: (usize, usize)) -> Self {
        CropPad { rows: AxisMap::new(source.0, target.0), cols: AxisMap::new(source.1, target.1) }
    }

    pub fn inverse(&self) -> Self {
        CropPad { rows: self.rows.inverse(), cols: self.cols.inverse() }
    }

    /// Applies the transform to every `[H, W]` plane of `[N, H, W]`.
    pub fn apply<T: Clone + Default>(&self, x: ArrayView3<T>) -> Result<Array3<T>> {
        let (n, h, w) = x.dim();
        if (h, w) != (self.rows.source, self.cols.source) {
            return Err(Error::shape(format!(
                "crop/pad expects {}x{}, got {h}x{w}",
                self.rows.source, self.cols.source
            )));
        }
        let mut out = Array3::from_elem((n, self.rows.target, self.cols.target), T::default());
        let (r, c) = (self.rows, self.cols);
        out.slice_mut(s![.., r.dst_start..r.dst_start + r.len, c.dst_start..c.dst_start + c.len])
            .assign(&x.slice(s![.., r.src_start..r.src_start + r.len, c.src_start..c.src_start + c.len]));
        Ok(out)
    }
}
