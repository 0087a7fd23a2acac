//! Data pipeline: loading, normalization, crop/pad, augmentation, sampling and synthetic phantoms.

pub mod augment;
pub mod io;
pub mod phantom;
pub mod preprocess;
pub mod sampler;

use candle_core::{Device, Tensor};
use ndarray::{s, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

pub use augment::augment;
pub use io::LabelScheme;
pub use phantom::{generate_phantom, PhantomSpec};
pub use preprocess::{brain_mask, zscore_normalize, CropPad};
pub use sampler::{difficulty_weights, WeightedSampler};

use crate::error::{Error, Result};
use crate::volume::{Mask, Spacing, Volume};

/// A subject's images with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub volume: Volume,
    pub mask: Mask,
}

/// Role of a subject in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Deterministic split: subjects sorted by id, the last `round(n * val_fraction)` (at least one
/// when the fraction is positive and two or more subjects exist) go to validation.
pub fn split_ids(ids: &[String], val_fraction: f64) -> (Vec<String>, Vec<String>) {
    let mut sorted = ids.to_vec();
    sorted.sort();
    let n = sorted.len();
    let mut n_val = (n as f64 * val_fraction).round() as usize;
    if val_fraction > 0.0 && n > 1 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let val = sorted.split_off(n - n_val);
    (sorted, val)
}

/// A normalized case cropped/padded in-plane to the network input size.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCase {
    pub subject_id: String,
    /// `[M, D, H, W]` at the working size.
    pub image: Array4<f32>,
    /// `[K, D, H, W]` at the working size.
    pub mask: Array4<u8>,
    pub class_names: Vec<String>,
    /// Maps original slices to the working size; its inverse maps predictions back.
    pub transform: CropPad,
    pub spacing: Spacing,
    /// Ground truth at the original geometry.
    pub original_mask: Mask,
}

impl PreparedCase {
    pub fn depth(&self) -> usize {
        self.image.dim().1
    }
}

fn crop_pad4<T: Clone + Default>(t: &CropPad, x: &Array4<T>) -> Result<Array4<T>> {
    let (c, d, h, w) = x.dim();
    let flat = x.view().into_shape_with_order((c * d, h, w)).map_err(|e| Error::shape(e.to_string()))?;
    let out = t.apply(flat)?;
    let (_, oh, ow) = out.dim();
    out.into_shape_with_order((c, d, oh, ow)).map_err(|e| Error::shape(e.to_string()))
}

/// Z-scores over the nonzero-voxel brain mask, then crops/pads every slice to `size`.
pub fn prepare_case(case: &Case, size: (usize, usize)) -> Result<PreparedCase> {
    let v = &case.volume;
    if case.mask.spatial_shape() != v.spatial_shape() {
        return Err(Error::data(&v.subject_id, "mask geometry differs from the images"));
    }
    let brain = brain_mask(v);
    let normalized = if brain.iter().any(|&b| b) {
        zscore_normalize(v, brain.view())?.volume
    } else {
        log::warn!("{}: volume is empty, left unnormalized", v.subject_id);
        v.clone()
    };
    if !normalized.is_finite() {
        return Err(Error::data(&v.subject_id, "non-finite intensities after normalization"));
    }
    let (_, h, w) = v.spatial_shape();
    let transform = CropPad::new((h, w), size);
    Ok(PreparedCase {
        subject_id: v.subject_id.clone(),
        image: crop_pad4(&transform, &normalized.data)?,
        mask: crop_pad4(&transform, &case.mask.data)?,
        class_names: case.mask.class_names.clone(),
        transform,
        spacing: v.spacing,
        original_mask: case.mask.clone(),
    })
}

/// Maps a `[K, D, h, w]` working-size array back to the original slice geometry.
pub fn restore_geometry<T: Clone + Default>(t: &CropPad, x: &Array4<T>) -> Result<Array4<T>> {
    crop_pad4(&t.inverse(), x)
}

/// Axial slices of prepared cases, addressable by a flat index.
#[derive(Debug, Clone)]
pub struct SliceDataset {
    pub cases: Vec<PreparedCase>,
    /// `(case, z)` per slice.
    pub index: Vec<(usize, usize)>,
}

impl SliceDataset {
    pub fn new(cases: Vec<PreparedCase>) -> Result<Self> {
        if let Some(first) = cases.first() {
            let (m, k) = (first.image.dim().0, first.mask.dim().0);
            let (_, _, h, w) = first.image.dim();
            for c in &cases {
                let (cm, _, ch, cw) = c.image.dim();
                if cm != m || c.mask.dim().0 != k || (ch, cw) != (h, w) {
                    return Err(Error::data(&c.subject_id, "case layout differs from the rest of the dataset"));
                }
            }
        }
        let index = cases
            .iter()
            .enumerate()
            .flat_map(|(i, c)| (0..c.depth()).map(move |z| (i, z)))
            .collect();
        Ok(SliceDataset { cases, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// `([M, H, W] image, [K, H, W] mask)` of slice `i`.
    pub fn slice(&self, i: usize) -> (Array3<f32>, Array3<u8>) {
        let (c, z) = self.index[i];
        let case = &self.cases[c];
        (
            case.image.slice(s![.., z, .., ..]).to_owned(),
            case.mask.slice(s![.., z, .., ..]).to_owned(),
        )
    }

    /// Foreground pixel count of each slice over the union of classes.
    pub fn lesion_areas(&self) -> Vec<usize> {
        self.index
            .iter()
            .map(|&(c, z)| {
                let m = self.cases[c].mask.slice(s![.., z, .., ..]);
                let (_, h, w) = m.dim();
                (0..h * w).filter(|&p| m.axis_iter(Axis(0)).any(|ch| ch[[p / w, p % w]] > 0)).count()
            })
            .collect()
    }

    /// In-plane spacing `(dy, dx)` of slice `i`.
    pub fn spacing(&self, i: usize) -> (f64, f64) {
        let s = self.cases[self.index[i].0].spacing;
        (s[1], s[2])
    }
}

/// Stacks `[M, H, W]` images into a `[B, M, H, W]` f32 tensor and masks into `[B, K, H, W]`.
pub fn collate(samples: &[(Array3<f32>, Array3<u8>)]) -> Result<(Tensor, Array4<u8>)> {
    let images: Vec<_> = samples.iter().map(|s| s.0.view()).collect();
    let masks: Vec<_> = samples.iter().map(|s| s.1.view()).collect();
    let x = ndarray::stack(Axis(0), &images).map_err(|e| Error::shape(e.to_string()))?;
    let y = ndarray::stack(Axis(0), &masks).map_err(|e| Error::shape(e.to_string()))?;
    let dims = x.dim();
    let values: Vec<f32> = x.iter().copied().collect();
    Ok((Tensor::from_vec(values, dims, &Device::Cpu)?, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modality::Modality;

    #[test]
    fn split_is_sorted_and_nonempty() {
        let ids: Vec<String> = ["c", "a", "d", "b", "e"].iter().map(|s| s.to_string()).collect();
        let (train, val) = split_ids(&ids, 0.2);
        assert_eq!(train, vec!["a", "b", "c", "d"]);
        assert_eq!(val, vec!["e"]);
        let (train, val) = split_ids(&ids, 0.0);
        assert_eq!((train.len(), val.len()), (5, 0));
    }

    #[test]
    fn prepared_case_round_trips_geometry() {
        let spec = PhantomSpec::lesion(1, &[Modality::Flair, Modality::T1w], (6, 30, 36), 4);
        let case = generate_phantom(&spec).unwrap().remove(0);
        let p = prepare_case(&case, (32, 32)).unwrap();
        assert_eq!(p.image.dim(), (2, 6, 32, 32));
        let back = restore_geometry(&p.transform, &p.mask).unwrap();
        assert_eq!(back.dim(), case.mask.data.dim());
        // Cropping 36 -> 32 drops two columns per side; the phantom brain never reaches them.
        assert_eq!(back, case.mask.data);
        let ds = SliceDataset::new(vec![p]).unwrap();
        assert_eq!(ds.len(), 6);
        let total: usize = ds.lesion_areas().iter().sum();
        assert_eq!(total, case.mask.data.iter().filter(|&&v| v > 0).count());
    }
}
