//! Multi-modal image volumes and multi-class binary masks.

use ndarray::{s, Array3, Array4, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::modality::Modality;

/// Voxel spacing in millimetres, ordered (dz, dy, dx).
pub type Spacing = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    /// `[modalities, depth, height, width]`
    pub data: Array4<f32>,
    pub spacing: Spacing,
    pub modalities: Vec<Modality>,
    pub subject_id: String,
}

impl Volume {
    pub fn new(
        data: Array4<f32>,
        spacing: Spacing,
        modalities: Vec<Modality>,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        if data.shape()[0] != modalities.len() {
            return Err(Error::data(
                subject_id,
                format!(
                    "{} channels but {} modality names",
                    data.shape()[0],
                    modalities.len()
                ),
            ));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::data(subject_id, format!("invalid spacing {spacing:?}")));
        }
        Ok(Volume {
            data,
            spacing,
            modalities,
            subject_id,
        })
    }

    /// `(depth, height, width)`
    pub fn spatial_shape(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[1], s[2], s[3])
    }

    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn channel(&self, m: usize) -> ArrayView3<'_, f32> {
        self.data.index_axis(Axis(0), m)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Binary mask with one channel per class. Values are 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    /// `[classes, depth, height, width]`
    pub data: Array4<u8>,
    pub class_names: Vec<String>,
}

impl Mask {
    pub fn new(data: Array4<u8>, class_names: Vec<String>) -> Result<Self> {
        if data.shape()[0] != class_names.len() {
            return Err(Error::shape(format!(
                "mask has {} channels but {} class names",
                data.shape()[0],
                class_names.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::shape("mask values must be 0 or 1"));
        }
        Ok(Mask { data, class_names })
    }

    pub fn lesion(data: Array3<u8>) -> Self {
        let (d, h, w) = data.dim();
        Mask {
            data: data.into_shape_with_order((1, d, h, w)).expect("contiguous"),
            class_names: vec!["lesion".into()],
        }
    }

    /// Builds nested WT/TC/ET channels from a BraTS label map (1 necrotic core, 2 edema, 4 enhancing).
    pub fn from_brats_labels(labels: &Array3<u8>) -> Self {
        let (d, h, w) = labels.dim();
        let mut data = Array4::<u8>::zeros((3, d, h, w));
        for ((z, y, x), &l) in labels.indexed_iter() {
            data[[0, z, y, x]] = u8::from(l > 0);
            data[[1, z, y, x]] = u8::from(l == 1 || l == 4);
            data[[2, z, y, x]] = u8::from(l == 4);
        }
        Mask {
            data,
            class_names: tumor_class_names(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn spatial_shape(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[1], s[2], s[3])
    }

    pub fn class(&self, k: usize) -> ArrayView3<'_, u8> {
        self.data.index_axis(Axis(0), k)
    }

    /// Voxelwise union over classes.
    pub fn any_class(&self) -> Array3<u8> {
        let (d, h, w) = self.spatial_shape();
        let mut out = Array3::<u8>::zeros((d, h, w));
        for k in 0..self.num_classes() {
            out.zip_mut_with(&self.class(k), |o, &v| *o |= v);
        }
        out
    }

    /// True when every class channel is contained in the previous one (ET ⊆ TC ⊆ WT).
    pub fn is_nested(&self) -> bool {
        (1..self.num_classes()).all(|k| {
            self.class(k)
                .iter()
                .zip(self.class(k - 1).iter())
                .all(|(&inner, &outer)| inner <= outer)
        })
    }

    pub fn slice(&self, z: usize) -> ndarray::Array3<u8> {
        self.data.slice(s![.., z, .., ..]).to_owned()
    }
}

pub fn tumor_class_names() -> Vec<String> {
    vec!["WT".into(), "TC".into(), "ET".into()]
}

pub fn lesion_class_names() -> Vec<String> {
    vec!["lesion".into()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_rejects_bad_metadata() {
        let data = Array4::<f32>::zeros((2, 1, 4, 4));
        assert!(Volume::new(data.clone(), [1.0; 3], vec![Modality::Flair], "s").is_err());
        assert!(Volume::new(
            data.clone(),
            [1.0, 0.0, 1.0],
            vec![Modality::Flair, Modality::T1w],
            "s"
        )
        .is_err());
        assert!(Volume::new(data, [3.0, 1.0, 1.0], vec![Modality::Flair, Modality::T1w], "s").is_ok());
    }

    #[test]
    fn brats_labels_nest() {
        let mut labels = Array3::<u8>::zeros((1, 3, 3));
        labels[[0, 0, 0]] = 2;
        labels[[0, 1, 1]] = 1;
        labels[[0, 2, 2]] = 4;
        let m = Mask::from_brats_labels(&labels);
        assert!(m.is_nested());
        assert_eq!(m.class(0).sum(), 3);
        assert_eq!(m.class(1).sum(), 2);
        assert_eq!(m.class(2).sum(), 1);
    }

    #[test]
    fn mask_rejects_non_binary() {
        let mut d = Array4::<u8>::zeros((1, 1, 2, 2));
        d[[0, 0, 0, 0]] = 2;
        assert!(Mask::new(d, lesion_class_names()).is_err());
    }
}
