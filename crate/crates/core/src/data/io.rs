//! Reading and writing cases on disk.
//!
//! Two layouts share one directory convention, one subdirectory per subject:
//!
//! * raw: `image.f32` (`[M, D, H, W]` little-endian f32), `mask.u8` (`[K, D, H, W]`) and
//!   `header.json` ([`RawHeader`]);
//! * NIfTI: `<MODALITY>.nii[.gz]` per modality and an optional `mask.nii[.gz]` label map.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, ArrayD, Axis, Ix3};
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, ReaderOptions};
use nifti::writer::WriterOptions;
use serde::{Deserialize, Serialize};

use super::Case;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::volume::{lesion_class_names, tumor_class_names, Mask, Spacing, Volume};

pub const RAW_HEADER: &str = "header.json";
pub const RAW_IMAGE: &str = "image.f32";
pub const RAW_MASK: &str = "mask.u8";

/// Sidecar describing a raw subject directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHeader {
    pub subject_id: String,
    pub modalities: Vec<Modality>,
    pub class_names: Vec<String>,
    /// `[M, D, H, W]`
    pub shape: [usize; 4],
    pub image_dtype: String,
    pub mask_dtype: String,
    /// `(dz, dy, dx)` in mm.
    pub spacing: Spacing,
    /// Generator seed, when the data is synthetic.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Which ground-truth channels a loader produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    /// One `lesion` channel: label > 0.
    Lesion,
    /// Nested WT/TC/ET channels from labels 1 (necrotic core), 2 (edema), 4 (enhancing).
    Tumor,
}

impl LabelScheme {
    pub fn for_classes(k: usize) -> Self {
        if k == 3 {
            LabelScheme::Tumor
        } else {
            LabelScheme::Lesion
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            LabelScheme::Lesion => lesion_class_names(),
            LabelScheme::Tumor => tumor_class_names(),
        }
    }

    /// Label map to binary channels.
    pub fn to_mask(self, labels: &Array3<u8>) -> Mask {
        match self {
            LabelScheme::Lesion => Mask::lesion(labels.mapv(|v| u8::from(v > 0))),
            LabelScheme::Tumor => Mask::from_brats_labels(labels),
        }
    }

    /// Binary channels back to a label map; the inverse of [`LabelScheme::to_mask`] on nested masks.
    pub fn to_labels(self, mask: &Mask) -> Array3<u8> {
        match self {
            LabelScheme::Lesion => mask.class(0).to_owned(),
            LabelScheme::Tumor => {
                let (wt, tc, et) = (mask.class(0), mask.class(1), mask.class(2));
                let mut out = Array3::<u8>::zeros(mask.spatial_shape());
                ndarray::Zip::from(&mut out).and(&wt).and(&tc).and(&et).for_each(|o, &w, &t, &e| {
                    *o = if e > 0 {
                        4
                    } else if t > 0 {
                        1
                    } else if w > 0 {
                        2
                    } else {
                        0
                    };
                });
                out
            }
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn subject_name(dir: &Path) -> String {
    dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Writes a case in the raw layout under `root/<subject_id>/`.
pub fn write_raw_case(root: &Path, case: &Case, seed: Option<u64>) -> Result<PathBuf> {
    let dir = root.join(&case.volume.subject_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let v = &case.volume;
    let s = v.data.shape();
    let header = RawHeader {
        subject_id: v.subject_id.clone(),
        modalities: v.modalities.clone(),
        class_names: case.mask.class_names.clone(),
        shape: [s[0], s[1], s[2], s[3]],
        image_dtype: "float32-le".into(),
        mask_dtype: "uint8".into(),
        spacing: v.spacing,
        seed,
    };
    let image: Vec<u8> = v.data.iter().flat_map(|x| x.to_le_bytes()).collect();
    write(&dir.join(RAW_IMAGE), &image)?;
    let mask: Vec<u8> = case.mask.data.iter().copied().collect();
    write(&dir.join(RAW_MASK), &mask)?;
    write(&dir.join(RAW_HEADER), (serde_json::to_string_pretty(&header)? + "\n").as_bytes())?;
    Ok(dir)
}

/// Picks `wanted` channels, in that order, out of `[M, D, H, W]` data named by `have`.
fn select_modalities(data: Array4<f32>, have: &[Modality], wanted: &[Modality], subject: &str) -> Result<Array4<f32>> {
    if have == wanted {
        return Ok(data);
    }
    let idx: Vec<usize> = wanted
        .iter()
        .map(|m| {
            have.iter()
                .position(|h| h == m)
                .ok_or_else(|| Error::data(subject, format!("missing modality {m}")))
        })
        .collect::<Result<_>>()?;
    Ok(data.select(Axis(0), &idx))
}

fn read_raw_case(dir: &Path, modalities: &[Modality]) -> Result<Case> {
    let subject = subject_name(dir);
    let hpath = dir.join(RAW_HEADER);
    let header: RawHeader = serde_json::from_slice(&read(&hpath)?)
        .map_err(|e| Error::data(&subject, format!("{}: {e}", hpath.display())))?;
    let [m, d, h, w] = header.shape;
    let bytes = read(&dir.join(RAW_IMAGE))?;
    if bytes.len() != 4 * m * d * h * w || header.modalities.len() != m {
        return Err(Error::data(&subject, "image.f32 size does not match header shape"));
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let data = Array4::from_shape_vec((m, d, h, w), values).map_err(|e| Error::data(&subject, e.to_string()))?;
    let data = select_modalities(data, &header.modalities, modalities, &subject)?;
    let k = header.class_names.len();
    let mask_bytes = read(&dir.join(RAW_MASK))?;
    if mask_bytes.len() != k * d * h * w {
        return Err(Error::data(&subject, "mask.u8 size does not match header shape"));
    }
    let mask = Array4::from_shape_vec((k, d, h, w), mask_bytes).map_err(|e| Error::data(&subject, e.to_string()))?;
    let mask = Mask::new(mask, header.class_names).map_err(|e| Error::data(&subject, e.to_string()))?;
    let volume = Volume::new(data, header.spacing, modalities.to_vec(), header.subject_id)?;
    Ok(Case { volume, mask })
}

/// `stem.nii.gz` or `stem.nii`, whichever exists.
pub fn find_nifti(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["nii.gz", "nii"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

/// A NIfTI image as `[D, H, W]` (axes reversed from the file's `i, j, k`) with `(dz, dy, dx)`.
pub fn read_nifti(path: &Path) -> Result<(Array3<f32>, Spacing)> {
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| Error::Nifti(format!("{}: {e}", path.display())))?;
    let p = obj.header().pixdim;
    let arr: ArrayD<f32> = obj
        .into_volume()
        .into_ndarray::<f32>()
        .map_err(|e| Error::Nifti(format!("{}: {e}", path.display())))?;
    let mut arr = arr;
    while arr.ndim() > 3 && arr.shape()[arr.ndim() - 1] == 1 {
        let last = Axis(arr.ndim() - 1);
        arr = arr.index_axis_move(last, 0);
    }
    let arr = arr
        .into_dimensionality::<Ix3>()
        .map_err(|_| Error::Nifti(format!("{}: expected a 3-D image", path.display())))?;
    let zyx = arr.reversed_axes().as_standard_layout().into_owned();
    let sp = |v: f32| if v > 0.0 && v.is_finite() { v as f64 } else { 1.0 };
    Ok((zyx, [sp(p[3]), sp(p[2]), sp(p[1])]))
}

fn nifti_header(spacing: Spacing) -> NiftiHeader {
    NiftiHeader {
        pixdim: [1.0, spacing[2] as f32, spacing[1] as f32, spacing[0] as f32, 1.0, 1.0, 1.0, 1.0],
        xyzt_units: 2,
        ..NiftiHeader::default()
    }
}

/// Writes a `[D, H, W]` float image; a `.gz` suffix selects compression.
pub fn write_nifti(path: &Path, data: &Array3<f32>, spacing: Spacing) -> Result<()> {
    let header = nifti_header(spacing);
    WriterOptions::new(path)
        .reference_header(&header)
        .write_nifti(&data.view().reversed_axes())
        .map_err(|e| Error::Nifti(format!("{}: {e}", path.display())))
}

/// Writes a `[D, H, W]` label map as uint8.
pub fn write_nifti_labels(path: &Path, data: &Array3<u8>, spacing: Spacing) -> Result<()> {
    let header = nifti_header(spacing);
    WriterOptions::new(path)
        .reference_header(&header)
        .write_nifti(&data.view().reversed_axes())
        .map_err(|e| Error::Nifti(format!("{}: {e}", path.display())))
}

fn read_nifti_case(dir: &Path, modalities: &[Modality], scheme: LabelScheme) -> Result<Case> {
    let subject = subject_name(dir);
    let mut channels = Vec::with_capacity(modalities.len());
    let mut spacing = None;
    for m in modalities {
        let path = find_nifti(dir, m.as_str()).ok_or_else(|| Error::data(&subject, format!("missing modality {m}")))?;
        let (arr, sp) = read_nifti(&path)?;
        if let Some(first) = channels.first().map(|a: &Array3<f32>| a.dim()) {
            if arr.dim() != first {
                return Err(Error::data(&subject, format!("{m} has shape {:?}, expected {first:?}", arr.dim())));
            }
        }
        spacing.get_or_insert(sp);
        channels.push(arr);
    }
    let views: Vec<_> = channels.iter().map(|a| a.view()).collect();
    let data = ndarray::stack(Axis(0), &views).map_err(|e| Error::data(&subject, e.to_string()))?;
    let (d, h, w) = channels[0].dim();
    let mask = match find_nifti(dir, "mask") {
        Some(p) => {
            let (labels, _) = read_nifti(&p)?;
            if labels.dim() != (d, h, w) {
                return Err(Error::data(&subject, "mask geometry differs from the images"));
            }
            scheme.to_mask(&labels.mapv(|v| v.round().clamp(0.0, 255.0) as u8))
        }
        None => Mask::new(Array4::zeros((scheme.class_names().len(), d, h, w)), scheme.class_names())?,
    };
    let volume = Volume::new(data, spacing.unwrap_or([1.0; 3]), modalities.to_vec(), subject)?;
    Ok(Case { volume, mask })
}

/// Loads one subject directory in either layout.
pub fn read_case(dir: &Path, modalities: &[Modality], scheme: LabelScheme) -> Result<Case> {
    if !dir.is_dir() {
        return Err(Error::data(subject_name(dir), format!("{} is not a directory", dir.display())));
    }
    if dir.join(RAW_HEADER).is_file() {
        read_raw_case(dir, modalities)
    } else {
        read_nifti_case(dir, modalities, scheme)
    }
}

/// Subject directories of a dataset root, sorted by name.
pub fn subject_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::data(root.display().to_string(), "no subject directories"));
    }
    Ok(dirs)
}

pub fn read_dataset(root: &Path, modalities: &[Modality], scheme: LabelScheme) -> Result<Vec<Case>> {
    subject_dirs(root)?.iter().map(|d| read_case(d, modalities, scheme)).collect()
}

/// Ground-truth or predicted mask of one subject directory: `mask.nii[.gz]` or raw `mask.u8`.
pub fn read_mask(dir: &Path, scheme: LabelScheme) -> Result<(Mask, Spacing)> {
    let subject = subject_name(dir);
    if dir.join(RAW_HEADER).is_file() {
        let header: RawHeader = serde_json::from_slice(&read(&dir.join(RAW_HEADER))?)?;
        let [_, d, h, w] = header.shape;
        let bytes = read(&dir.join(RAW_MASK))?;
        let k = header.class_names.len();
        if bytes.len() != k * d * h * w {
            return Err(Error::data(&subject, "mask.u8 size does not match header shape"));
        }
        let data = Array4::from_shape_vec((k, d, h, w), bytes).map_err(|e| Error::data(&subject, e.to_string()))?;
        return Ok((Mask::new(data, header.class_names)?, header.spacing));
    }
    let path = find_nifti(dir, "mask").ok_or_else(|| Error::data(&subject, "missing mask"))?;
    let (labels, spacing) = read_nifti(&path)?;
    Ok((scheme.to_mask(&labels.mapv(|v| v.round().clamp(0.0, 255.0) as u8)), spacing))
}

/// Label scheme of a subject's ground truth: the raw header's classes, else tumour when the
/// NIfTI label map holds a 2 or a 4.
pub fn detect_scheme(dir: &Path) -> Result<LabelScheme> {
    if dir.join(RAW_HEADER).is_file() {
        let header: RawHeader = serde_json::from_slice(&read(&dir.join(RAW_HEADER))?)?;
        return Ok(LabelScheme::for_classes(header.class_names.len()));
    }
    let path = find_nifti(dir, "mask").ok_or_else(|| Error::data(subject_name(dir), "missing mask"))?;
    let (labels, _) = read_nifti(&path)?;
    let tumor = labels.iter().any(|&v| v.round() == 2.0 || v.round() == 4.0);
    Ok(if tumor { LabelScheme::Tumor } else { LabelScheme::Lesion })
}

/// Modalities stored in a subject directory, in header order for raw data and canonical order
/// for NIfTI files.
pub fn subject_modalities(dir: &Path) -> Result<Vec<Modality>> {
    if dir.join(RAW_HEADER).is_file() {
        let header: RawHeader = serde_json::from_slice(&read(&dir.join(RAW_HEADER))?)?;
        return Ok(header.modalities);
    }
    let found: Vec<Modality> = Modality::ALL
        .into_iter()
        .filter(|m| find_nifti(dir, m.as_str()).is_some())
        .collect();
    if found.is_empty() {
        return Err(Error::data(subject_name(dir), "no image files"));
    }
    Ok(found)
}

/// Writes `mask` as a label map to `dir/mask.nii.gz`.
pub fn write_mask(dir: &Path, mask: &Mask, spacing: Spacing) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scheme = LabelScheme::for_classes(mask.num_classes());
    let path = dir.join("mask.nii.gz");
    write_nifti_labels(&path, &scheme.to_labels(mask), spacing)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::phantom::{generate_phantom, PhantomSpec};

    #[test]
    fn raw_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec::lesion(2, &[Modality::Flair, Modality::T1w], (6, 16, 16), 2);
        let cases = generate_phantom(&spec).unwrap();
        for c in &cases {
            write_raw_case(dir.path(), c, Some(2)).unwrap();
        }
        let back = read_dataset(dir.path(), &spec.modalities, LabelScheme::Lesion).unwrap();
        assert_eq!(back, cases);
        let swapped = read_dataset(dir.path(), &[Modality::T1w, Modality::Flair], LabelScheme::Lesion).unwrap();
        assert_eq!(swapped[0].volume.channel(0), cases[0].volume.channel(1));
        let err = read_dataset(dir.path(), &[Modality::Dwi], LabelScheme::Lesion).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("phantom-s2-000"));
    }

    #[test]
    fn nifti_round_trip_keeps_axes_and_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let a = Array3::from_shape_fn((3, 4, 5), |(z, y, x)| (z * 100 + y * 10 + x) as f32);
        let path = dir.path().join("FLAIR.nii.gz");
        write_nifti(&path, &a, [3.0, 1.0, 0.5]).unwrap();
        let (b, sp) = read_nifti(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(sp, [3.0, 1.0, 0.5]);
    }

    #[test]
    fn tumor_labels_round_trip() {
        let labels = Array3::from_shape_fn((1, 3, 3), |(_, y, x)| [0u8, 1, 2, 4][(y * 3 + x) % 4]);
        let m = LabelScheme::Tumor.to_mask(&labels);
        assert_eq!(LabelScheme::Tumor.to_labels(&m), labels);
    }

    #[test]
    fn nifti_case_reports_missing_modality() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("case-7");
        fs::create_dir_all(&sub).unwrap();
        let a = Array3::<f32>::ones((2, 4, 4));
        write_nifti(&sub.join("FLAIR.nii"), &a, [1.0; 3]).unwrap();
        let ok = read_case(&sub, &[Modality::Flair], LabelScheme::Lesion).unwrap();
        assert_eq!(ok.volume.subject_id, "case-7");
        let err = read_case(&sub, &[Modality::Flair, Modality::T1w], LabelScheme::Lesion).unwrap_err();
        assert!(err.to_string().contains("case-7") && err.to_string().contains("T1w"));
    }
}
