//! Synthetic multi-modal brain phantoms with ellipsoidal lesions and exact ground truth.

use ndarray::{Array3, Array4};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Case;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::seeded_rng;
use crate::volume::{lesion_class_names, tumor_class_names, Mask, Spacing, Volume};

/// Radii of the nested tumour core and enhancing regions relative to the whole tumour.
const CORE_SCALE: f64 = 0.65;
const ENHANCING_SCALE: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub num_subjects: usize,
    pub modalities: Vec<Modality>,
    /// `(depth, height, width)`
    pub shape: (usize, usize, usize),
    pub spacing: Spacing,
    /// Inclusive range of lesions per subject.
    pub lesion_count: (usize, usize),
    /// Range of in-plane ellipsoid semi-axes in voxels, drawn per axis.
    pub lesion_radius: (f64, f64),
    /// Range of the through-plane semi-axis in voxels.
    pub depth_radius: (f64, f64),
    /// Healthy-tissue intensity per modality.
    pub background: Vec<f64>,
    /// Intensity offset added inside each class, `[classes][modalities]`. One row gives a single
    /// lesion class; three rows give nested WT/TC/ET regions.
    pub contrast: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn default_offset(m: Modality) -> f64 {
    match m {
        Modality::Flair => 2.0,
        Modality::Dwi => 2.0,
        Modality::T2w => 1.5,
        Modality::T1c => 0.5,
        Modality::T1w => -0.6,
        Modality::Adc => -0.6,
    }
}

fn default_background(m: Modality) -> f64 {
    1.0 + 0.1 * Modality::ALL.iter().position(|&x| x == m).unwrap_or(0) as f64
}

impl PhantomSpec {
    /// Single-class lesion phantom, bright on FLAIR/DWI/T2w and dark on T1w/ADC.
    pub fn lesion(num_subjects: usize, modalities: &[Modality], shape: (usize, usize, usize), seed: u64) -> Self {
        PhantomSpec {
            num_subjects,
            modalities: modalities.to_vec(),
            shape,
            spacing: [1.0; 3],
            lesion_count: (1, 3),
            lesion_radius: (2.0, 3.5),
            depth_radius: (1.0, 2.0),
            background: modalities.iter().map(|&m| default_background(m)).collect(),
            contrast: vec![modalities.iter().map(|&m| default_offset(m)).collect()],
            noise_sigma: 0.1,
            seed,
        }
    }

    /// Three nested tumour regions: whole tumour bright on FLAIR/T2w, core dark on T1w,
    /// enhancing region bright on T1c.
    pub fn tumor(num_subjects: usize, modalities: &[Modality], shape: (usize, usize, usize), seed: u64) -> Self {
        let row = |f: fn(Modality) -> f64| modalities.iter().map(|&m| f(m)).collect::<Vec<f64>>();
        PhantomSpec {
            lesion_count: (1, 1),
            lesion_radius: (4.0, 6.0),
            depth_radius: (2.0, 3.0),
            contrast: vec![
                row(|m| match m {
                    Modality::Flair => 1.5,
                    Modality::T2w => 1.5,
                    Modality::T1w => -0.3,
                    _ => 0.3,
                }),
                row(|m| match m {
                    Modality::T1w => -0.5,
                    Modality::T2w => 0.5,
                    Modality::Flair => -0.5,
                    _ => 0.6,
                }),
                row(|m| match m {
                    Modality::T1c => 1.5,
                    Modality::T1w => 0.4,
                    _ => 0.0,
                }),
            ],
            ..Self::lesion(num_subjects, modalities, shape, seed)
        }
    }

    pub fn num_classes(&self) -> usize {
        self.contrast.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        if self.num_classes() == 3 {
            tumor_class_names()
        } else {
            lesion_class_names()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.modalities.len();
        let mut v = Vec::new();
        if self.num_subjects == 0 || m == 0 {
            v.push("phantom needs at least one subject and one modality".to_string());
        }
        if self.background.len() != m || self.contrast.iter().any(|r| r.len() != m) {
            v.push("background and every contrast row need one entry per modality".to_string());
        }
        if ![1, 3].contains(&self.num_classes()) {
            v.push("contrast must have 1 (lesion) or 3 (nested tumour) rows".to_string());
        }
        let (d, h, w) = self.shape;
        for (name, (lo, hi), n) in [("lesion_radius", self.lesion_radius, h.min(w)), ("depth_radius", self.depth_radius, d)] {
            if !(lo > 0.0 && lo <= hi) {
                v.push(format!("{name} must be a positive, ordered range"));
            } else if 2.0 * hi.ceil() + 1.0 > n as f64 {
                v.push(format!("{name} {hi} does not fit a {d}x{h}x{w} volume"));
            }
        }
        if self.lesion_count.0 > self.lesion_count.1 {
            v.push("lesion_count range is reversed".to_string());
        }
        if !(self.noise_sigma >= 0.0) || self.spacing.iter().any(|s| !(*s > 0.0)) {
            v.push("noise_sigma must be >= 0 and spacing positive".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::config(v.join("; ")))
        }
    }
}

/// Voxels of the brain ellipsoid; every slice holds tissue.
fn brain_region(shape: (usize, usize, usize)) -> Array3<bool> {
    let (d, h, w) = shape;
    let c = |n: usize| (n as f64 - 1.0) / 2.0;
    let (rz, ry, rx) = (d as f64 / 2.0 + 0.5, 0.45 * h as f64, 0.45 * w as f64);
    Array3::from_shape_fn(shape, |(z, y, x)| {
        let q = ((z as f64 - c(d)) / rz).powi(2) + ((y as f64 - c(h)) / ry).powi(2) + ((x as f64 - c(w)) / rx).powi(2);
        q <= 1.0
    })
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [usize; 3], scale: f64) -> bool {
        (0..3)
            .map(|a| ((p[a] as f64 - self.center[a]) / (self.radii[a] * scale)).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    /// Voxel bounding box, clipped to the volume.
    fn bounds(&self, shape: [usize; 3]) -> [(usize, usize); 3] {
        let mut b = [(0, 0); 3];
        for a in 0..3 {
            let lo = (self.center[a] - self.radii[a]).floor().max(0.0) as usize;
            let hi = ((self.center[a] + self.radii[a]).ceil() as usize).min(shape[a] - 1);
            b[a] = (lo, hi);
        }
        b
    }

    fn voxels(&self, shape: [usize; 3]) -> Vec<[usize; 3]> {
        let b = self.bounds(shape);
        let mut out = Vec::new();
        for z in b[0].0..=b[0].1 {
            for y in b[1].0..=b[1].1 {
                for x in b[2].0..=b[2].1 {
                    if self.contains([z, y, x], 1.0) {
                        out.push([z, y, x]);
                    }
                }
            }
        }
        out
    }
}

/// True when `p` or any of its 26 neighbours is set.
fn near(occupied: &Array3<bool>, p: [usize; 3]) -> bool {
    let (d, h, w) = occupied.dim();
    for z in p[0].saturating_sub(1)..=(p[0] + 1).min(d - 1) {
        for y in p[1].saturating_sub(1)..=(p[1] + 1).min(h - 1) {
            for x in p[2].saturating_sub(1)..=(p[2] + 1).min(w - 1) {
                if occupied[[z, y, x]] {
                    return true;
                }
            }
        }
    }
    false
}

const PLACEMENT_ATTEMPTS: usize = 500;

/// Lesions inside the brain that neither overlap nor touch (under 26-connectivity).
fn place_lesions<R: Rng>(spec: &PhantomSpec, brain: &Array3<bool>, count: usize, rng: &mut R) -> Result<Vec<Ellipsoid>> {
    let (d, h, w) = spec.shape;
    let shape = [d, h, w];
    let mut occupied = Array3::from_elem((d, h, w), false);
    let mut out = Vec::new();
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (dr, r) = (spec.depth_radius, spec.lesion_radius);
            let radii = [
                rng.random_range(dr.0..=dr.1),
                rng.random_range(r.0..=r.1),
                rng.random_range(r.0..=r.1),
            ];
            let center = [0, 1, 2].map(|a| {
                let lo = radii[a].ceil();
                let hi = shape[a] as f64 - 1.0 - radii[a].ceil();
                rng.random_range(lo..=hi.max(lo)).round()
            });
            let e = Ellipsoid { center, radii };
            let vox = e.voxels(shape);
            if vox.iter().all(|&p| brain[p] && !near(&occupied, p)) {
                for p in vox {
                    occupied[p] = true;
                }
                out.push(e);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::config(format!(
                "could not place {count} separated lesions in a {d}x{h}x{w} volume"
            )));
        }
    }
    Ok(out)
}

/// `phantom-s{seed}-{i:03}`, so cohorts drawn with different seeds never share ids.
fn subject_id(seed: u64, i: usize) -> String {
    format!("phantom-s{seed}-{i:03}")
}

/// Generates `spec.num_subjects` cases. Output depends only on the spec.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Vec<Case>> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
    let (d, h, w) = spec.shape;
    let m = spec.modalities.len();
    let k = spec.num_classes();
    let brain = brain_region(spec.shape);
    let scales = [1.0, CORE_SCALE, ENHANCING_SCALE];
    let mut cases = Vec::with_capacity(spec.num_subjects);
    for i in 0..spec.num_subjects {
        let count = rng.random_range(spec.lesion_count.0..=spec.lesion_count.1);
        let lesions = place_lesions(spec, &brain, count, &mut rng)?;
        let mut mask = Array4::<u8>::zeros((k, d, h, w));
        for e in &lesions {
            for p in e.voxels([d, h, w]) {
                for (c, &s) in scales.iter().take(k).enumerate() {
                    if e.contains(p, s) {
                        mask[[c, p[0], p[1], p[2]]] = 1;
                    }
                }
            }
        }
        let mut data = Array4::<f32>::zeros((m, d, h, w));
        for ((z, y, x), &inside) in brain.indexed_iter() {
            if !inside {
                continue;
            }
            for ch in 0..m {
                let mut v = spec.background[ch];
                for c in 0..k {
                    if mask[[c, z, y, x]] == 1 {
                        v += spec.contrast[c][ch];
                    }
                }
                if spec.noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                data[[ch, z, y, x]] = v as f32;
            }
        }
        let volume = Volume::new(data, spec.spacing, spec.modalities.clone(), subject_id(spec.seed, i))?;
        let mask = Mask::new(mask, spec.class_names())?;
        cases.push(Case { volume, mask });
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::{label, Connectivity};

    fn two_modality(seed: u64) -> PhantomSpec {
        PhantomSpec::lesion(2, &[Modality::Flair, Modality::T1w], (10, 32, 32), seed)
    }

    #[test]
    fn noiseless_lesions_sit_exactly_at_contrast() {
        let mut spec = two_modality(1);
        spec.noise_sigma = 0.0;
        spec.contrast = vec![vec![2.0, 2.0]];
        for case in generate_phantom(&spec).unwrap() {
            let lesion = case.mask.class(0);
            for ((z, y, x), &l) in lesion.indexed_iter() {
                let f = case.volume.data[[0, z, y, x]] as f64;
                if l == 1 {
                    assert_eq!(f, spec.background[0] as f32 as f64 + 2.0);
                } else if f != 0.0 {
                    assert_eq!(f, spec.background[0] as f32 as f64);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_phantom(&two_modality(7)).unwrap();
        let b = generate_phantom(&two_modality(7)).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(&two_modality(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lesion_count_matches_components() {
        let mut spec = two_modality(3);
        spec.lesion_count = (3, 3);
        spec.num_subjects = 4;
        for case in generate_phantom(&spec).unwrap() {
            let m = case.mask.class(0).mapv(|v| v == 1);
            assert_eq!(label(m.view(), Connectivity::TwentySix).count, 3);
        }
    }

    #[test]
    fn tumor_regions_nest() {
        let mods = [Modality::T1w, Modality::T1c, Modality::T2w, Modality::Flair];
        let spec = PhantomSpec::tumor(3, &mods, (16, 32, 32), 5);
        for case in generate_phantom(&spec).unwrap() {
            assert!(case.mask.is_nested());
            for c in 0..3 {
                assert!(case.mask.class(c).iter().any(|&v| v == 1));
            }
        }
    }

    #[test]
    fn oversized_radius_is_rejected() {
        let mut spec = two_modality(0);
        spec.lesion_radius = (2.0, 16.0);
        assert!(generate_phantom(&spec).is_err());
    }
}
