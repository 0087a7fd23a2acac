//! Connected-component labeling of 3-D binary volumes.

use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face, edge and corner neighbours.
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(Error::config(format!("connectivity must be 6 or 26, got {n}"))),
        }
    }

    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut v = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let nonzero = (dz != 0) as u8 + (dy != 0) as u8 + (dx != 0) as u8;
                    let keep = match self {
                        Connectivity::Six => nonzero == 1,
                        Connectivity::TwentySix => nonzero >= 1,
                    };
                    if keep {
                        v.push([dz, dy, dx]);
                    }
                }
            }
        }
        v
    }
}

/// Component labels (0 = background, components numbered from 1 in raster order of their first
/// voxel) and the component count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub labels: Array3<u32>,
    pub count: usize,
}

impl Labeling {
    /// Voxel count of each component, indexed by `label - 1`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for &l in self.labels.iter() {
            if l > 0 {
                s[l as usize - 1] += 1;
            }
        }
        s
    }
}

pub fn label(mask: ArrayView3<bool>, conn: Connectivity) -> Labeling {
    let dim = mask.dim();
    let mut labels = Array3::<u32>::zeros(dim);
    let offsets = conn.offsets();
    let mut stack = Vec::new();
    let mut count = 0u32;
    for ((z, y, x), &fg) in mask.indexed_iter() {
        if !fg || labels[[z, y, x]] != 0 {
            continue;
        }
        count += 1;
        labels[[z, y, x]] = count;
        stack.push([z, y, x]);
        while let Some(p) = stack.pop() {
            for o in &offsets {
                let q = [
                    p[0] as isize + o[0],
                    p[1] as isize + o[1],
                    p[2] as isize + o[2],
                ];
                if q[0] < 0 || q[1] < 0 || q[2] < 0 {
                    continue;
                }
                let q = [q[0] as usize, q[1] as usize, q[2] as usize];
                if q[0] >= dim.0 || q[1] >= dim.1 || q[2] >= dim.2 {
                    continue;
                }
                if mask[q] && labels[q] == 0 {
                    labels[q] = count;
                    stack.push(q);
                }
            }
        }
    }
    Labeling {
        labels,
        count: count as usize,
    }
}

/// Removes components with fewer than `min_size` voxels.
pub fn remove_small(mask: ArrayView3<bool>, min_size: usize, conn: Connectivity) -> Array3<bool> {
    let lab = label(mask, conn);
    let sizes = lab.sizes();
    lab.labels.mapv(|l| l > 0 && sizes[l as usize - 1] >= min_size)
}
