//! Priority-based grouping of modality streams into the two sides of cross-attention.

use std::fmt;

use candle_core::Tensor;

use super::swin::TokenGrid;
use crate::error::{Error, Result};
use crate::modality::Modality;

/// Physically related sequence pairs, in priority order.
pub const NATURAL_PAIRS: [(Modality, Modality); 3] = [
    (Modality::T1w, Modality::T1c),
    (Modality::Flair, Modality::T2w),
    (Modality::Dwi, Modality::Adc),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingBranch {
    /// Two natural pairs face each other.
    TwoPairs,
    /// One pair against the single leftover stream.
    PairAndSingle,
    /// One pair and one leftover on opposite sides, the second leftover shared as context.
    PairAndContext,
    /// The only two streams form a natural pair; its members face each other.
    SplitPair,
    /// Three natural pairs: the first two face each other, the third is shared context.
    ThreePairs,
    /// Pairs plus the first half of the leftovers against the second half.
    Halves,
}

/// Which streams (by input index) make up each side. Context streams appear on both sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingPlan {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub branch: PairingBranch,
}

impl PairingPlan {
    /// Number of stream segments after concatenation on both sides.
    pub fn num_segments(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn describe(&self, modalities: &[Modality]) -> String {
        let side = |v: &[usize]| {
            v.iter()
                .map(|&i| modalities[i].as_str())
                .collect::<Vec<_>>()
                .join(";")
        };
        format!("A=[{}] B=[{}]", side(&self.a), side(&self.b))
    }
}

impl fmt::Display for PairingBranch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PairingBranch::TwoPairs => "two-pairs",
            PairingBranch::PairAndSingle => "pair-and-single",
            PairingBranch::PairAndContext => "pair-and-context",
            PairingBranch::SplitPair => "split-pair",
            PairingBranch::ThreePairs => "three-pairs",
            PairingBranch::Halves => "halves",
        };
        f.write_str(s)
    }
}

/// Groups streams into natural pairs and leftovers, then picks the two sides.
///
/// Leftovers keep their input order.
pub fn pair_streams(modalities: &[Modality]) -> Result<PairingPlan> {
    if modalities.len() < 2 {
        return Err(Error::config(format!(
            "cross-modal fusion needs at least 2 streams, got {}",
            modalities.len()
        )));
    }
    for (i, m) in modalities.iter().enumerate() {
        if modalities[..i].contains(m) {
            return Err(Error::config(format!("modality {m} appears twice")));
        }
    }
    let pos = |m: Modality| modalities.iter().position(|&x| x == m);
    let mut pairs: Vec<[usize; 2]> = Vec::new();
    for (a, b) in NATURAL_PAIRS {
        if let (Some(i), Some(j)) = (pos(a), pos(b)) {
            pairs.push([i, j]);
        }
    }
    let paired: Vec<usize> = pairs.iter().flatten().copied().collect();
    let others: Vec<usize> = (0..modalities.len()).filter(|i| !paired.contains(i)).collect();

    let plan = match (pairs.len(), others.len()) {
        (2, _) => {
            let mut a = pairs[0].to_vec();
            let mut b = pairs[1].to_vec();
            a.extend(&others);
            b.extend(&others);
            PairingPlan { a, b, branch: PairingBranch::TwoPairs }
        }
        (1, 1) => PairingPlan {
            a: pairs[0].to_vec(),
            b: vec![others[0]],
            branch: PairingBranch::PairAndSingle,
        },
        (1, 2) => {
            let mut a = pairs[0].to_vec();
            a.push(others[1]);
            PairingPlan {
                a,
                b: vec![others[0], others[1]],
                branch: PairingBranch::PairAndContext,
            }
        }
        (1, 0) => PairingPlan {
            a: vec![pairs[0][0]],
            b: vec![pairs[0][1]],
            branch: PairingBranch::SplitPair,
        },
        (3, _) => {
            let mut a = pairs[0].to_vec();
            let mut b = pairs[1].to_vec();
            a.extend(pairs[2]);
            b.extend(pairs[2]);
            PairingPlan { a, b, branch: PairingBranch::ThreePairs }
        }
        _ => {
            let half = others.len() / 2;
            let mut a = paired.clone();
            a.extend(&others[..half]);
            PairingPlan {
                a,
                b: others[half..].to_vec(),
                branch: PairingBranch::Halves,
            }
        }
    };
    if plan.a.is_empty() || plan.b.is_empty() {
        return Err(Error::config(format!(
            "pairing of {modalities:?} left one side empty"
        )));
    }
    Ok(plan)
}

/// Concatenates the token sequences of each side along the token axis; every stream must share
/// one grid.
pub fn gather(plan: &PairingPlan, streams: &[TokenGrid]) -> Result<(Tensor, Tensor)> {
    let grid = streams
        .first()
        .ok_or_else(|| Error::shape("no streams to pair"))?
        .grid;
    if let Some(s) = streams.iter().find(|s| s.grid != grid) {
        return Err(Error::shape(format!(
            "stream grids differ: {:?} vs {:?}",
            grid, s.grid
        )));
    }
    let side = |idx: &[usize]| -> Result<Tensor> {
        let parts: Vec<&Tensor> = idx
            .iter()
            .map(|&i| {
                streams
                    .get(i)
                    .map(|s| &s.tokens)
                    .ok_or_else(|| Error::shape(format!("stream {i} missing")))
            })
            .collect::<Result<_>>()?;
        Ok(Tensor::cat(&parts, 1)?)
    };
    Ok((side(&plan.a)?, side(&plan.b)?))
}
