//! Nested dense decoder with top-down lesion gates on the fine skips and four output heads.
//!
//! Node `x(i, j)` lives on row `i` (row 0 is full resolution, row 4 is `center`). Row 3 starts
//! from the ungated `f4`; rows 2, 1 and 0 start from `f3`, `f2` and `f1` gated by `center`,
//! `x(3, 1)` and `x(2, 2)` respectively.

use std::collections::BTreeMap;

use candle_core::{Module, Tensor};

use super::skip_fusion::FusedSkips;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, ConvNormAct, ResidualBlock};
use crate::nn::{ops, Init};

pub const DEPTH: usize = 4;

/// Evaluation order of the dense nodes; every node appears after its inputs and after the node
/// guiding the gate of its row.
pub const NODE_ORDER: [(usize, usize); 10] = [
    (3, 1),
    (2, 1),
    (1, 1),
    (2, 2),
    (0, 1),
    (1, 2),
    (0, 2),
    (1, 3),
    (0, 3),
    (0, 4),
];

/// Inputs of node `(i, j)`, `j >= 1`: same-row predecessors `x(i, 0..j)` and the upsampled
/// `x(i+1, j-1)` from the row below.
pub fn node_inputs(i: usize, j: usize) -> (Vec<(usize, usize)>, (usize, usize)) {
    ((0..j).map(|k| (i, k)).collect(), (i + 1, j - 1))
}

/// Node guiding the gate of row `i` in {0, 1, 2}.
pub fn gate_guide(row: usize) -> (usize, usize) {
    match row {
        2 => (4, 0),
        1 => (3, 1),
        0 => (2, 2),
        _ => panic!("row {row} has no gate"),
    }
}

/// Residual spatial gate: `f + f * sigmoid(C(U(g)))`.
#[derive(Debug, Clone)]
pub struct LesionGate {
    pub block: ConvNormAct,
    pub logit: Conv2d,
}

impl LesionGate {
    pub fn new(init: &mut Init, guide_channels: usize, skip_channels: usize) -> Result<Self> {
        Ok(LesionGate {
            block: ConvNormAct::new(&mut init.pp("block"), guide_channels, skip_channels)?,
            logit: Conv2d::new(&mut init.pp("logit"), skip_channels, 1, 3, true)?,
        })
    }

    /// Gate logits `[B, 1, H, W]` at the given size.
    pub fn logits(&self, g: &Tensor, size: (usize, usize)) -> Result<Tensor> {
        let up = ops::resize_bilinear(g, size.0, size.1)?;
        Ok(self.logit.forward(&self.block.forward(&up)?)?)
    }

    /// Applies precomputed gate logits to a skip map.
    pub fn apply(f: &Tensor, logits: &Tensor) -> Result<Tensor> {
        let (b, _, h, w) = f.dims4()?;
        let (lb, lc, lh, lw) = logits.dims4()?;
        if (lb, lh, lw) != (b, h, w) || lc != 1 {
            return Err(Error::shape(format!(
                "gate logits {:?} do not match skip {:?}",
                logits.dims(),
                f.dims()
            )));
        }
        let gated = f.broadcast_mul(&ops::sigmoid(logits)?)?;
        Ok((f + gated)?)
    }

    pub fn forward(&self, f: &Tensor, g: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = f.dims4()?;
        let logits = self.logits(g, (h, w))?;
        Self::apply(f, &logits)
    }
}

/// Logit maps of the four supervised heads.
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    /// `[B, K, H, W]` from `x(0, 4)`.
    pub main: Tensor,
    /// `[B, K, H, W]` from `x(0, 2)`.
    pub aux1: Tensor,
    /// `[B, K, H, W]` from `x(0, 3)`.
    pub aux2: Tensor,
    /// `[B, 1, H/16, W/16]` from `center`.
    pub lesion: Tensor,
}

/// All decoder nodes and gated skips of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct DecoderState {
    pub nodes: BTreeMap<(usize, usize), Tensor>,
    /// Gated `f1`, `f2`, `f3`.
    pub gated: Vec<Tensor>,
}

impl DecoderState {
    pub fn node(&self, i: usize, j: usize) -> Result<&Tensor> {
        self.nodes
            .get(&(i, j))
            .ok_or_else(|| Error::shape(format!("decoder node ({i}, {j}) not computed")))
    }
}

#[derive(Debug, Clone)]
pub struct GatedDecoder {
    pub nodes: BTreeMap<(usize, usize), ResidualBlock>,
    /// Gates for rows 0, 1, 2.
    pub gates: Vec<LesionGate>,
    pub head_main: Conv2d,
    pub head_aux1: Conv2d,
    pub head_aux2: Conv2d,
    pub head_lesion: Conv2d,
}

impl GatedDecoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let c = &cfg.stage_channels;
        if c.len() != DEPTH + 1 {
            return Err(Error::config(format!("decoder needs 5 stage widths, got {}", c.len())));
        }
        let mut nodes = BTreeMap::new();
        for &(i, j) in NODE_ORDER.iter() {
            let cin = j * c[i] + c[i + 1];
            nodes.insert((i, j), ResidualBlock::new(&mut init.pp(format!("x{i}{j}")), cin, c[i])?);
        }
        let mut gates = Vec::with_capacity(3);
        for row in 0..3 {
            let (gi, _) = gate_guide(row);
            gates.push(LesionGate::new(&mut init.pp(format!("gate{}", row + 1)), c[gi], c[row])?);
        }
        let k = cfg.num_classes;
        Ok(GatedDecoder {
            nodes,
            gates,
            head_main: Conv2d::new(&mut init.pp("head.main"), c[0], k, 1, true)?,
            head_aux1: Conv2d::new(&mut init.pp("head.aux1"), c[0], k, 1, true)?,
            head_aux2: Conv2d::new(&mut init.pp("head.aux2"), c[0], k, 1, true)?,
            head_lesion: Conv2d::new(&mut init.pp("head.lesion"), c[DEPTH], 1, 1, true)?,
        })
    }

    /// Runs every node in dependency order.
    pub fn decode_state(&self, center: &Tensor, skips: &FusedSkips) -> Result<DecoderState> {
        if skips.levels.len() != DEPTH {
            return Err(Error::shape(format!("expected 4 skips, got {}", skips.levels.len())));
        }
        let mut st = DecoderState::default();
        st.nodes.insert((4, 0), center.clone());
        st.nodes.insert((3, 0), skips.f(4).clone());
        st.gated = vec![Tensor::zeros(1, center.dtype(), center.device())?; 3];
        for &(i, j) in NODE_ORDER.iter() {
            if j == 1 && i < 3 {
                // The row's gate guide was computed earlier in NODE_ORDER.
                let (gi, gj) = gate_guide(i);
                let g = st.node(gi, gj)?.clone();
                let gated = self.gates[i].forward(skips.f(i + 1), &g)?;
                st.gated[i] = gated.clone();
                st.nodes.insert((i, 0), gated);
            }
            let (same, below) = node_inputs(i, j);
            let (_, _, h, w) = st.node(i, 0)?.dims4()?;
            let mut parts = Vec::with_capacity(j + 1);
            for (a, b) in same {
                parts.push(st.node(a, b)?.clone());
            }
            parts.push(ops::resize_bilinear(st.node(below.0, below.1)?, h, w)?);
            let x = self.nodes[&(i, j)].forward(&Tensor::cat(&parts, 1)?)?;
            st.nodes.insert((i, j), x);
        }
        Ok(st)
    }

    pub fn heads(&self, st: &DecoderState) -> Result<HeadOutputs> {
        Ok(HeadOutputs {
            main: self.head_main.forward(st.node(0, 4)?)?,
            aux1: self.head_aux1.forward(st.node(0, 2)?)?,
            aux2: self.head_aux2.forward(st.node(0, 3)?)?,
            lesion: self.head_lesion.forward(st.node(4, 0)?)?,
        })
    }

    pub fn decode(&self, center: &Tensor, skips: &FusedSkips) -> Result<HeadOutputs> {
        self.heads(&self.decode_state(center, skips)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn order_respects_dependencies() {
        let mut done: HashSet<(usize, usize)> = [(4, 0), (3, 0)].into_iter().collect();
        for &(i, j) in NODE_ORDER.iter() {
            if j == 1 && i < 3 {
                assert!(done.contains(&gate_guide(i)), "gate guide of row {i} not ready");
                done.insert((i, 0));
            }
            let (same, below) = node_inputs(i, j);
            for n in same.iter().chain(std::iter::once(&below)) {
                assert!(done.contains(n), "({i},{j}) needs {n:?}");
            }
            done.insert((i, j));
        }
        assert_eq!(done.len(), 15);
    }

    #[test]
    fn dense_inputs_of_deepest_node() {
        let (same, below) = node_inputs(0, 4);
        assert_eq!(same, vec![(0, 0), (0, 1), (0, 2), (0, 3)]);
        assert_eq!(below, (1, 3));
    }
}
