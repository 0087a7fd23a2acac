//! Windowed and shifted-window self-attention blocks applied to each stream's deepest features.
//!
//! Grids that do not tile into whole windows are zero-padded symmetrically (the odd voxel goes to
//! the trailing side). Padded positions are masked out as keys, so no real token ever attends to
//! one, and they are cropped away afterwards. In the shifted block the grid is rolled by
//! `-shift` and tokens that wrapped around are kept in separate attention regions.

use candle_core::{Module, Tensor};

use crate::error::{Error, Result};
use crate::nn::layers::{LayerNorm, Linear, Mlp};
use crate::nn::{ops, Init};

const MASKED: f64 = -1e9;

/// Token sequence `[B, h*w, C]` with its row-major grid shape.
#[derive(Debug, Clone)]
pub struct TokenGrid {
    pub tokens: Tensor,
    pub grid: (usize, usize),
}

impl TokenGrid {
    /// `[B, C, h, w]` to `[B, h*w, C]`.
    pub fn tokenize(x: &Tensor) -> Result<Self> {
        let (b, c, h, w) = x.dims4()?;
        let tokens = x.permute((0, 2, 3, 1))?.reshape((b, h * w, c))?;
        Ok(TokenGrid { tokens, grid: (h, w) })
    }

    pub fn detokenize(&self) -> Result<Tensor> {
        let (b, l, c) = self.tokens.dims3()?;
        let (h, w) = self.grid;
        if l != h * w {
            return Err(Error::shape(format!("{l} tokens do not fill a {h}x{w} grid")));
        }
        Ok(self.tokens.reshape((b, h, w, c))?.permute((0, 3, 1, 2))?.contiguous()?)
    }
}

/// Geometry of a padded (and possibly shifted) window partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLayout {
    pub grid: (usize, usize),
    pub window: usize,
    pub shift: usize,
    pub padded: (usize, usize),
    /// Leading pad rows and columns.
    pub pad_before: (usize, usize),
}

impl WindowLayout {
    pub fn new(grid: (usize, usize), window: usize, shift: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("window size must be positive"));
        }
        if shift >= window {
            return Err(Error::config(format!("shift {shift} must be smaller than window {window}")));
        }
        let padded = (grid.0.div_ceil(window) * window, grid.1.div_ceil(window) * window);
        if window > padded.0 || window > padded.1 {
            return Err(Error::config(format!(
                "window {window} larger than padded grid {padded:?}"
            )));
        }
        Ok(WindowLayout {
            grid,
            window,
            shift,
            padded,
            pad_before: ((padded.0 - grid.0) / 2, (padded.1 - grid.1) / 2),
        })
    }

    pub fn num_windows(&self) -> usize {
        (self.padded.0 / self.window) * (self.padded.1 / self.window)
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    /// Shift region of a rolled coordinate along an axis of padded length `n`.
    fn region(&self, r: usize, n: usize) -> usize {
        if self.shift == 0 || r < n - self.window {
            0
        } else if r < n - self.shift {
            1
        } else {
            2
        }
    }

    /// Whether rolled coordinate `r` on an axis maps back to a real (unpadded) position.
    fn is_real(&self, r: usize, n: usize, before: usize, len: usize) -> bool {
        let p = (r + self.shift) % n;
        p >= before && p < before + len
    }

    /// Additive mask `[nW, T, T]`: 0 where query `i` may attend key `j`, a large negative otherwise.
    pub fn attention_mask(&self) -> Vec<f64> {
        let (hp, wp) = self.padded;
        let ws = self.window;
        let t = ws * ws;
        let (nh, nw) = (hp / ws, wp / ws);
        let mut mask = vec![0.0; nh * nw * t * t];
        for wy in 0..nh {
            for wx in 0..nw {
                let win = wy * nw + wx;
                let coord = |i: usize| (wy * ws + i / ws, wx * ws + i % ws);
                for i in 0..t {
                    let (ry, rx) = coord(i);
                    let ri = (self.region(ry, hp), self.region(rx, wp));
                    for j in 0..t {
                        let (ky, kx) = coord(j);
                        let rj = (self.region(ky, hp), self.region(kx, wp));
                        let real = self.is_real(ky, hp, self.pad_before.0, self.grid.0)
                            && self.is_real(kx, wp, self.pad_before.1, self.grid.1);
                        if ri != rj || !real {
                            mask[(win * t + i) * t + j] = MASKED;
                        }
                    }
                }
            }
        }
        mask
    }
}

/// Index into the `(2w-1)^2` relative-position table for every (query, key) pair of a window.
pub fn relative_position_index(window: usize) -> Vec<u32> {
    let t = window * window;
    let span = 2 * window - 1;
    let mut idx = Vec::with_capacity(t * t);
    for i in 0..t {
        let (yi, xi) = (i / window, i % window);
        for j in 0..t {
            let (yj, xj) = (j / window, j % window);
            let dy = yi + window - 1 - yj;
            let dx = xi + window - 1 - xj;
            idx.push((dy * span + dx) as u32);
        }
    }
    idx
}

#[derive(Debug, Clone)]
pub struct WindowAttention {
    pub qkv: Linear,
    pub proj: Linear,
    /// `[(2w-1)^2, heads]`
    pub bias_table: Tensor,
    heads: usize,
    window: usize,
}

impl WindowAttention {
    pub fn new(init: &mut Init, dim: usize, heads: usize, window: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!("{heads} heads do not divide dim {dim}")));
        }
        let span = 2 * window - 1;
        Ok(WindowAttention {
            qkv: Linear::new(&mut init.pp("qkv"), dim, 3 * dim, true)?,
            proj: Linear::new(&mut init.pp("proj"), dim, dim, true)?,
            bias_table: init.normal("relative_position_bias", &[span * span, heads], 0.02)?,
            heads,
            window,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Relative position bias `[heads, T, T]`.
    pub fn position_bias(&self) -> Result<Tensor> {
        let t = self.window * self.window;
        let idx = Tensor::from_vec(relative_position_index(self.window), t * t, self.bias_table.device())?;
        Ok(self
            .bias_table
            .index_select(&idx, 0)?
            .reshape((t, t, self.heads))?
            .permute((2, 0, 1))?
            .contiguous()?)
    }

    /// Attention over windows `[B*nW, T, C]` with mask `[nW, T, T]`; returns output and probabilities
    /// `[B*nW, heads, T, T]`.
    pub fn forward_windows(&self, x: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let (bw, t, c) = x.dims3()?;
        let nwin = mask.dims3()?.0;
        let d = c / self.heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((bw, t, 3, self.heads, d))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?)? * (1.0 / (d as f64).sqrt()))?;
        let scores = scores.broadcast_add(&self.position_bias()?.unsqueeze(0)?)?;
        let scores = scores
            .reshape((bw / nwin, nwin, self.heads, t, t))?
            .broadcast_add(&mask.unsqueeze(1)?.unsqueeze(0)?)?
            .reshape((bw, self.heads, t, t))?;
        let probs = ops::softmax_last(&scores)?;
        let out = probs.matmul(&v)?.transpose(1, 2)?.reshape((bw, t, c))?;
        Ok((self.proj.forward(&out)?, probs))
    }
}

/// Pre-norm transformer block with (shifted) window attention and an MLP, both residual.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    window: usize,
    shift: usize,
}

impl SwinBlock {
    pub fn new(init: &mut Init, dim: usize, heads: usize, window: usize, shift: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(SwinBlock {
            norm1: LayerNorm::new(&mut init.pp("norm1"), dim)?,
            attn: WindowAttention::new(&mut init.pp("attn"), dim, heads, window)?,
            norm2: LayerNorm::new(&mut init.pp("norm2"), dim)?,
            mlp: Mlp::new(&mut init.pp("mlp"), dim, dim * mlp_ratio)?,
            window,
            shift,
        })
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    /// Windowed attention on a normalized grid `[B, h, w, C]`; returns the same shape and the
    /// attention probabilities.
    pub fn window_attention(&self, y: &Tensor) -> Result<(Tensor, Tensor)> {
        let (b, h, w, c) = y.dims4()?;
        let layout = WindowLayout::new((h, w), self.window, self.shift)?;
        let (hp, wp) = layout.padded;
        let (pt, pl) = layout.pad_before;
        let ws = self.window;
        let mut y = y
            .pad_with_zeros(1, pt, hp - h - pt)?
            .pad_with_zeros(2, pl, wp - w - pl)?;
        if self.shift > 0 {
            let s = self.shift as i32;
            y = y.roll(-s, 1)?.roll(-s, 2)?;
        }
        let (nh, nw) = (hp / ws, wp / ws);
        let windows = y
            .reshape((b, nh, ws, nw, ws, c))?
            .permute((0, 1, 3, 2, 4, 5))?
            .reshape((b * nh * nw, ws * ws, c))?;
        let mask = Tensor::from_vec(
            layout.attention_mask(),
            (nh * nw, ws * ws, ws * ws),
            y.device(),
        )?
        .to_dtype(y.dtype())?;
        let (out, probs) = self.attn.forward_windows(&windows, &mask)?;
        let mut out = out
            .reshape((b, nh, nw, ws, ws, c))?
            .permute((0, 1, 3, 2, 4, 5))?
            .reshape((b, hp, wp, c))?;
        if self.shift > 0 {
            let s = self.shift as i32;
            out = out.roll(s, 1)?.roll(s, 2)?;
        }
        let out = out.narrow(1, pt, h)?.narrow(2, pl, w)?;
        Ok((out, probs))
    }

    /// `x` is `[B, h, w, C]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (attn, _) = self.window_attention(&self.norm1.forward(x)?)?;
        let x = (x + attn)?;
        let m = self.mlp.forward(&self.norm2.forward(&x)?)?;
        Ok((x + m)?)
    }
}

/// Stack of Swin layers for one stream; each layer is an unshifted block followed by a block
/// shifted by half a window.
#[derive(Debug, Clone)]
pub struct SwinStage {
    pub blocks: Vec<SwinBlock>,
}

impl SwinStage {
    pub fn new(init: &mut Init, dim: usize, heads: usize, window: usize, layers: usize, mlp_ratio: usize) -> Result<Self> {
        let mut blocks = Vec::with_capacity(2 * layers);
        for l in 0..layers {
            for (j, shift) in [0, window / 2].into_iter().enumerate() {
                blocks.push(SwinBlock::new(
                    &mut init.pp(format!("layer{l}.block{j}")),
                    dim,
                    heads,
                    window,
                    shift,
                    mlp_ratio,
                )?);
            }
        }
        Ok(SwinStage { blocks })
    }

    /// Refines `[B, C, h, w]`, returning the same shape.
    pub fn refine(&self, f5: &Tensor) -> Result<Tensor> {
        let mut x = f5.permute((0, 2, 3, 1))?.contiguous()?;
        for b in &self.blocks {
            x = b.forward(&x)?;
        }
        Ok(x.permute((0, 3, 1, 2))?.contiguous()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_is_symmetric_with_trailing_extra() {
        let l = WindowLayout::new((13, 13), 7, 3).unwrap();
        assert_eq!(l.padded, (14, 14));
        assert_eq!(l.pad_before, (0, 0));
        let l = WindowLayout::new((4, 9), 7, 0).unwrap();
        assert_eq!(l.padded, (7, 14));
        assert_eq!(l.pad_before, (1, 2));
        assert!(WindowLayout::new((4, 4), 0, 0).is_err());
        assert!(WindowLayout::new((4, 4), 4, 4).is_err());
    }

    #[test]
    fn relative_index_is_symmetric_in_offsets() {
        let w = 3;
        let idx = relative_position_index(w);
        let t = w * w;
        // Zero offset maps to the table centre.
        for i in 0..t {
            assert_eq!(idx[i * t + i] as usize, (w - 1) * (2 * w - 1) + (w - 1));
        }
        assert!(idx.iter().all(|&v| (v as usize) < (2 * w - 1) * (2 * w - 1)));
    }

    #[test]
    fn unshifted_mask_hides_only_padding() {
        let l = WindowLayout::new((3, 3), 4, 0).unwrap();
        let m = l.attention_mask();
        let masked = m.iter().filter(|&&v| v < 0.0).count();
        // 16 queries each see 7 pad keys.
        assert_eq!(masked, 16 * 7);
    }
}
