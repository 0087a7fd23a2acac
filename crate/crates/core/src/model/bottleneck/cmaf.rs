//! Bi-directional multi-head cross-attention between the two paired token sequences.

use candle_core::{Module, Tensor};

use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, LayerNorm, Linear, ResidualBlock};
use crate::nn::{ops, Init};

/// Scaled dot-product attention over heads. `q` is `[B, Lq, C]`, `k` and `v` are `[B, Lk, C]`.
/// Returns the merged output `[B, Lq, C]` and probabilities `[B, heads, Lq, Lk]`.
pub fn multi_head_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<(Tensor, Tensor)> {
    let (b, lq, c) = q.dims3()?;
    let lk = k.dims3()?.1;
    if c % heads != 0 {
        return Err(Error::config(format!("{heads} heads do not divide dim {c}")));
    }
    let d = c / heads;
    let split = |t: &Tensor, l: usize| -> Result<Tensor> {
        Ok(t.reshape((b, l, heads, d))?.transpose(1, 2)?.contiguous()?)
    };
    let (qh, kh, vh) = (split(q, lq)?, split(k, lk)?, split(v, lk)?);
    let scores = (qh.matmul(&kh.t()?)? * (1.0 / (d as f64).sqrt()))?;
    let probs = ops::softmax_last(&scores)?;
    let out = probs.matmul(&vh)?.transpose(1, 2)?.reshape((b, lq, c))?;
    Ok((out, probs))
}

/// Queries from one sequence, keys and values from the other.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    heads: usize,
}

impl CrossAttention {
    pub fn new(init: &mut Init, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!("{heads} heads do not divide dim {dim}")));
        }
        Ok(CrossAttention {
            q: Linear::new(&mut init.pp("q"), dim, dim, true)?,
            k: Linear::new(&mut init.pp("k"), dim, dim, true)?,
            v: Linear::new(&mut init.pp("v"), dim, dim, true)?,
            out: Linear::new(&mut init.pp("out"), dim, dim, true)?,
            heads,
        })
    }

    pub fn forward(&self, query: &Tensor, context: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_probs(query, context)?.0)
    }

    pub fn forward_with_probs(&self, query: &Tensor, context: &Tensor) -> Result<(Tensor, Tensor)> {
        let (out, probs) = multi_head_attention(
            &self.q.forward(query)?,
            &self.k.forward(context)?,
            &self.v.forward(context)?,
            self.heads,
        )?;
        Ok((self.out.forward(&out)?, probs))
    }
}

/// Cross-modal attention fusion producing the bottleneck tensor.
#[derive(Debug, Clone)]
pub struct CrossModalFusion {
    pub a_from_b: CrossAttention,
    pub b_from_a: CrossAttention,
    pub norm_a: LayerNorm,
    pub norm_b: LayerNorm,
    pub proj: Conv2d,
    pub block: ResidualBlock,
    segments: (usize, usize),
}

impl CrossModalFusion {
    /// `segments` is the number of stream grids concatenated on side A and side B.
    pub fn new(init: &mut Init, dim: usize, heads: usize, segments: (usize, usize)) -> Result<Self> {
        let total = segments.0 + segments.1;
        Ok(CrossModalFusion {
            a_from_b: CrossAttention::new(&mut init.pp("a_from_b"), dim, heads)?,
            b_from_a: CrossAttention::new(&mut init.pp("b_from_a"), dim, heads)?,
            norm_a: LayerNorm::new(&mut init.pp("norm_a"), dim)?,
            norm_b: LayerNorm::new(&mut init.pp("norm_b"), dim)?,
            proj: Conv2d::new(&mut init.pp("proj"), total * dim, dim, 1, true)?,
            block: ResidualBlock::new(&mut init.pp("block"), dim, dim)?,
            segments,
        })
    }

    /// `T'_A = LN(T_A + CrossAtt(A <- B))` and the reciprocal.
    pub fn enrich(&self, ta: &Tensor, tb: &Tensor) -> Result<(Tensor, Tensor)> {
        let ea = self.norm_a.forward(&(ta + self.a_from_b.forward(ta, tb)?)?)?;
        let eb = self.norm_b.forward(&(tb + self.b_from_a.forward(tb, ta)?)?)?;
        Ok((ea, eb))
    }

    /// Fuses sides `[B, nA*h*w, C]` and `[B, nB*h*w, C]` into `[B, C, h, w]`.
    pub fn forward(&self, ta: &Tensor, tb: &Tensor, grid: (usize, usize)) -> Result<Tensor> {
        let (b, la, c) = ta.dims3()?;
        let lb = tb.dims3()?.1;
        let l = grid.0 * grid.1;
        if la != self.segments.0 * l || lb != self.segments.1 * l {
            return Err(Error::shape(format!(
                "token counts ({la}, {lb}) do not match {:?} segments of a {}x{} grid",
                self.segments, grid.0, grid.1
            )));
        }
        let (ea, eb) = self.enrich(ta, tb)?;
        let mut maps = Vec::with_capacity(self.segments.0 + self.segments.1);
        for (e, n) in [(&ea, self.segments.0), (&eb, self.segments.1)] {
            for s in 0..n {
                let seg = e.narrow(1, s * l, l)?;
                maps.push(seg.reshape((b, grid.0, grid.1, c))?.permute((0, 3, 1, 2))?);
            }
        }
        let cat = Tensor::cat(&maps, 1)?.contiguous()?;
        Ok(self.block.forward(&self.proj.forward(&cat)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn two_token_attention_matches_hand_computation() {
        let dev = Device::Cpu;
        // One head, dim 1: q = [1], keys [0, 1], values [2, 4].
        let q = Tensor::new(&[[[1.0f64]]], &dev).unwrap();
        let k = Tensor::new(&[[[0.0f64], [1.0]]], &dev).unwrap();
        let v = Tensor::new(&[[[2.0f64], [4.0]]], &dev).unwrap();
        let (out, probs) = multi_head_attention(&q, &k, &v, 1).unwrap();
        let e = 1.0f64.exp();
        let p1 = e / (1.0 + e);
        let expect = 2.0 * (1.0 - p1) + 4.0 * p1;
        let got = out.flatten_all().unwrap().to_vec1::<f64>().unwrap()[0];
        assert!((got - expect).abs() < 1e-12);
        let p = probs.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!((p[1] - p1).abs() < 1e-12);
        assert_eq!(probs.dtype(), DType::F64);
    }
}
