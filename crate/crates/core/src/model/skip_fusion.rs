//! Cross-stream skip fusion: concatenation, 1x1 projection, then channel and spatial attention.

use candle_core::{Module, Tensor, D};

use super::encoder::FeaturePyramid;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, Linear};
use crate::nn::{ops, Init};

/// Fused, attention-refined skips `f1..f4` at channels `c1..c4`.
#[derive(Debug, Clone)]
pub struct FusedSkips {
    pub levels: Vec<Tensor>,
}

impl FusedSkips {
    /// 1-based level.
    pub fn f(&self, level: usize) -> &Tensor {
        &self.levels[level - 1]
    }
}

/// Convolutional block attention: channel gate from a shared MLP over average- and max-pooled
/// descriptors, then a spatial gate from a 7x7 convolution over channel-pooled maps.
#[derive(Debug, Clone)]
pub struct Cbam {
    pub fc1: Linear,
    pub fc2: Linear,
    pub spatial: Conv2d,
}

impl Cbam {
    pub fn new(init: &mut Init, channels: usize, reduction: usize, min_hidden: usize) -> Result<Self> {
        let hidden = (channels / reduction.max(1)).max(min_hidden);
        Ok(Cbam {
            fc1: Linear::new(&mut init.pp("mlp.fc1"), channels, hidden, true)?,
            fc2: Linear::new(&mut init.pp("mlp.fc2"), hidden, channels, true)?,
            spatial: Conv2d::new(&mut init.pp("spatial"), 2, 1, 7, true)?,
        })
    }

    fn mlp(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.fc2.forward(&self.fc1.forward(x)?.silu()?)?)
    }

    /// `M_c(F)`, shape `[B, C, 1, 1]`.
    pub fn channel_attention(&self, f: &Tensor) -> Result<Tensor> {
        let (b, c, _, _) = f.dims4()?;
        let flat = f.flatten_from(2)?;
        let avg = flat.mean(D::Minus1)?;
        let max = flat.max(D::Minus1)?;
        let logits = (self.mlp(&avg)? + self.mlp(&max)?)?;
        Ok(ops::sigmoid(&logits)?.reshape((b, c, 1, 1))?)
    }

    /// `M_s(F')`, shape `[B, 1, H, W]`.
    pub fn spatial_attention(&self, f: &Tensor) -> Result<Tensor> {
        let avg = f.mean_keepdim(1)?;
        let max = f.max_keepdim(1)?;
        let pooled = Tensor::cat(&[avg, max], 1)?;
        Ok(ops::sigmoid(&self.spatial.forward(&pooled)?)?)
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        let f1 = f.broadcast_mul(&self.channel_attention(f)?)?;
        Ok(f1.broadcast_mul(&self.spatial_attention(&f1)?)?)
    }
}

/// Learned 1x1 projection from `N * c` concatenated channels back to `c`.
#[derive(Debug, Clone)]
pub struct LevelProjection {
    pub conv: Conv2d,
    streams: usize,
}

impl LevelProjection {
    pub fn new(init: &mut Init, streams: usize, channels: usize) -> Result<Self> {
        Ok(LevelProjection {
            conv: Conv2d::new(init, streams * channels, channels, 1, true)?,
            streams,
        })
    }

    pub fn forward(&self, maps: &[&Tensor]) -> Result<Tensor> {
        if maps.len() != self.streams {
            return Err(Error::shape(format!(
                "projection expects {} maps, got {}",
                self.streams,
                maps.len()
            )));
        }
        let dims = maps[0].dims4()?;
        for m in maps {
            if m.dims4()? != dims {
                return Err(Error::shape(format!(
                    "cannot fuse maps of shapes {:?} and {:?}",
                    dims,
                    m.dims4()?
                )));
            }
        }
        let cat = Tensor::cat(maps, 1)?;
        Ok(self.conv.forward(&cat)?)
    }
}

#[derive(Debug, Clone)]
pub struct SkipFusion {
    pub projections: Vec<LevelProjection>,
    pub attention: Vec<Cbam>,
}

impl SkipFusion {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let mut projections = Vec::with_capacity(4);
        let mut attention = Vec::with_capacity(4);
        for level in 0..4 {
            let c = cfg.stage_channels[level];
            let mut l = init.pp(format!("level{}", level + 1));
            projections.push(LevelProjection::new(&mut l.pp("proj"), cfg.num_streams, c)?);
            attention.push(Cbam::new(&mut l.pp("cbam"), c, cfg.cbam_reduction, cfg.cbam_min_hidden)?);
        }
        Ok(SkipFusion {
            projections,
            attention,
        })
    }

    /// Fuses levels 1-4; `f5` is left for the bottleneck.
    pub fn fuse(&self, pyramids: &[FeaturePyramid]) -> Result<FusedSkips> {
        if pyramids.is_empty() {
            return Err(Error::config("skip fusion needs at least one stream"));
        }
        let levels = (0..4)
            .map(|i| {
                let maps: Vec<&Tensor> = pyramids.iter().map(|p| &p.levels[i]).collect();
                self.attention[i].forward(&self.projections[i].forward(&maps)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FusedSkips { levels })
    }
}
