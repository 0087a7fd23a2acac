//! Independent per-modality five-stage CNN encoders.

use candle_core::{Module, Tensor};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::layers::ConvNormAct;
use crate::nn::{ops, Init};

/// Feature maps `f1..f5` of one stream, finest first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
    pub modality: Modality,
}

impl FeaturePyramid {
    /// `level` is 1-based to match `f1..f5`.
    pub fn f(&self, level: usize) -> &Tensor {
        &self.levels[level - 1]
    }

    pub fn deepest(&self) -> &Tensor {
        &self.levels[4]
    }
}

#[derive(Debug, Clone)]
struct Stage {
    conv1: ConvNormAct,
    conv2: ConvNormAct,
}

/// One encoder: stage 1 at full resolution, each later stage after a 2x2 max-pool.
#[derive(Debug, Clone)]
pub struct StreamEncoder {
    stages: Vec<Stage>,
    modality: Modality,
    input_size: (usize, usize),
}

impl StreamEncoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig, modality: Modality) -> Result<Self> {
        let mut stages = Vec::with_capacity(5);
        let mut cin = 1;
        for (i, &c) in cfg.stage_channels.iter().enumerate() {
            let mut s = init.pp(format!("stage{}", i + 1));
            stages.push(Stage {
                conv1: ConvNormAct::new(&mut s.pp("conv1"), cin, c)?,
                conv2: ConvNormAct::new(&mut s.pp("conv2"), c, c)?,
            });
            cin = c;
        }
        Ok(StreamEncoder {
            stages,
            modality,
            input_size: cfg.input_size,
        })
    }

    /// Encodes a `[B, 1, H, W]` single-modality batch.
    pub fn encode(&self, x: &Tensor) -> Result<FeaturePyramid> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 || (h, w) != self.input_size {
            return Err(Error::config(format!(
                "{} encoder expects [B, 1, {}, {}], got [_, {c}, {h}, {w}]",
                self.modality, self.input_size.0, self.input_size.1
            )));
        }
        let mut levels = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                cur = ops::max_pool2(&cur)?;
            }
            cur = stage.conv2.forward(&stage.conv1.forward(&cur)?)?;
            levels.push(cur.clone());
        }
        Ok(FeaturePyramid {
            levels,
            modality: self.modality,
        })
    }
}

/// N architecturally identical encoders with disjoint weights.
#[derive(Debug, Clone)]
pub struct MultiStreamEncoder {
    streams: Vec<StreamEncoder>,
}

impl MultiStreamEncoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig, modalities: &[Modality]) -> Result<Self> {
        let streams = modalities
            .iter()
            .map(|&m| StreamEncoder::new(&mut init.pp(m.as_str()), cfg, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiStreamEncoder { streams })
    }

    pub fn num_streams(&self) -> usize {
        self.streams.len()
    }

    pub fn stream(&self, m: usize) -> &StreamEncoder {
        &self.streams[m]
    }

    /// Encodes `[B, M, H, W]`; channel `m` goes to stream `m`.
    pub fn encode_all(&self, x: &Tensor) -> Result<Vec<FeaturePyramid>> {
        let (_, m, _, _) = x.dims4()?;
        if m != self.streams.len() {
            return Err(Error::config(format!(
                "input has {m} modalities, model has {} streams",
                self.streams.len()
            )));
        }
        self.streams
            .iter()
            .enumerate()
            .map(|(i, s)| s.encode(&x.narrow(1, i, 1)?))
            .collect()
    }
}
