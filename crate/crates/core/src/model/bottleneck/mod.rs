//! Hybrid bottleneck: per-stream Swin refinement of `f5`, then cross-modal fusion into `center`.

pub mod cmaf;
pub mod pairing;
pub mod swin;

use candle_core::{Module, Tensor};

pub use cmaf::{multi_head_attention, CrossAttention, CrossModalFusion};
pub use pairing::{gather, pair_streams, PairingBranch, PairingPlan, NATURAL_PAIRS};
pub use swin::{relative_position_index, SwinBlock, SwinStage, TokenGrid, WindowAttention, WindowLayout};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::layers::{Conv2d, ResidualBlock};
use crate::nn::Init;

#[derive(Debug, Clone)]
pub enum Fusion {
    Cross {
        plan: PairingPlan,
        fusion: CrossModalFusion,
    },
    /// A single stream has nothing to attend to: projection and residual block only.
    Single { proj: Conv2d, block: ResidualBlock },
}

#[derive(Debug, Clone)]
pub struct Bottleneck {
    pub swin: Vec<SwinStage>,
    pub fusion: Fusion,
    modalities: Vec<Modality>,
}

impl Bottleneck {
    pub fn new(init: &mut Init, cfg: &ModelConfig, modalities: &[Modality]) -> Result<Self> {
        let c5 = *cfg
            .stage_channels
            .last()
            .ok_or_else(|| Error::config("stage_channels is empty"))?;
        let mut swin = Vec::with_capacity(modalities.len());
        for m in modalities {
            swin.push(SwinStage::new(
                &mut init.pp(format!("swin.{m}")),
                c5,
                cfg.swin_heads,
                cfg.swin_window,
                cfg.swin_layers,
                cfg.mlp_ratio,
            )?);
        }
        let fusion = if modalities.len() == 1 {
            let mut f = init.pp("fusion");
            Fusion::Single {
                proj: Conv2d::new(&mut f.pp("proj"), c5, c5, 1, true)?,
                block: ResidualBlock::new(&mut f.pp("block"), c5, c5)?,
            }
        } else {
            let plan = pair_streams(modalities)?;
            let fusion = CrossModalFusion::new(
                &mut init.pp("fusion"),
                c5,
                cfg.cross_heads,
                (plan.a.len(), plan.b.len()),
            )?;
            Fusion::Cross { plan, fusion }
        };
        Ok(Bottleneck {
            swin,
            fusion,
            modalities: modalities.to_vec(),
        })
    }

    pub fn plan(&self) -> Option<&PairingPlan> {
        match &self.fusion {
            Fusion::Cross { plan, .. } => Some(plan),
            Fusion::Single { .. } => None,
        }
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    /// Swin-refined `f5` of every stream.
    pub fn refine_all(&self, deepest: &[&Tensor]) -> Result<Vec<Tensor>> {
        if deepest.len() != self.swin.len() {
            return Err(Error::shape(format!(
                "bottleneck built for {} streams, got {}",
                self.swin.len(),
                deepest.len()
            )));
        }
        self.swin.iter().zip(deepest).map(|(s, f)| s.refine(f)).collect()
    }

    /// Produces `center` `[B, c5, h, w]` from each stream's `f5`.
    pub fn forward(&self, deepest: &[&Tensor]) -> Result<Tensor> {
        let refined = self.refine_all(deepest)?;
        match &self.fusion {
            Fusion::Single { proj, block } => Ok(block.forward(&proj.forward(&refined[0])?)?),
            Fusion::Cross { plan, fusion } => {
                let grids = refined
                    .iter()
                    .map(TokenGrid::tokenize)
                    .collect::<Result<Vec<_>>>()?;
                let (ta, tb) = gather(plan, &grids)?;
                fusion.forward(&ta, &tb, grids[0].grid)
            }
        }
    }
}
