//! The full network: per-modality encoders, skip fusion, hybrid bottleneck and gated decoder.

pub mod bottleneck;
pub mod encoder;
pub mod gated_decoder;
pub mod skip_fusion;

use candle_core::{DType, Tensor};

pub use bottleneck::{pair_streams, Bottleneck, PairingPlan};
pub use encoder::{FeaturePyramid, MultiStreamEncoder, StreamEncoder};
pub use gated_decoder::{DecoderState, GatedDecoder, HeadOutputs, LesionGate};
pub use skip_fusion::{Cbam, FusedSkips, SkipFusion};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::{seeded_rng, Init, ParamStore};

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pyramids: Vec<FeaturePyramid>,
    pub skips: FusedSkips,
    pub center: Tensor,
    pub decoder: DecoderState,
    pub heads: HeadOutputs,
}

#[derive(Debug, Clone)]
pub struct SynapseNet {
    pub encoder: MultiStreamEncoder,
    pub skip_fusion: SkipFusion,
    pub bottleneck: Bottleneck,
    pub decoder: GatedDecoder,
    store: ParamStore,
    config: ModelConfig,
    modalities: Vec<Modality>,
}

impl SynapseNet {
    /// Builds the network with weights drawn deterministically from `seed`.
    pub fn new(cfg: &ModelConfig, modalities: &[Modality], seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        if modalities.len() != cfg.num_streams {
            return Err(Error::config(format!(
                "stream/modality mismatch: num_streams = {} but {} modalities given",
                cfg.num_streams,
                modalities.len()
            )));
        }
        let mut store = ParamStore::new(dtype);
        let mut rng = seeded_rng(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let encoder = MultiStreamEncoder::new(&mut init.pp("encoder"), cfg, modalities)?;
        let skip_fusion = SkipFusion::new(&mut init.pp("skip_fusion"), cfg)?;
        let bottleneck = Bottleneck::new(&mut init.pp("bottleneck"), cfg, modalities)?;
        let decoder = GatedDecoder::new(&mut init.pp("decoder"), cfg)?;
        Ok(SynapseNet {
            encoder,
            skip_fusion,
            bottleneck,
            decoder,
            store,
            config: cfg.clone(),
            modalities: modalities.to_vec(),
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Full forward pass on `[B, M, H, W]` keeping every intermediate.
    pub fn trace(&self, x: &Tensor) -> Result<ForwardTrace> {
        let x = x.to_dtype(self.dtype())?;
        let pyramids = self.encoder.encode_all(&x)?;
        let skips = self.skip_fusion.fuse(&pyramids)?;
        let deepest: Vec<&Tensor> = pyramids.iter().map(|p| p.deepest()).collect();
        let center = self.bottleneck.forward(&deepest)?;
        let decoder = self.decoder.decode_state(&center, &skips)?;
        let heads = self.decoder.heads(&decoder)?;
        Ok(ForwardTrace {
            pyramids,
            skips,
            center,
            decoder,
            heads,
        })
    }

    /// Logits of all four heads for `[B, M, H, W]`.
    pub fn forward(&self, x: &Tensor) -> Result<HeadOutputs> {
        Ok(self.trace(x)?.heads)
    }

    /// Main-head probabilities `[B, K, H, W]`, detached from the graph.
    pub fn predict_probs(&self, x: &Tensor) -> Result<Tensor> {
        let heads = self.forward(x)?;
        Ok(crate::nn::ops::sigmoid(&heads.main)?.detach())
    }
}
