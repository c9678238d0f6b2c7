//! Node encoder over each lane's resampled centerline followed by the
//! topology-biased lane transformer.

use lgt_autodiff::{ParamStore, Var};
use rand::Rng;

use crate::attention::{compose_bias_matrices, BiasToggles, LgtBiasWeights};
use crate::error::{Error, Result};
use crate::model::features::{SequenceBatch, LANE_FEATURES};
use crate::model::layers::{SequenceEncoder, TransformerLayer};
use crate::model::ModelConfig;
use crate::nn::Ctx;
use crate::topology::TopologyMatrices;

/// A stack of biased lane self-attention layers sharing one set of bias weights.
#[derive(Clone, Debug)]
pub struct LgtStack {
    pub bias: LgtBiasWeights,
    pub layers: Vec<TransformerLayer>,
    pub toggles: BiasToggles,
}

impl LgtStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        layers: usize,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        Ok(Self {
            bias: LgtBiasWeights::new(
                store,
                rng,
                &format!("{name}.bias"),
                cfg.heads,
                cfg.connection_types.len(),
                cfg.type_hidden,
            )?,
            layers: (0..layers)
                .map(|i| TransformerLayer::new(store, rng, &format!("{name}.layer{i}"), cfg))
                .collect::<Result<_>>()?,
            toggles: cfg.toggles(),
        })
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'_, 'g>, lanes: Var<'g>, tm: &TopologyMatrices) -> Result<Var<'g>> {
        let bias = compose_bias_matrices(ctx, tm, &self.bias, self.toggles)?;
        let mut h = lanes;
        for layer in &self.layers {
            h = layer.forward(ctx, h, None, None, Some(&bias))?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
pub struct MapNet {
    pub ne: SequenceEncoder,
    pub lgt: LgtStack,
}

impl MapNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            ne: SequenceEncoder::new(store, rng, "map.ne", LANE_FEATURES, cfg.ne_layers, cfg)?,
            lgt: LgtStack::new(store, rng, "map.lgt", cfg.lgt_layers, cfg)?,
        })
    }

    /// `[N_l, N_ls, M_m]` lane nodes → `[N_l, D]`.
    pub fn forward<'g>(&self, ctx: &Ctx<'_, 'g>, nodes: &SequenceBatch, tm: &TopologyMatrices) -> Result<Var<'g>> {
        if nodes.feats.shape()[0] == 0 {
            return Err(Error::NoLanes);
        }
        let h = self.ne.forward(ctx, nodes)?;
        self.lgt.forward(ctx, h, tm)
    }
}
