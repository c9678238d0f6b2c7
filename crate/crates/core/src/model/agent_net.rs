//! History trajectory encoder followed by the agent interaction net.

use lgt_autodiff::{ParamStore, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::features::{SequenceBatch, AGENT_FEATURES};
use crate::model::layers::{SequenceEncoder, TransformerLayer};
use crate::model::ModelConfig;
use crate::nn::Ctx;

#[derive(Clone, Debug)]
pub struct AgentNet {
    pub hte: SequenceEncoder,
    pub ain: Vec<TransformerLayer>,
}

impl AgentNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            hte: SequenceEncoder::new(store, rng, "agent.hte", AGENT_FEATURES, cfg.hte_layers, cfg)?,
            ain: (0..cfg.ain_layers)
                .map(|i| TransformerLayer::new(store, rng, &format!("agent.ain{i}"), cfg))
                .collect::<Result<_>>()?,
        })
    }

    /// `[N_a, T, M_a]` histories → `[N_a, D]`.
    pub fn hte_forward<'g>(&self, ctx: &Ctx<'_, 'g>, histories: &SequenceBatch) -> Result<Var<'g>> {
        if histories.feats.shape()[0] == 0 {
            return Err(Error::NoAgents);
        }
        self.hte.forward(ctx, histories)
    }

    /// Full self-attention across agents.
    pub fn ain_forward<'g>(&self, ctx: &Ctx<'_, 'g>, feats: Var<'g>) -> Result<Var<'g>> {
        if feats.shape()[0] == 0 {
            return Err(Error::NoAgents);
        }
        let mut h = feats;
        for layer in &self.ain {
            h = layer.forward(ctx, h, None, None, None)?;
        }
        Ok(h)
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'_, 'g>, histories: &SequenceBatch) -> Result<Var<'g>> {
        let h = self.hte_forward(ctx, histories)?;
        self.ain_forward(ctx, h)
    }
}
