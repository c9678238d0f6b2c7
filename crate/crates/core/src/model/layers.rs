use lgt_autodiff::{Mask, ParamStore, Var};
use rand::Rng;

use crate::attention::{BiasSet, MultiHeadAttention};
use crate::error::Result;
use crate::model::features::SequenceBatch;
use crate::model::ModelConfig;
use crate::nn::{Ctx, LayerNorm, Mlp};

/// Attention, residual, layer norm, relu feed-forward, residual, layer norm.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: Mlp,
    pub norm2: LayerNorm,
    pub site: String,
}

impl TransformerLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), cfg.attention())?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), cfg.d)?,
            ffn: Mlp::new(store, rng, &format!("{name}.ffn"), &[cfg.d, cfg.ffn_hidden, cfg.d])?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), cfg.d)?,
            site: name.to_string(),
        })
    }

    /// `context` defaults to `x` (self-attention).
    pub fn forward<'g>(
        &self,
        ctx: &Ctx<'_, 'g>,
        x: Var<'g>,
        context: Option<Var<'g>>,
        mask: Option<&Mask>,
        bias: Option<&BiasSet<'g>>,
    ) -> Result<Var<'g>> {
        let a = self.attn.forward(ctx, x, context.unwrap_or(x), mask, bias, &self.site)?;
        let h = self.norm1.forward(ctx, x.add(a)?)?;
        let f = self.ffn.forward(ctx, h)?;
        self.norm2.forward(ctx, h.add(f)?)
    }
}

/// Per-step MLP embedding, masked temporal self-attention, mean pooling over
/// observed steps, then an MLP aggregator. Used for agent histories and lane nodes.
#[derive(Clone, Debug)]
pub struct SequenceEncoder {
    pub embed: Mlp,
    pub layers: Vec<TransformerLayer>,
    pub aggregate: Mlp,
}

impl SequenceEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        layers: usize,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        Ok(Self {
            embed: Mlp::new(store, rng, &format!("{name}.embed"), &[d_in, cfg.d, cfg.d])?,
            layers: (0..layers)
                .map(|i| TransformerLayer::new(store, rng, &format!("{name}.layer{i}"), cfg))
                .collect::<Result<_>>()?,
            aggregate: Mlp::new(store, rng, &format!("{name}.aggregate"), &[cfg.d, cfg.d, cfg.d])?,
        })
    }

    /// `[B, L, M]` → `[B, D]`.
    pub fn forward<'g>(&self, ctx: &Ctx<'_, 'g>, batch: &SequenceBatch) -> Result<Var<'g>> {
        let mut h = self.embed.forward(ctx, ctx.constant(batch.feats.clone()))?;
        for layer in &self.layers {
            h = layer.forward(ctx, h, None, batch.mask.as_ref(), None)?;
        }
        let b = batch.feats.shape()[0];
        let pooled = ctx.constant(batch.pool.clone()).matmul(h)?;
        let d = pooled.shape()[2];
        self.aggregate.forward(ctx, pooled.reshape(&[b, d])?)
    }
}
