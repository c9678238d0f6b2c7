//! Agent–lane interaction in the order A2L, L2L, L2A, A2A.

use lgt_autodiff::{Mask, ParamStore, Var};
use rand::Rng;

use crate::attention::knn_mask;
use crate::error::Result;
use crate::geometry::Point2;
use crate::model::layers::TransformerLayer;
use crate::model::map_net::LgtStack;
use crate::model::ModelConfig;
use crate::nn::Ctx;
use crate::topology::TopologyMatrices;

#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub a2l: TransformerLayer,
    pub l2l: LgtStack,
    pub l2a: TransformerLayer,
    pub a2a: TransformerLayer,
}

#[derive(Clone, Debug)]
pub struct FusionNet {
    pub blocks: Vec<FusionBlock>,
    pub e_a2l: usize,
    pub e_l2a: usize,
    pub e_a2a: usize,
    pub local: bool,
}

/// Positions the fusion stages use for neighbor queries.
#[derive(Clone, Copy, Debug)]
pub struct FusionPositions<'a> {
    pub agents: &'a [Point2],
    pub lanes: &'a [Point2],
}

impl FusionNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) -> Result<Self> {
        let blocks = (0..cfg.fusion_layers)
            .map(|i| {
                let name = format!("fusion{i}");
                Ok(FusionBlock {
                    a2l: TransformerLayer::new(store, rng, &format!("{name}.a2l"), cfg)?,
                    l2l: LgtStack::new(store, rng, &format!("{name}.l2l"), 1, cfg)?,
                    l2a: TransformerLayer::new(store, rng, &format!("{name}.l2a"), cfg)?,
                    a2a: TransformerLayer::new(store, rng, &format!("{name}.a2a"), cfg)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            e_a2l: cfg.e_a2l,
            e_l2a: cfg.e_l2a,
            e_a2a: cfg.e_a2a,
            local: cfg.local_attention,
        })
    }

    fn mask(&self, q: &[Point2], k: &[Point2], e: usize) -> Result<Option<Mask>> {
        if self.local {
            knn_mask(q, k, e).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Returns the fused agent features `[N_a, D]`.
    pub fn forward<'g>(
        &self,
        ctx: &Ctx<'_, 'g>,
        agents: Var<'g>,
        lanes: Var<'g>,
        pos: FusionPositions<'_>,
        tm: &TopologyMatrices,
    ) -> Result<Var<'g>> {
        let a2l = self.mask(pos.lanes, pos.agents, self.e_a2l)?;
        let l2a = self.mask(pos.agents, pos.lanes, self.e_l2a)?;
        let a2a = self.mask(pos.agents, pos.agents, self.e_a2a)?;
        let (mut a, mut l) = (agents, lanes);
        for block in &self.blocks {
            l = block.a2l.forward(ctx, l, Some(a), a2l.as_ref(), None)?;
            l = block.l2l.forward(ctx, l, tm)?;
            a = block.l2a.forward(ctx, a, Some(l), l2a.as_ref(), None)?;
            a = block.a2a.forward(ctx, a, None, a2a.as_ref(), None)?;
        }
        Ok(a)
    }
}
