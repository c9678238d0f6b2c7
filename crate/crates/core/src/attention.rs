//! Scaled dot-product attention, the topology-biased lane attention, and
//! e-nearest-neighbor local attention.
//!
//! The biased form computes, per head,
//! `[D_outer ⊙ softmax((QKᵀ/√d_k) ⊙ B + D_inter)] V` with
//! `B = w_p M_p + w_s M_s + c ⊙ (w_l M_l + w_r M_r)`, `c[i][j] = mlp_c(M_c[i][j])`,
//! `D_inter = w_pre1 PRE + w_suc1 SUC` and `D_outer = w_pre2 PRE + w_suc2 SUC`.

use lgt_autodiff::{concat_last, Mask, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::nn::{AttentionProbe, Ctx, Linear};
use crate::topology::TopologyMatrices;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
}

impl AttentionConfig {
    pub fn new(d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d_model == 0 || d_model % heads != 0 {
            return Err(Error::Argument(format!(
                "d_model {d_model} must be a positive multiple of heads {heads}"
            )));
        }
        Ok(Self {
            d_model,
            heads,
            d_k: d_model / heads,
        })
    }
}

/// Per-head bias terms. A missing term acts as the identity: `B = 1`,
/// `D_inter = 0`, `D_outer = 1`.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeadBias<'g> {
    pub b: Option<Var<'g>>,
    pub d_inter: Option<Var<'g>>,
    pub d_outer: Option<Var<'g>>,
}

#[derive(Clone, Debug, Default)]
pub struct BiasSet<'g> {
    pub heads: Vec<HeadBias<'g>>,
}

impl<'g> BiasSet<'g> {
    /// Fixed bias matrices, the same for every head.
    pub fn constant(ctx: &Ctx<'_, 'g>, heads: usize, b: &Tensor, d_inter: &Tensor, d_outer: &Tensor) -> Self {
        let head = HeadBias {
            b: Some(ctx.constant(b.clone())),
            d_inter: Some(ctx.constant(d_inter.clone())),
            d_outer: Some(ctx.constant(d_outer.clone())),
        };
        Self { heads: vec![head; heads] }
    }
}

/// Multi-head attention on already projected `q [.., n, d]`, `k, v [.., m, d]`;
/// returns the concatenated head outputs before the output projection.
pub fn attend<'g>(
    q: Var<'g>,
    k: Var<'g>,
    v: Var<'g>,
    cfg: &AttentionConfig,
    mask: Option<&Mask>,
    bias: Option<&BiasSet<'g>>,
    probe: Option<(&AttentionProbe, &str)>,
) -> Result<Var<'g>> {
    for x in [q, k, v] {
        if x.shape().last() != Some(&cfg.d_model) {
            return Err(lgt_autodiff::Error::Shape {
                op: "attention input",
                lhs: x.shape(),
                rhs: vec![cfg.d_model],
            }
            .into());
        }
    }
    if let Some(b) = bias {
        if b.heads.len() != cfg.heads {
            return Err(Error::Argument(format!("bias has {} heads, config {}", b.heads.len(), cfg.heads)));
        }
    }
    let scale = 1.0 / (cfg.d_k as f64).sqrt();
    let mut outs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (qh, kh, vh) = (
            q.narrow(h * cfg.d_k, cfg.d_k)?,
            k.narrow(h * cfg.d_k, cfg.d_k)?,
            v.narrow(h * cfg.d_k, cfg.d_k)?,
        );
        let mut scores = qh.matmul(kh.transpose()?)?.scale(scale);
        let hb = bias.map(|b| b.heads[h]).unwrap_or_default();
        if let Some(b) = hb.b {
            scores = scores.mul(b)?;
        }
        if let Some(d) = hb.d_inter {
            scores = scores.add(d)?;
        }
        let probs = scores.softmax(mask)?;
        if let Some((p, site)) = probe {
            p.record(site, probs.value());
        }
        let weights = match hb.d_outer {
            Some(d) => probs.mul(d)?,
            None => probs,
        };
        outs.push(weights.matmul(vh)?);
    }
    Ok(concat_last(&outs)?)
}

pub fn standard_attention<'g>(
    q: Var<'g>,
    k: Var<'g>,
    v: Var<'g>,
    cfg: &AttentionConfig,
    mask: Option<&Mask>,
) -> Result<Var<'g>> {
    attend(q, k, v, cfg, mask, None, None)
}

pub fn lgt_attention<'g>(q: Var<'g>, k: Var<'g>, v: Var<'g>, bias: &BiasSet<'g>, cfg: &AttentionConfig) -> Result<Var<'g>> {
    let n = q.shape()[0];
    for hb in &bias.heads {
        for m in [hb.b, hb.d_inter, hb.d_outer].into_iter().flatten() {
            if m.shape() != [n, k.shape()[0]] {
                return Err(lgt_autodiff::Error::Shape {
                    op: "lgt bias",
                    lhs: m.shape(),
                    rhs: vec![n, k.shape()[0]],
                }
                .into());
            }
        }
    }
    attend(q, k, v, cfg, None, Some(bias), None)
}

/// Which bias terms are active; a disabled term takes its identity value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiasToggles {
    pub use_b: bool,
    pub use_d_inter: bool,
    pub use_d_outer: bool,
}

impl Default for BiasToggles {
    fn default() -> Self {
        Self {
            use_b: true,
            use_d_inter: true,
            use_d_outer: true,
        }
    }
}

impl BiasToggles {
    pub const NONE: BiasToggles = BiasToggles {
        use_b: false,
        use_d_inter: false,
        use_d_outer: false,
    };
}

/// Learned weights combining topology matrices into a [`BiasSet`].
#[derive(Clone, Debug)]
pub struct LgtBiasWeights {
    pub heads: usize,
    pub categories: usize,
    pub w_p: ParamId,
    pub w_s: ParamId,
    pub w_l: ParamId,
    pub w_r: ParamId,
    /// `[heads, C]`, or `[heads, H]` after a hidden layer when `w_c_hidden` is set.
    pub w_c: ParamId,
    /// `[heads, C·H]` first layer of the connection-type map.
    pub w_c_hidden: Option<(ParamId, usize)>,
    pub w_pre1: ParamId,
    pub w_suc1: ParamId,
    pub w_pre2: ParamId,
    pub w_suc2: ParamId,
}

impl LgtBiasWeights {
    /// Weights that scale topology terms start at 1, `D_inter` weights at 0.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        heads: usize,
        categories: usize,
        type_hidden: usize,
    ) -> Result<Self> {
        let mut add = |s: &str, t: Tensor| store.add(format!("{name}.{s}"), t);
        let ones = Tensor::ones(&[heads]);
        let zeros = Tensor::zeros(&[heads]);
        let (w_c, w_c_hidden) = if type_hidden == 0 {
            (add("w_c", Tensor::ones(&[heads, categories]))?, None)
        } else {
            let hidden = add(
                "w_c_hidden",
                lgt_autodiff::uniform_fan_in(rng, &[heads, categories * type_hidden], categories),
            )?;
            let out = add("w_c", lgt_autodiff::uniform_fan_in(rng, &[heads, type_hidden], type_hidden))?;
            (out, Some((hidden, type_hidden)))
        };
        Ok(Self {
            heads,
            categories,
            w_p: add("w_p", ones.clone())?,
            w_s: add("w_s", ones.clone())?,
            w_l: add("w_l", ones.clone())?,
            w_r: add("w_r", ones.clone())?,
            w_c,
            w_c_hidden,
            w_pre1: add("w_pre_spd1", zeros.clone())?,
            w_suc1: add("w_suc_spd1", zeros)?,
            w_pre2: add("w_pre_spd2", ones.clone())?,
            w_suc2: add("w_suc_spd2", ones)?,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.w_p, self.w_s, self.w_l, self.w_r, self.w_c, self.w_pre1, self.w_suc1, self.w_pre2, self.w_suc2,
        ];
        ids.extend(self.w_c_hidden.map(|(id, _)| id));
        ids
    }
}

/// Builds every head's `B`, `D_inter` and `D_outer` from the topology matrices.
pub fn compose_bias_matrices<'g>(
    ctx: &Ctx<'_, 'g>,
    tm: &TopologyMatrices,
    w: &LgtBiasWeights,
    toggles: BiasToggles,
) -> Result<BiasSet<'g>> {
    let n = tm.num_lanes();
    let c = tm.num_categories();
    if c != w.categories {
        return Err(Error::Argument(format!(
            "{c} connection categories but weights expect {}",
            w.categories
        )));
    }
    let rpe = &tm.rpe;
    for m in [&rpe.m_p, &rpe.m_s, &rpe.m_l, &rpe.m_r, &tm.pre_bias, &tm.suc_bias] {
        if m.shape() != [n, n] {
            return Err(lgt_autodiff::Error::Shape {
                op: "compose_bias_matrices",
                lhs: m.shape().to_vec(),
                rhs: vec![n, n],
            }
            .into());
        }
    }
    let [m_p, m_s, m_l, m_r, pre, suc] =
        [&rpe.m_p, &rpe.m_s, &rpe.m_l, &rpe.m_r, &tm.pre_bias, &tm.suc_bias].map(|m| ctx.constant(m.clone()));
    let m_c = ctx.constant(tm.types.m_c.reshape(&[n * n, c])?);

    let weighted = |id: ParamId, h: usize, m: Var<'g>| -> Result<Var<'g>> { Ok(ctx.p(id).narrow(h, 1)?.scalar_mul(m)?) };
    let mut heads = Vec::with_capacity(w.heads);
    for h in 0..w.heads {
        let b = if toggles.use_b {
            let gate = match w.w_c_hidden {
                None => m_c.matmul(ctx.p(w.w_c).gather_rows(&[h])?.reshape(&[c, 1])?)?,
                Some((hidden, width)) => {
                    let w1 = ctx.p(hidden).gather_rows(&[h])?.reshape(&[c, width])?;
                    let w2 = ctx.p(w.w_c).gather_rows(&[h])?.reshape(&[width, 1])?;
                    m_c.matmul(w1)?.relu().matmul(w2)?
                }
            }
            .reshape(&[n, n])?;
            let lateral = weighted(w.w_l, h, m_l)?.add(weighted(w.w_r, h, m_r)?)?;
            let b = weighted(w.w_p, h, m_p)?.add(weighted(w.w_s, h, m_s)?)?.add(gate.mul(lateral)?)?;
            Some(b)
        } else {
            None
        };
        let d_inter = if toggles.use_d_inter {
            Some(weighted(w.w_pre1, h, pre)?.add(weighted(w.w_suc1, h, suc)?)?)
        } else {
            None
        };
        let d_outer = if toggles.use_d_outer {
            Some(weighted(w.w_pre2, h, pre)?.add(weighted(w.w_suc2, h, suc)?)?)
        } else {
            None
        };
        heads.push(HeadBias { b, d_inter, d_outer });
    }
    Ok(BiasSet { heads })
}

/// Indices of the `e` keys nearest to `query`, nearest first; equal distances
/// prefer the lower index.
pub fn nearest_keys(query: Point2, keys: &[Point2], e: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = keys.iter().enumerate().map(|(j, k)| (query.distance(*k), j)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(e).map(|(_, j)| j).collect()
}

/// `[nq, nk]` mask keeping each query's `e` nearest keys.
pub fn knn_mask(q_pos: &[Point2], k_pos: &[Point2], e: usize) -> Result<Mask> {
    if e < 1 {
        return Err(Error::Argument("local attention needs e >= 1".into()));
    }
    if k_pos.is_empty() {
        return Err(Error::NoKeys);
    }
    if let Some(p) = q_pos.iter().chain(k_pos).find(|p| !p.is_finite()) {
        return Err(Error::Argument(format!("non-finite position {p:?}")));
    }
    let nk = k_pos.len();
    let mut mask = Mask::from_fn(&[q_pos.len(), nk], |_| false);
    for (i, &q) in q_pos.iter().enumerate() {
        for j in nearest_keys(q, k_pos, e) {
            mask.set(i * nk + j, true);
        }
    }
    Ok(mask)
}

/// Standard attention where each query only sees its `e` nearest keys.
#[allow(clippy::too_many_arguments)]
pub fn local_attention<'g>(
    q: Var<'g>,
    k: Var<'g>,
    v: Var<'g>,
    q_pos: &[Point2],
    k_pos: &[Point2],
    e: usize,
    cfg: &AttentionConfig,
) -> Result<Var<'g>> {
    let mask = knn_mask(q_pos, k_pos, e)?;
    standard_attention(q, k, v, cfg, Some(&mask))
}

/// Projections around [`attend`].
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_o: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, cfg: AttentionConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            cfg,
            w_q: Linear::new(store, rng, &format!("{name}.q"), d, d, false)?,
            w_k: Linear::new(store, rng, &format!("{name}.k"), d, d, false)?,
            w_v: Linear::new(store, rng, &format!("{name}.v"), d, d, false)?,
            w_o: Linear::new(store, rng, &format!("{name}.o"), d, d, true)?,
        })
    }

    pub fn forward<'g>(
        &self,
        ctx: &Ctx<'_, 'g>,
        query: Var<'g>,
        context: Var<'g>,
        mask: Option<&Mask>,
        bias: Option<&BiasSet<'g>>,
        site: &str,
    ) -> Result<Var<'g>> {
        let q = self.w_q.forward(ctx, query)?;
        let k = self.w_k.forward(ctx, context)?;
        let v = self.w_v.forward(ctx, context)?;
        let heads = attend(q, k, v, &self.cfg, mask, bias, ctx.probe.map(|p| (p, site)))?;
        self.w_o.forward(ctx, heads)
    }
}
