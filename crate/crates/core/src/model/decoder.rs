//! K independent MLP heads, each emitting per-step offsets and a score.

use lgt_autodiff::{concat_last, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::Point2;
use crate::model::ModelConfig;
use crate::nn::{Ctx, Mlp};

#[derive(Clone, Debug)]
pub struct Decoder {
    pub heads: Vec<Mlp>,
    pub t_prime: usize,
}

/// Decoder output on the tape.
#[derive(Clone, Debug)]
pub struct DecodedModes<'g> {
    /// Per mode `[N_t, 2T']`, interleaved `x, y` per step.
    pub trajectories: Vec<Var<'g>>,
    /// `[N_t, K]` raw scores.
    pub scores: Var<'g>,
    /// `[N_t, K]` softmax of the scores.
    pub confidences: Var<'g>,
}

/// `[2T', 2T']` upper-triangular matrix turning per-step offsets into positions.
fn prefix_sum_matrix(t_prime: usize) -> Tensor {
    let n = 2 * t_prime;
    Tensor::from_fn(&[n, n], |k| {
        let (r, c) = (k / n, k % n);
        if r % 2 == c % 2 && r <= c {
            1.0
        } else {
            0.0
        }
    })
}

impl Decoder {
    /// Head `k` draws its weights from a generator seeded with `seed + k`.
    pub fn new(store: &mut ParamStore, seed: u64, cfg: &ModelConfig) -> Result<Self> {
        let heads = (0..cfg.k)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
                Mlp::new(
                    store,
                    &mut rng,
                    &format!("decoder.head{k}"),
                    &[cfg.d, cfg.decoder_hidden, 2 * cfg.t_prime + 1],
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            heads,
            t_prime: cfg.t_prime,
        })
    }

    /// `feats [N_t, D]`, one anchor per row.
    pub fn forward<'g>(&self, ctx: &Ctx<'_, 'g>, feats: Var<'g>, anchors: &[Point2]) -> Result<DecodedModes<'g>> {
        let n = 2 * self.t_prime;
        let cumsum = ctx.constant(prefix_sum_matrix(self.t_prime));
        let start = ctx.constant(Tensor::from_fn(&[anchors.len(), n], |k| {
            let p = anchors[k / n];
            if k % 2 == 0 {
                p.x
            } else {
                p.y
            }
        }));
        let mut trajectories = Vec::with_capacity(self.heads.len());
        let mut scores = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let out = head.forward(ctx, feats)?;
            trajectories.push(out.narrow(0, n)?.matmul(cumsum)?.add(start)?);
            scores.push(out.narrow(n, 1)?);
        }
        let scores = concat_last(&scores)?;
        Ok(DecodedModes {
            trajectories,
            scores,
            confidences: scores.softmax(None)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_sum_accumulates_each_coordinate() {
        let m = prefix_sum_matrix(3);
        let offsets = [1.0, 10.0, 2.0, 20.0, 3.0, 30.0];
        let out: Vec<f64> = (0..6).map(|c| (0..6).map(|r| offsets[r] * m.at(&[r, c])).sum()).collect();
        assert_eq!(out, vec![1.0, 10.0, 3.0, 30.0, 6.0, 60.0]);
    }
}
