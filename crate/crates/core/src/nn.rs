//! Parameterized building blocks over the autodiff tape.

use std::cell::RefCell;

use lgt_autodiff::{uniform_fan_in, Bindings, Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::Result;

/// Collects every attention probability tensor produced during a forward pass.
#[derive(Debug, Default)]
pub struct AttentionProbe {
    records: RefCell<Vec<(String, Tensor)>>,
}

impl AttentionProbe {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, site: &str, probs: Tensor) {
        self.records.borrow_mut().push((site.to_string(), probs));
    }

    pub fn take(&self) -> Vec<(String, Tensor)> {
        std::mem::take(&mut self.records.borrow_mut())
    }
}

/// Everything a forward pass needs besides its inputs.
#[derive(Clone, Copy)]
pub struct Ctx<'a, 'g> {
    pub graph: &'g Graph,
    pub params: &'a Bindings<'g>,
    pub probe: Option<&'a AttentionProbe>,
}

impl<'a, 'g> Ctx<'a, 'g> {
    pub fn new(graph: &'g Graph, params: &'a Bindings<'g>) -> Self {
        Self {
            graph,
            params,
            probe: None,
        }
    }

    pub fn with_probe(self, probe: &'a AttentionProbe) -> Self {
        Self {
            probe: Some(probe),
            ..self
        }
    }

    pub fn p(&self, id: ParamId) -> Var<'g> {
        self.params.get(id)
    }

    pub fn constant(&self, t: Tensor) -> Var<'g> {
        self.graph.constant(t)
    }
}

/// Multiplies the last axis of a rank-2 or rank-3 `x` by a `[d_in, d_out]` matrix.
pub fn project<'g>(x: Var<'g>, w: Var<'g>) -> Result<Var<'g>> {
    let shape = x.shape();
    if shape.len() == 3 {
        let (b, n, d) = (shape[0], shape[1], shape[2]);
        let out = x.reshape(&[b * n, d])?.matmul(w)?;
        let d_out = out.shape()[1];
        Ok(out.reshape(&[b, n, d_out])?)
    } else {
        Ok(x.matmul(w)?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), uniform_fan_in(rng, &[d_in, d_out], d_in))?;
        let b = if bias {
            Some(store.add(format!("{name}.b"), uniform_fan_in(rng, &[d_out], d_in))?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'_, 'g>, x: Var<'g>) -> Result<Var<'g>> {
        let y = project(x, ctx.p(self.w))?;
        match self.b {
            Some(b) => Ok(y.add_row(ctx.p(b))?),
            None => Ok(y),
        }
    }

    /// Sets weights (and bias) to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.w).data_mut().fill(0.0);
        if let Some(b) = self.b {
            store.value_mut(b).data_mut().fill(0.0);
        }
    }
}

/// Layer normalization over the last axis with learned gain and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[d]))?,
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[d]))?,
        })
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'_, 'g>, x: Var<'g>) -> Result<Var<'g>> {
        Ok(x.layer_norm().mul_row(ctx.p(self.gain))?.add_row(ctx.p(self.shift))?)
    }
}

/// Linear layers with relu between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, widths: &[usize]) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1], true))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'_, 'g>, x: Var<'g>) -> Result<Var<'g>> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(ctx, h)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("mlp has at least one layer")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_handles_batched_input() {
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, &mut rng, "l", 3, 2, true).unwrap();
        let g = Graph::new();
        let params = store.bind(&g);
        let ctx = Ctx::new(&g, &params);
        let x = Tensor::from_fn(&[2, 4, 3], |i| i as f64 * 0.1);
        let batched = lin.forward(&ctx, ctx.constant(x.clone())).unwrap().value();
        let flat = lin
            .forward(&ctx, ctx.constant(x.reshape(&[8, 3]).unwrap()))
            .unwrap()
            .value();
        assert_eq!(batched.shape(), &[2, 4, 2]);
        assert_eq!(batched.data(), flat.data());
    }

    #[test]
    fn layer_norm_starts_as_plain_normalization() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 4).unwrap();
        let g = Graph::new();
        let params = store.bind(&g);
        let ctx = Ctx::new(&g, &params);
        let y = ln.forward(&ctx, ctx.constant(Tensor::from_fn(&[1, 4], |i| i as f64))).unwrap().value();
        assert!(y.data().iter().sum::<f64>().abs() < 1e-12);
    }
}
