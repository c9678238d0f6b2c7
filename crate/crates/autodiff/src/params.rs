//! Named parameter registry and its binding onto a graph.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Zero-filled tensors shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect()
    }

    /// Creates one gradient-tracking leaf per parameter.
    pub fn bind<'g>(&self, graph: &'g Graph) -> Bindings<'g> {
        Bindings {
            vars: self.params.iter().map(|p| graph.param(p.value.clone())).collect(),
        }
    }
}

/// Parameter values realized as leaves of one graph.
pub struct Bindings<'g> {
    vars: Vec<Var<'g>>,
}

impl<'g> Bindings<'g> {
    /// Binds already-created leaves, in parameter order.
    pub fn from_vars(vars: Vec<Var<'g>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'g> {
        self.vars[id.0]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Per-parameter gradients in store order; zeros where the loss does not
    /// reach a parameter.
    pub fn collect(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.wrt(v)).collect()
    }
}

/// `uniform(−1/√fan_in, 1/√fan_in)` initialization.
pub fn uniform_fan_in<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(s.add("w", Tensor::zeros(&[1])), Err(Error::DuplicateParameter(_))));
        assert_eq!(s.id("w"), Some(ParamId(0)));
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::ones(&[2])).unwrap();
        s.add("unused", Tensor::ones(&[3])).unwrap();
        let g = Graph::new();
        let b = s.bind(&g);
        let grads = g.backward(b.get(a).sum()).unwrap();
        let collected = b.collect(&grads);
        assert_eq!(collected[0], Tensor::ones(&[2]));
        assert_eq!(collected[1], Tensor::zeros(&[3]));
    }
}
