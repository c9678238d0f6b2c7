//! Operation tape and reverse-mode accumulation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Node ids
//! are assigned in creation order, so the tape is already topologically sorted
//! and [`Graph::backward`] is a single reverse sweep.
//!
//! Ops that act "on the last axis" treat a tensor of shape `[.., n]` as a stack
//! of rows of length `n`. `matmul` accepts rank-2 operands or rank-3 operands
//! with a shared leading batch axis.

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    ScalarMul(usize, usize),
    Relu(usize),
    SmoothL1(usize, f64),
    Softmax(usize),
    LayerNorm(usize, Vec<f64>),
    ConcatLast(Vec<usize>),
    ConcatRows(Vec<usize>),
    NarrowLast { input: usize, start: usize },
    GatherRows(usize, Vec<usize>),
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let rg = self.needs_grad(inputs);
        self.push(value, op, rg)
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop_node(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the loss does not depend on `var`.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], contribution: Vec<f64>) {
    match slot {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(contribution) {
                *a += b;
            }
        }
        None => {
            *slot = Some(Tensor::new(shape.to_vec(), contribution).expect("gradient shape"));
        }
    }
}

/// Dimensions `(batch, m, k)` of a rank-2 or rank-3 matmul operand.
fn mat_dims(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [m, k] => Some((1, m, k)),
        [b, m, k] => Some((b, m, k)),
        _ => None,
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`
fn gemm_bt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
fn gemm_at(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
}

fn transpose_last2(data: &[f64], shape: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let (b, m, n) = mat_dims(shape).expect("transpose rank");
    let mut out = vec![0.0; data.len()];
    for bi in 0..b {
        let src = &data[bi * m * n..(bi + 1) * m * n];
        let dst = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    let mut s = shape.to_vec();
    let r = s.len();
    s.swap(r - 2, r - 1);
    (s, out)
}

fn backprop_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let gd = g.data();
    let wants = |i: usize| nodes[i].requires_grad;
    let shape_of = |i: usize| nodes[i].value.shape().to_vec();

    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (batch, m, k) = mat_dims(av.shape()).expect("matmul lhs");
            let (_, _, n) = mat_dims(bv.shape()).expect("matmul rhs");
            if wants(*a) {
                let mut da = vec![0.0; av.len()];
                for bi in 0..batch {
                    gemm_bt(
                        &gd[bi * m * n..(bi + 1) * m * n],
                        &bv.data()[bi * k * n..(bi + 1) * k * n],
                        &mut da[bi * m * k..(bi + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
                accumulate(&mut grads[*a], av.shape(), da);
            }
            if wants(*b) {
                let mut db = vec![0.0; bv.len()];
                for bi in 0..batch {
                    gemm_at(
                        &av.data()[bi * m * k..(bi + 1) * m * k],
                        &gd[bi * m * n..(bi + 1) * m * n],
                        &mut db[bi * k * n..(bi + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
                accumulate(&mut grads[*b], bv.shape(), db);
            }
        }
        Op::Transpose(a) => {
            if wants(*a) {
                let (_, data) = transpose_last2(gd, g.shape());
                accumulate(&mut grads[*a], &shape_of(*a), data);
            }
        }
        Op::Reshape(a) | Op::AddScalar(a) => {
            if wants(*a) {
                accumulate(&mut grads[*a], &shape_of(*a), gd.to_vec());
            }
        }
        Op::Add(a, b) => {
            for i in [*a, *b] {
                if wants(i) {
                    accumulate(&mut grads[i], &shape_of(i), gd.to_vec());
                }
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                accumulate(&mut grads[*a], &shape_of(*a), gd.to_vec());
            }
            if wants(*b) {
                accumulate(&mut grads[*b], &shape_of(*b), gd.iter().map(|x| -x).collect());
            }
        }
        Op::Mul(a, b) => {
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            if wants(*a) {
                let d = gd.iter().zip(bv).map(|(g, y)| g * y).collect();
                accumulate(&mut grads[*a], &shape_of(*a), d);
            }
            if wants(*b) {
                let d = gd.iter().zip(av).map(|(g, x)| g * x).collect();
                accumulate(&mut grads[*b], &shape_of(*b), d);
            }
        }
        Op::AddRow(x, r) => {
            if wants(*x) {
                accumulate(&mut grads[*x], &shape_of(*x), gd.to_vec());
            }
            if wants(*r) {
                let n = nodes[*r].value.len();
                let mut d = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (acc, v) in d.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(&mut grads[*r], &shape_of(*r), d);
            }
        }
        Op::MulRow(x, r) => {
            let xv = nodes[*x].value.data();
            let rv = nodes[*r].value.data();
            let n = rv.len();
            if wants(*x) {
                let d = gd
                    .chunks(n)
                    .flat_map(|row| row.iter().zip(rv).map(|(g, s)| g * s))
                    .collect();
                accumulate(&mut grads[*x], &shape_of(*x), d);
            }
            if wants(*r) {
                let mut d = vec![0.0; n];
                for (grow, xrow) in gd.chunks(n).zip(xv.chunks(n)) {
                    for ((acc, g), x) in d.iter_mut().zip(grow).zip(xrow) {
                        *acc += g * x;
                    }
                }
                accumulate(&mut grads[*r], &shape_of(*r), d);
            }
        }
        Op::Scale(a, c) => {
            if wants(*a) {
                accumulate(&mut grads[*a], &shape_of(*a), gd.iter().map(|g| g * c).collect());
            }
        }
        Op::ScalarMul(s, x) => {
            let sv = nodes[*s].value.data()[0];
            let xv = nodes[*x].value.data();
            if wants(*s) {
                let d: f64 = gd.iter().zip(xv).map(|(g, x)| g * x).sum();
                accumulate(&mut grads[*s], &shape_of(*s), vec![d]);
            }
            if wants(*x) {
                accumulate(&mut grads[*x], &shape_of(*x), gd.iter().map(|g| g * sv).collect());
            }
        }
        Op::Relu(a) => {
            if wants(*a) {
                let av = nodes[*a].value.data();
                let d = gd
                    .iter()
                    .zip(av)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(&mut grads[*a], &shape_of(*a), d);
            }
        }
        Op::SmoothL1(a, delta) => {
            if wants(*a) {
                let av = nodes[*a].value.data();
                let d = gd
                    .iter()
                    .zip(av)
                    .map(|(g, &x)| g * if x.abs() <= *delta { x } else { delta * x.signum() })
                    .collect();
                accumulate(&mut grads[*a], &shape_of(*a), d);
            }
        }
        Op::Softmax(a) => {
            if wants(*a) {
                let y = node.value.data();
                let n = node.value.last_dim();
                let mut d = vec![0.0; y.len()];
                for ((drow, yrow), grow) in d.chunks_mut(n).zip(y.chunks(n)).zip(gd.chunks(n)) {
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    for ((dv, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dv = yv * (gv - dot);
                    }
                }
                accumulate(&mut grads[*a], &shape_of(*a), d);
            }
        }
        Op::LayerNorm(a, inv_std) => {
            if wants(*a) {
                let y = node.value.data();
                let n = node.value.last_dim();
                let nf = n as f64;
                let mut d = vec![0.0; y.len()];
                for (r, ((drow, yrow), grow)) in d
                    .chunks_mut(n)
                    .zip(y.chunks(n))
                    .zip(gd.chunks(n))
                    .enumerate()
                {
                    let mean_g = grow.iter().sum::<f64>() / nf;
                    let mean_gy = grow.iter().zip(yrow).map(|(g, y)| g * y).sum::<f64>() / nf;
                    for ((dv, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                        *dv = inv_std[r] * (gv - mean_g - yv * mean_gy);
                    }
                }
                accumulate(&mut grads[*a], &shape_of(*a), d);
            }
        }
        Op::ConcatLast(parts) => {
            let total = g.last_dim();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].value.last_dim();
                if wants(p) {
                    let d = gd
                        .chunks(total)
                        .flat_map(|row| row[offset..offset + w].iter().copied())
                        .collect();
                    accumulate(&mut grads[p], &shape_of(p), d);
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.len();
                if wants(p) {
                    accumulate(&mut grads[p], &shape_of(p), gd[offset..offset + len].to_vec());
                }
                offset += len;
            }
        }
        Op::NarrowLast { input, start } => {
            if wants(*input) {
                let full = nodes[*input].value.last_dim();
                let w = g.last_dim();
                let mut d = vec![0.0; nodes[*input].value.len()];
                for (drow, grow) in d.chunks_mut(full).zip(gd.chunks(w)) {
                    drow[*start..*start + w].copy_from_slice(grow);
                }
                accumulate(&mut grads[*input], &shape_of(*input), d);
            }
        }
        Op::GatherRows(a, rows) => {
            if wants(*a) {
                let av = &nodes[*a].value;
                let block = av.len() / av.shape()[0];
                let mut d = vec![0.0; av.len()];
                for (k, &r) in rows.iter().enumerate() {
                    for (dv, gv) in d[r * block..(r + 1) * block]
                        .iter_mut()
                        .zip(&gd[k * block..(k + 1) * block])
                    {
                        *dv += gv;
                    }
                }
                accumulate(&mut grads[*a], av.shape(), d);
            }
        }
        Op::Sum(a) => {
            if wants(*a) {
                let n = nodes[*a].value.len();
                accumulate(&mut grads[*a], &shape_of(*a), vec![gd[0]; n]);
            }
        }
        Op::Mean(a) => {
            if wants(*a) {
                let n = nodes[*a].value.len();
                accumulate(&mut grads[*a], &shape_of(*a), vec![gd[0] / n as f64; n]);
            }
        }
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value(self.id).shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        self.graph.value(self.id).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.graph.value(self.id))
    }

    /// Value of a one-element variable.
    pub fn item(&self) -> Result<f64> {
        self.graph.value(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn same_graph(&self, other: &Var<'g>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "variables belong to different graphs"
        );
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'g> {
        self.graph.record(value, op, &[self.id])
    }

    /// Matrix product; rank-2 × rank-2 or batched rank-3 × rank-3.
    pub fn matmul(&self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&rhs);
        let value = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(rhs.id);
            match (mat_dims(a.shape()), mat_dims(b.shape())) {
                (Some((ba, m, k)), Some((bb, k2, n)))
                    if a.rank() == b.rank() && ba == bb && k == k2 =>
                {
                    let mut out = vec![0.0; ba * m * n];
                    for bi in 0..ba {
                        gemm(
                            &a.data()[bi * m * k..(bi + 1) * m * k],
                            &b.data()[bi * k * n..(bi + 1) * k * n],
                            &mut out[bi * m * n..(bi + 1) * m * n],
                            m,
                            k,
                            n,
                        );
                    }
                    let shape = if a.rank() == 2 { vec![m, n] } else { vec![ba, m, n] };
                    Tensor::new(shape, out)?
                }
                _ => return Err(Error::shape("matmul", a.shape(), b.shape())),
            }
        };
        Ok(self.graph.record(value, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 variable.
    pub fn transpose(&self) -> Result<Var<'g>> {
        let t = self.graph.value(self.id);
        if mat_dims(t.shape()).is_none() {
            return Err(Error::Argument(format!(
                "transpose needs rank 2 or 3, got {:?}",
                t.shape()
            )));
        }
        let (shape, data) = transpose_last2(t.data(), t.shape());
        drop(t);
        Ok(self.unary(Tensor::new(shape, data)?, Op::Transpose(self.id)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g>> {
        let value = self.graph.value(self.id).reshape(shape)?;
        Ok(self.unary(value, Op::Reshape(self.id)))
    }

    fn zip_with(
        &self,
        rhs: Var<'g>,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'g>> {
        self.same_graph(&rhs);
        let value = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(rhs.id);
            if a.shape() != b.shape() {
                return Err(Error::shape(op_name, a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.graph.record(value, op, &[self.id, rhs.id]))
    }

    pub fn add(&self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.zip_with(rhs, "add", |a, b| a + b, Op::Add(self.id, rhs.id))
    }

    pub fn sub(&self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.zip_with(rhs, "sub", |a, b| a - b, Op::Sub(self.id, rhs.id))
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.zip_with(rhs, "mul", |a, b| a * b, Op::Mul(self.id, rhs.id))
    }

    fn row_broadcast(
        &self,
        row: Var<'g>,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'g>> {
        self.same_graph(&row);
        let value = {
            let x = self.graph.value(self.id);
            let r = self.graph.value(row.id);
            let n = x.last_dim();
            if r.len() != n || x.rank() == 0 {
                return Err(Error::shape(op_name, x.shape(), r.shape()));
            }
            let data = x
                .data()
                .chunks(n)
                .flat_map(|xr| xr.iter().zip(r.data()).map(|(&a, &b)| f(a, b)))
                .collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        Ok(self.graph.record(value, op, &[self.id, row.id]))
    }

    /// Adds a vector of length `last_dim` to every row.
    pub fn add_row(&self, row: Var<'g>) -> Result<Var<'g>> {
        self.row_broadcast(row, "add_row", |a, b| a + b, Op::AddRow(self.id, row.id))
    }

    /// Multiplies every row elementwise by a vector of length `last_dim`.
    pub fn mul_row(&self, row: Var<'g>) -> Result<Var<'g>> {
        self.row_broadcast(row, "mul_row", |a, b| a * b, Op::MulRow(self.id, row.id))
    }

    pub fn scale(&self, c: f64) -> Var<'g> {
        let value = self.graph.value(self.id).map(|x| x * c);
        self.unary(value, Op::Scale(self.id, c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'g> {
        let value = self.graph.value(self.id).map(|x| x + c);
        self.unary(value, Op::AddScalar(self.id))
    }

    /// `self` must hold exactly one value; multiplies every entry of `x` by it.
    pub fn scalar_mul(&self, x: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&x);
        let value = {
            let s = self.graph.value(self.id);
            if s.len() != 1 {
                return Err(Error::shape("scalar_mul", s.shape(), &[1]));
            }
            let s = s.data()[0];
            self.graph.value(x.id).map(|v| v * s)
        };
        Ok(self.graph.record(value, Op::ScalarMul(self.id, x.id), &[self.id, x.id]))
    }

    pub fn relu(&self) -> Var<'g> {
        let value = self.graph.value(self.id).map(|x| x.max(0.0));
        self.unary(value, Op::Relu(self.id))
    }

    /// Elementwise Huber function: `x²/2` for `|x| ≤ δ`, else `δ(|x| − δ/2)`.
    pub fn smooth_l1(&self, delta: f64) -> Result<Var<'g>> {
        if !(delta > 0.0) {
            return Err(Error::Argument(format!("huber delta must be > 0, got {delta}")));
        }
        let value = self
            .graph
            .value(self.id)
            .map(|x| if x.abs() <= delta { 0.5 * x * x } else { delta * (x.abs() - 0.5 * delta) });
        Ok(self.unary(value, Op::SmoothL1(self.id, delta)))
    }

    /// Softmax over the last axis. Masked entries are exactly zero and do not
    /// take part in the max used for stabilization.
    pub fn softmax(&self, mask: Option<&Mask>) -> Result<Var<'g>> {
        let value = {
            let x = self.graph.value(self.id);
            if let Some(m) = mask {
                if m.shape() != x.shape() {
                    return Err(Error::shape("softmax mask", x.shape(), m.shape()));
                }
            }
            let n = x.last_dim();
            let mut out = vec![0.0; x.len()];
            for (r, (orow, xrow)) in out.chunks_mut(n).zip(x.data().chunks(n)).enumerate() {
                let keep = |j: usize| mask.is_none_or(|m| m.keep()[r * n + j]);
                if !(0..n).any(keep) {
                    return Err(Error::EmptyAttentionRow { row: r });
                }
                let kept = || (0..n).filter(|&j| keep(j)).map(|j| xrow[j]);
                // f64::max skips NaN; keep it visible to downstream finiteness checks.
                if kept().any(f64::is_nan) {
                    orow.fill(f64::NAN);
                    continue;
                }
                let max = kept().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    if keep(j) {
                        let e = (xrow[j] - max).exp();
                        orow[j] = e;
                        total += e;
                    }
                }
                for v in orow.iter_mut() {
                    *v /= total;
                }
            }
            Tensor::new(x.shape().to_vec(), out)?
        };
        Ok(self.unary(value, Op::Softmax(self.id)))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&self) -> Var<'g> {
        let (value, inv_std) = {
            let x = self.graph.value(self.id);
            let n = x.last_dim();
            let nf = n as f64;
            let mut out = vec![0.0; x.len()];
            let mut inv = Vec::with_capacity(x.len() / n.max(1));
            for (orow, xrow) in out.chunks_mut(n).zip(x.data().chunks(n)) {
                let mean = xrow.iter().sum::<f64>() / nf;
                let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for (o, v) in orow.iter_mut().zip(xrow) {
                    *o = (v - mean) * is;
                }
                inv.push(is);
            }
            (Tensor::new(x.shape().to_vec(), out).expect("same shape"), inv)
        };
        self.unary(value, Op::LayerNorm(self.id, inv_std))
    }

    /// Keeps `len` entries of the last axis starting at `start`.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Var<'g>> {
        let value = {
            let x = self.graph.value(self.id);
            let n = x.last_dim();
            if start + len > n || len == 0 {
                return Err(Error::Argument(format!(
                    "narrow [{start}, {}) out of range for last axis {n}",
                    start + len
                )));
            }
            let data = x
                .data()
                .chunks(n)
                .flat_map(|r| r[start..start + len].iter().copied())
                .collect();
            let mut shape = x.shape().to_vec();
            if let Some(last) = shape.last_mut() {
                *last = len;
            } else {
                shape.push(len);
            }
            Tensor::new(shape, data)?
        };
        Ok(self.unary(value, Op::NarrowLast { input: self.id, start }))
    }

    /// Selects blocks along the first axis; indices may repeat.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Var<'g>> {
        let value = {
            let x = self.graph.value(self.id);
            let Some(&n0) = x.shape().first() else {
                return Err(Error::Argument("gather_rows on rank-0 tensor".into()));
            };
            if let Some(&bad) = rows.iter().find(|&&r| r >= n0) {
                return Err(Error::Argument(format!("row {bad} out of range for {n0} rows")));
            }
            let block = if n0 == 0 { 0 } else { x.len() / n0 };
            let data = rows
                .iter()
                .flat_map(|&r| x.data()[r * block..(r + 1) * block].iter().copied())
                .collect();
            let mut shape = x.shape().to_vec();
            shape[0] = rows.len();
            Tensor::new(shape, data)?
        };
        Ok(self.unary(value, Op::GatherRows(self.id, rows.to_vec())))
    }

    pub fn sum(&self) -> Var<'g> {
        let value = Tensor::scalar(self.graph.value(self.id).sum());
        self.unary(value, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'g> {
        let value = {
            let x = self.graph.value(self.id);
            Tensor::scalar(x.sum() / x.len() as f64)
        };
        self.unary(value, Op::Mean(self.id))
    }
}

/// Concatenates along the last axis; all other axes must agree.
pub fn concat_last<'g>(parts: &[Var<'g>]) -> Result<Var<'g>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Argument("concat of zero parts".into()))?;
    let graph = first.graph;
    let value = {
        let vals: Vec<_> = parts.iter().map(|p| graph.value(p.id)).collect();
        let lead = &vals[0].shape()[..vals[0].rank().saturating_sub(1)];
        for v in &vals {
            if v.rank() == 0 || &v.shape()[..v.rank() - 1] != lead {
                return Err(Error::shape("concat_last", vals[0].shape(), v.shape()));
            }
        }
        let widths: Vec<usize> = vals.iter().map(|v| v.last_dim()).collect();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * widths.iter().sum::<usize>());
        for r in 0..rows {
            for (v, &w) in vals.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(widths.iter().sum());
        Tensor::new(shape, data)?
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(graph.record(value, Op::ConcatLast(ids.clone()), &ids))
}

/// Concatenates along the first axis; all other axes must agree.
pub fn concat_rows<'g>(parts: &[Var<'g>]) -> Result<Var<'g>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Argument("concat of zero parts".into()))?;
    let graph = first.graph;
    let value = {
        let vals: Vec<_> = parts.iter().map(|p| graph.value(p.id)).collect();
        let tail = &vals[0].shape()[1.min(vals[0].rank())..];
        let mut rows = 0;
        let mut data = Vec::new();
        for v in &vals {
            if v.rank() == 0 || &v.shape()[1..] != tail {
                return Err(Error::shape("concat_rows", vals[0].shape(), v.shape()));
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        Tensor::new(shape, data)?
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(graph.record(value, Op::ConcatRows(ids.clone()), &ids))
}
