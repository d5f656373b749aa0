use std::collections::HashMap;

use super::ops::{self, Broadcast};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    Reshape(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    Softmax(Var, usize),
    RmsNorm(Var, Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Embedding(Var, Vec<usize>),
    Mean(Var, usize),
    Sum(Var),
    /// Saved row softmax and targets.
    CrossEntropy(Var, Tensor, Vec<Option<usize>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic reverse-mode tape, rebuilt for every forward pass.
///
/// Nodes are appended in evaluation order, so the node index is already a
/// topological order; `backward` walks it in reverse exactly once. Named
/// parameters are interned so that a weight used twice maps to one leaf and
/// its gradient accumulates.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: HashMap<String, Var>,
    param_order: Vec<String>,
    no_grad: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph on which no leaf requires a gradient, whatever the caller
    /// asks for. Used for inference.
    pub fn no_grad() -> Self {
        Self {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad && !self.no_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Interns a named parameter. Repeated calls with the same name return
    /// the same leaf; the tensor is only copied on first use.
    pub fn param(&mut self, name: &str, value: &Tensor, trainable: bool) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(value.clone(), trainable);
        self.params.insert(name.to_string(), v);
        self.param_order.push(name.to_string());
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    /// Names of interned parameters that require gradients, in first-use order.
    pub fn trainable_params(&self) -> impl Iterator<Item = (&str, Var)> + '_ {
        self.param_order.iter().filter_map(move |n| {
            let v = self.params[n];
            self.rg(v).then_some((n.as_str(), v))
        })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul_nt(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulNt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = ops::broadcast_kind("add", self.value(a), self.value(b))?;
        let out = ops::add(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b, kind), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = ops::broadcast_kind("mul", self.value(a), self.value(b))?;
        let out = ops::mul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b, kind), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = ops::scale(self.value(a), c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = ops::slice_cols(self.value(a), start, end)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start, end), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_cols(&vals)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = ops::softmax(self.value(a), axis)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a, axis), rg))
    }

    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let out = ops::rms_norm(self.value(x), self.value(gain), eps)?;
        let rg = self.rg(x) || self.rg(gain);
        Ok(self.push(out, Op::RmsNorm(x, gain, eps), rg))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = ops::gelu(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = ops::sigmoid(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let out = ops::embedding_lookup(self.value(table), ids)?;
        let rg = self.rg(table);
        Ok(self.push(out, Op::Embedding(table, ids.to_vec()), rg))
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = ops::mean(self.value(a), axis)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Mean(a, axis), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = ops::sum(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (loss, probs) = ops::cross_entropy(self.value(logits), targets)?;
        let rg = self.rg(logits);
        Ok(self.push(loss, Op::CrossEntropy(logits, probs, targets.to_vec()), rg))
    }

    /// Populates gradients of the scalar `loss` for every node that requires
    /// them. Gradients from repeated uses of a node add up. Leaves that need
    /// a gradient but do not influence the loss receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros_like(&node.value));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, d: Tensor| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, ops::matmul_nt(g, val(*b))?);
                }
                if self.rg(*b) {
                    acc(*b, ops::matmul_tn(val(*a), g)?);
                }
            }
            Op::MatMulNt(a, b) => {
                if self.rg(*a) {
                    acc(*a, ops::matmul(g, val(*b))?);
                }
                if self.rg(*b) {
                    acc(*b, ops::matmul_tn(g, val(*a))?);
                }
            }
            Op::Add(a, b, kind) => {
                acc(*a, g.clone());
                if self.rg(*b) {
                    acc(*b, reduce_broadcast(g.clone(), val(*b), *kind));
                }
            }
            Op::Mul(a, b, kind) => {
                if self.rg(*a) {
                    acc(*a, ops::mul(g, val(*b))?);
                }
                if self.rg(*b) {
                    let prod = match kind {
                        Broadcast::Same => ops::mul(g, val(*a))?,
                        Broadcast::Rows => ops::mul(val(*a), g)?,
                    };
                    acc(*b, reduce_broadcast(prod, val(*b), *kind));
                }
            }
            Op::Scale(a, c) => acc(*a, ops::scale(g, *c)),
            Op::Reshape(a) => acc(*a, g.reshape(val(*a).shape())?),
            Op::SliceCols(a, start, end) => {
                let src = val(*a);
                let (m, n) = (src.rows(), src.cols());
                let w = end - start;
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    d[r * n + start..r * n + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                acc(*a, Tensor::from_parts(vec![m, n], d));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if self.rg(*p) {
                        acc(*p, ops::slice_cols(g, off, off + w)?);
                    }
                    off += w;
                }
            }
            Op::Softmax(a, axis) => {
                let y = &self.nodes[i].value;
                let (outer, len, inner) = ops::axis_split("softmax", y.shape(), *axis)?;
                let (yd, gd) = (y.data(), g.data());
                let mut d = vec![0.0; yd.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + j;
                        let dotp: f64 = (0..len).map(|k| gd[idx(k)] * yd[idx(k)]).sum();
                        for k in 0..len {
                            d[idx(k)] = yd[idx(k)] * (gd[idx(k)] - dotp);
                        }
                    }
                }
                acc(*a, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::RmsNorm(x, gain, eps) => {
                let (xd, gn) = (val(*x).data(), val(*gain).data());
                let d = gn.len();
                let mut dx = vec![0.0; xd.len()];
                let mut dgain = vec![0.0; d];
                for r in 0..xd.len() / d {
                    let xr = &xd[r * d..(r + 1) * d];
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let ms = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
                    let inv = 1.0 / (ms + eps).sqrt();
                    let mut s = 0.0;
                    for j in 0..d {
                        s += gr[j] * gn[j] * xr[j];
                        dgain[j] += gr[j] * xr[j] * inv;
                    }
                    let coef = s * inv * inv * inv / d as f64;
                    for j in 0..d {
                        dx[r * d + j] = gr[j] * gn[j] * inv - xr[j] * coef;
                    }
                }
                acc(*x, Tensor::from_parts(val(*x).shape().to_vec(), dx));
                if self.rg(*gain) {
                    acc(
                        *gain,
                        Tensor::from_parts(val(*gain).shape().to_vec(), dgain),
                    );
                }
            }
            Op::Gelu(a) => {
                let x = val(*a);
                let d = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| gv * ops::gelu_grad_scalar(xv))
                    .collect();
                acc(*a, Tensor::from_parts(x.shape().to_vec(), d));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let d = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&yv, &gv)| gv * yv * (1.0 - yv))
                    .collect();
                acc(*a, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Embedding(table, ids) => {
                let t = val(*table);
                let dm = t.cols();
                let mut d = vec![0.0; t.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..dm {
                        d[id * dm + j] += g.data()[r * dm + j];
                    }
                }
                acc(*table, Tensor::from_parts(t.shape().to_vec(), d));
            }
            Op::Mean(a, axis) => {
                let x = val(*a);
                let (outer, len, inner) = ops::axis_split("mean", x.shape(), *axis)?;
                let mut d = vec![0.0; x.numel()];
                let inv = 1.0 / len as f64;
                for o in 0..outer {
                    for k in 0..len {
                        for j in 0..inner {
                            d[(o * len + k) * inner + j] = g.data()[o * inner + j] * inv;
                        }
                    }
                }
                acc(*a, Tensor::from_parts(x.shape().to_vec(), d));
            }
            Op::Sum(a) => {
                let x = val(*a);
                acc(*a, Tensor::full(x.shape(), g.item()).reshaped_like(x));
            }
            Op::CrossEntropy(logits, probs, targets) => {
                let count = targets.iter().filter(|t| t.is_some()).count() as f64;
                let v = probs.cols();
                let scale = g.item() / count;
                let mut d = probs.data().to_vec();
                for (r, t) in targets.iter().enumerate() {
                    let row = &mut d[r * v..(r + 1) * v];
                    match t {
                        Some(t) => {
                            row[*t] -= 1.0;
                            row.iter_mut().for_each(|x| *x *= scale);
                        }
                        None => row.iter_mut().for_each(|x| *x = 0.0),
                    }
                }
                acc(*logits, Tensor::from_parts(probs.shape().to_vec(), d));
            }
        }
        Ok(())
    }
}

fn reduce_broadcast(g: Tensor, target: &Tensor, kind: Broadcast) -> Tensor {
    match kind {
        Broadcast::Same => g,
        Broadcast::Rows => {
            let d = target.numel();
            let mut out = vec![0.0; d];
            for row in g.data().chunks(d) {
                for (o, &x) in out.iter_mut().zip(row) {
                    *o += x;
                }
            }
            Tensor::from_parts(target.shape().to_vec(), out)
        }
    }
}

impl Tensor {
    pub fn zeros_like(other: &Tensor) -> Tensor {
        Tensor::from_parts(other.shape().to_vec(), vec![0.0; other.numel()])
    }

    fn reshaped_like(self, other: &Tensor) -> Tensor {
        Tensor::from_parts(other.shape().to_vec(), self.into_data())
    }
}
