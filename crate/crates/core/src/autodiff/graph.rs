//! Define-by-run tape with reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and records its parents, so the tape
//! order is a topological order. [`Graph::backward`] walks it once in reverse.
//! [`Graph::gradient_nodes`] instead appends the adjoint computation to the
//! tape as ordinary nodes, which makes `∇ₓ f` itself differentiable with
//! respect to network parameters (needed by gradient penalties).

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{matmul, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: u64,
    index: usize,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[allow(dead_code)]
enum Leaf {
    Input,
    Param,
    Constant,
}

#[derive(Clone, Debug)]
#[allow(dead_code)]
enum Op {
    Leaf(Leaf),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    /// `[n, k] + [1, k]` broadcast over rows.
    AddBias { x: usize, bias: usize },
    /// `[n, k] * [1, k]` broadcast over rows.
    MulRow { x: usize, row: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    Relu(usize),
    Tanh(usize),
    Square(usize),
    Sqrt(usize),
    Sum(usize),
    Mean(usize),
    /// `[n, k] -> [n, 1]`
    SumCols(usize),
    /// `[n, k] -> [1, k]`
    SumRows(usize),
    /// `[1, 1] -> shape`
    ExpandScalar(usize),
    /// `[n, 1] -> [n, k]`
    BroadcastCols(usize),
    /// `[1, k] -> [n, k]`
    BroadcastRows(usize),
    BatchNorm(Box<BatchNormRecord>),
}

#[derive(Clone, Debug)]
struct BatchNormRecord {
    x: usize,
    gamma: usize,
    beta: usize,
    /// normalized input, cached for the backward pass
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// statistics came from the batch itself (train mode)
    batch_stats: bool,
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Statistics used by a batch-norm node.
#[derive(Clone, Debug, PartialEq)]
pub enum NormStats {
    /// Normalize with the batch mean and biased variance.
    Batch,
    /// Normalize with fixed statistics (evaluation mode).
    Fixed { mean: Vec<f64>, var: Vec<f64> },
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        if id.graph != self.graph {
            return None;
        }
        self.grads.get(id.index).and_then(|g| g.as_ref())
    }
}

/// Computation tape.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, id: NodeId) -> Result<usize> {
        if id.graph != self.id || id.index >= self.nodes.len() {
            return Err(Error::State(format!(
                "node {} has no recorded forward value in this graph",
                id.index
            )));
        }
        Ok(id.index)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        assert_eq!(id.graph, self.id, "node belongs to another graph");
        &self.nodes[id.index].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn leaf(&mut self, value: Tensor, kind: Leaf) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "{kind:?} leaf #{} of shape {:?}",
                self.nodes.len(),
                value.shape()
            )));
        }
        let rg = kind != Leaf::Constant;
        Ok(self.push(Op::Leaf(kind), value, rg))
    }

    /// Differentiable input.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(value, Leaf::Input)
    }

    /// Trainable parameter.
    pub fn param(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(value, Leaf::Param)
    }

    /// Value with no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(value, Leaf::Constant)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn mismatch(&self, op: &'static str, detail: String) -> Error {
        Error::NodeShape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(self.mismatch(op, format!("operands {sa:?} and {sb:?}")));
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str, a: usize) -> Result<(usize, usize)> {
        let s = self.nodes[a].value.shape();
        if s.len() != 2 {
            return Err(self.mismatch(op, format!("expected a rank-2 operand, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    fn unary(&mut self, a: NodeId, op: fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(f);
        let rg = self.rg(a);
        Ok(self.push(op(a), v, rg))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        let v = matmul(&self.nodes[a].value, &self.nodes[b].value, ta, tb)
            .map_err(|e| self.mismatch("matmul", e.to_string()))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul { a, b, ta, tb }, v, rg))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, bias) = (self.check(x)?, self.check(bias)?);
        let (n, k) = self.matrix_dims("add_bias", x)?;
        let bv = &self.nodes[bias].value;
        if bv.len() != k {
            return Err(self.mismatch("add_bias", format!("bias {:?} for input [{n}, {k}]", bv.shape())));
        }
        let xv = &self.nodes[x].value;
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(k) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let v = Tensor::matrix(n, k, out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Op::AddBias { x, bias }, v, rg))
    }

    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (x, row) = (self.check(x)?, self.check(row)?);
        let (n, k) = self.matrix_dims("mul_row", x)?;
        let rv = &self.nodes[row].value;
        if rv.len() != k {
            return Err(self.mismatch("mul_row", format!("row {:?} for input [{n}, {k}]", rv.shape())));
        }
        let mut out = self.nodes[x].value.data().to_vec();
        for r in out.chunks_mut(k) {
            for (o, s) in r.iter_mut().zip(rv.data()) {
                *o *= s;
            }
        }
        let v = Tensor::matrix(n, k, out)?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(Op::MulRow { x, row }, v, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape("add", a, b)?;
        let v = self.nodes[a].value.zip_map(&self.nodes[b].value, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape("sub", a, b)?;
        let v = self.nodes[a].value.zip_map(&self.nodes[b].value, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), v, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        self.same_shape("mul", a, b)?;
        let v = self.nodes[a].value.zip_map(&self.nodes[b].value, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Neg, |v| -v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(|v| v * c);
        let rg = self.rg(a);
        Ok(self.push(Op::Scale(a, c), v, rg))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let a = self.check(a)?;
        let v = self.nodes[a].value.map(|v| v + c);
        let rg = self.rg(a);
        Ok(self.push(Op::AddScalar(a, c), v, rg))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Relu, |v| v.max(0.0))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Tanh, f64::tanh)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Square, |v| v * v)
    }

    /// Elementwise square root. The derivative at 0 is taken to be 0.
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sqrt, f64::sqrt)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let a = self.check(a)?;
        let v = Tensor::scalar(self.nodes[a].value.sum());
        let rg = self.rg(a);
        Ok(self.push(Op::Sum(a), v, rg))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let a = self.check(a)?;
        let t = &self.nodes[a].value;
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(a);
        Ok(self.push(Op::Mean(a), v, rg))
    }

    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId> {
        let a = self.check(a)?;
        let (n, k) = self.matrix_dims("sum_cols", a)?;
        let data = self.nodes[a]
            .value
            .data()
            .chunks(k)
            .map(|r| r.iter().sum())
            .collect();
        let v = Tensor::matrix(n, 1, data)?;
        let rg = self.rg(a);
        Ok(self.push(Op::SumCols(a), v, rg))
    }

    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let a = self.check(a)?;
        let (_, k) = self.matrix_dims("sum_rows", a)?;
        let v = Tensor::matrix(1, k, column_sums(&self.nodes[a].value))?;
        let rg = self.rg(a);
        Ok(self.push(Op::SumRows(a), v, rg))
    }

    fn expand_scalar(&mut self, a: usize, shape: &[usize]) -> Result<NodeId> {
        let s = self.nodes[a].value.item().ok_or_else(|| {
            self.mismatch("expand_scalar", format!("operand {:?}", self.nodes[a].value.shape()))
        })?;
        let v = Tensor::full(shape, s);
        let rg = self.rg(a);
        Ok(self.push(Op::ExpandScalar(a), v, rg))
    }

    fn broadcast_cols(&mut self, a: usize, k: usize) -> Result<NodeId> {
        let av = &self.nodes[a].value;
        let n = av.len();
        let data = av.data().iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect();
        let v = Tensor::matrix(n, k, data)?;
        let rg = self.rg(a);
        Ok(self.push(Op::BroadcastCols(a), v, rg))
    }

    fn broadcast_rows(&mut self, a: usize, n: usize) -> Result<NodeId> {
        let av = &self.nodes[a].value;
        let k = av.len();
        let mut data = Vec::with_capacity(n * k);
        for _ in 0..n {
            data.extend_from_slice(av.data());
        }
        let v = Tensor::matrix(n, k, data)?;
        let rg = self.rg(a);
        Ok(self.push(Op::BroadcastRows(a), v, rg))
    }

    /// Batch normalization `γ ⊙ (x − m)/√(v + eps) + β` over the rows of `x`.
    ///
    /// Returns the node and the batch mean/biased variance actually used.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: &NormStats,
        eps: f64,
    ) -> Result<(NodeId, Vec<f64>, Vec<f64>)> {
        let (x, gamma, beta) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let (n, k) = self.matrix_dims("batch_norm", x)?;
        if self.nodes[gamma].value.len() != k || self.nodes[beta].value.len() != k {
            return Err(self.mismatch("batch_norm", format!("affine parameters do not have {k} entries")));
        }
        let xv = self.nodes[x].value.data();
        let mut mean = column_sums(&self.nodes[x].value);
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; k];
        for row in xv.chunks(k) {
            for j in 0..k {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let (use_mean, use_var, batch_stats) = match stats {
            NormStats::Batch => (mean.clone(), var.clone(), true),
            NormStats::Fixed { mean: m, var: v } => {
                if m.len() != k || v.len() != k {
                    return Err(self.mismatch("batch_norm", "running statistics width".into()));
                }
                (m.clone(), v.clone(), false)
            }
        };
        let inv_std: Vec<f64> = use_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.nodes[gamma].value.data();
        let b = self.nodes[beta].value.data();
        let mut xhat = Vec::with_capacity(n * k);
        let mut out = Vec::with_capacity(n * k);
        for row in xv.chunks(k) {
            for j in 0..k {
                let h = (row[j] - use_mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let v = Tensor::matrix(n, k, out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let rec = BatchNormRecord {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        };
        let id = self.push(Op::BatchNorm(Box::new(rec)), v, rg);
        Ok((id, mean, var))
    }

    /// Reverse pass from `output` seeded with `adjoint`.
    pub fn backward(&self, output: NodeId, adjoint: &Tensor) -> Result<Gradients> {
        let out = self.check(output)?;
        if adjoint.shape() != self.nodes[out].value.shape() {
            return Err(Error::NodeShape {
                node: out,
                op: "backward",
                detail: format!(
                    "adjoint {:?} for output {:?}",
                    adjoint.shape(),
                    self.nodes[out].value.shape()
                ),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out + 1];
        grads[out] = Some(adjoint.clone());
        for i in (0..=out).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }

    /// Backward pass from a single-element output with unit seed.
    pub fn backward_scalar(&self, output: NodeId) -> Result<Gradients> {
        let out = self.check(output)?;
        let shape = self.nodes[out].value.shape().to_vec();
        if self.nodes[out].value.len() != 1 {
            return Err(Error::Contract(format!("backward_scalar on output of shape {shape:?}")));
        }
        self.backward(output, &Tensor::full(&shape, 1.0))
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let acc = |p: usize, t: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[p].requires_grad {
                return;
            }
            match &mut grads[p] {
                Some(e) => e.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let val = |p: usize| &self.nodes[p].value;
        match &self.nodes[i].op {
            Op::Leaf(_) => {}
            &Op::MatMul { a, b, ta, tb } => {
                if self.rg(a) {
                    let ga = if ta {
                        matmul(val(b), g, tb, true)?
                    } else {
                        matmul(g, val(b), false, !tb)?
                    };
                    acc(a, ga, grads);
                }
                if self.rg(b) {
                    let gb = if tb {
                        matmul(g, val(a), true, ta)?
                    } else {
                        matmul(val(a), g, !ta, false)?
                    };
                    acc(b, gb, grads);
                }
            }
            &Op::AddBias { x, bias } => {
                acc(x, g.clone(), grads);
                if self.rg(bias) {
                    let s = column_sums(g);
                    acc(bias, Tensor::new(val(bias).shape().to_vec(), s)?, grads);
                }
            }
            &Op::MulRow { x, row } => {
                let k = g.cols();
                let r = val(row).data();
                if self.rg(x) {
                    let mut gx = g.data().to_vec();
                    for rr in gx.chunks_mut(k) {
                        for (o, s) in rr.iter_mut().zip(r) {
                            *o *= s;
                        }
                    }
                    acc(x, Tensor::new(g.shape().to_vec(), gx)?, grads);
                }
                if self.rg(row) {
                    let prod = g.zip_map(val(x), |a, b| a * b);
                    acc(row, Tensor::new(val(row).shape().to_vec(), column_sums(&prod))?, grads);
                }
            }
            &Op::Add(a, b) => {
                acc(a, g.clone(), grads);
                acc(b, g.clone(), grads);
            }
            &Op::Sub(a, b) => {
                acc(a, g.clone(), grads);
                acc(b, g.map(|v| -v), grads);
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    acc(a, g.zip_map(val(b), |x, y| x * y), grads);
                }
                if self.rg(b) {
                    acc(b, g.zip_map(val(a), |x, y| x * y), grads);
                }
            }
            &Op::Neg(a) => acc(a, g.map(|v| -v), grads),
            &Op::Scale(a, c) => acc(a, g.map(|v| v * c), grads),
            &Op::AddScalar(a, _) => acc(a, g.clone(), grads),
            &Op::Relu(a) => acc(a, g.zip_map(val(a), |gv, x| if x > 0.0 { gv } else { 0.0 }), grads),
            &Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                acc(a, g.zip_map(y, |gv, y| gv * (1.0 - y * y)), grads)
            }
            &Op::Square(a) => acc(a, g.zip_map(val(a), |gv, x| 2.0 * x * gv), grads),
            &Op::Sqrt(a) => {
                let y = &self.nodes[i].value;
                acc(a, g.zip_map(y, |gv, y| if y > 0.0 { 0.5 * gv / y } else { 0.0 }), grads)
            }
            &Op::Sum(a) => acc(a, Tensor::full(val(a).shape(), g.data()[0]), grads),
            &Op::Mean(a) => {
                let n = val(a).len() as f64;
                acc(a, Tensor::full(val(a).shape(), g.data()[0] / n), grads)
            }
            &Op::SumCols(a) => {
                let k = val(a).cols();
                let data = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect();
                acc(a, Tensor::new(val(a).shape().to_vec(), data)?, grads)
            }
            &Op::SumRows(a) => {
                let n = val(a).rows();
                let mut data = Vec::with_capacity(val(a).len());
                for _ in 0..n {
                    data.extend_from_slice(g.data());
                }
                acc(a, Tensor::new(val(a).shape().to_vec(), data)?, grads)
            }
            &Op::ExpandScalar(a) => acc(a, Tensor::full(val(a).shape(), g.sum()), grads),
            &Op::BroadcastCols(a) => {
                let k = g.cols();
                let data = g.data().chunks(k).map(|r| r.iter().sum()).collect();
                acc(a, Tensor::new(val(a).shape().to_vec(), data)?, grads)
            }
            &Op::BroadcastRows(a) => {
                acc(a, Tensor::new(val(a).shape().to_vec(), column_sums(g))?, grads)
            }
            Op::BatchNorm(rec) => {
                let (n, k) = (g.rows(), g.cols());
                let gamma = val(rec.gamma).data();
                let gd = g.data();
                let mut dgamma = vec![0.0; k];
                let mut dbeta = vec![0.0; k];
                for r in 0..n {
                    for j in 0..k {
                        dgamma[j] += gd[r * k + j] * rec.xhat[r * k + j];
                        dbeta[j] += gd[r * k + j];
                    }
                }
                if self.rg(rec.x) {
                    let mut dx = vec![0.0; n * k];
                    let nf = n as f64;
                    for r in 0..n {
                        for j in 0..k {
                            let gh = gd[r * k + j] * gamma[j];
                            dx[r * k + j] = if rec.batch_stats {
                                // d xhat -> d x through the batch mean and variance
                                rec.inv_std[j] / nf
                                    * (nf * gh - gamma[j] * dbeta[j] - rec.xhat[r * k + j] * gamma[j] * dgamma[j])
                            } else {
                                gh * rec.inv_std[j]
                            };
                        }
                    }
                    acc(rec.x, Tensor::new(g.shape().to_vec(), dx)?, grads);
                }
                acc(rec.gamma, Tensor::new(val(rec.gamma).shape().to_vec(), dgamma)?, grads);
                acc(rec.beta, Tensor::new(val(rec.beta).shape().to_vec(), dbeta)?, grads);
            }
        }
        Ok(())
    }

    /// Appends nodes computing `∂ output / ∂ wrt` for a single-element
    /// `output`, returning one gradient node per entry of `wrt`.
    ///
    /// The returned nodes are part of the tape, so a later
    /// [`backward`](Self::backward) differentiates through them. Batch norm
    /// on the path is rejected: it couples samples, and per-sample input
    /// gradients are only meaningful without it.
    pub fn gradient_nodes(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        let out = self.check(output)?;
        if self.nodes[out].value.len() != 1 {
            return Err(Error::Contract(format!(
                "gradient of a non-scalar output of shape {:?}",
                self.nodes[out].value.shape()
            )));
        }
        let wrt_idx: Vec<usize> = wrt.iter().map(|&w| self.check(w)).collect::<Result<_>>()?;
        let mut depends = vec![false; out + 1];
        for &w in &wrt_idx {
            if w <= out {
                depends[w] = true;
            }
        }
        for i in 0..=out {
            if !depends[i] {
                depends[i] = self.parents(i).iter().any(|&p| depends[p]);
            }
        }
        let mut adj: Vec<Option<usize>> = vec![None; out + 1];
        let seed = self.constant(Tensor::full(self.nodes[out].value.shape(), 1.0))?;
        adj[out] = Some(seed.index);
        for i in (0..=out).rev() {
            if !depends[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            if wrt_idx.contains(&i) && self.parents(i).is_empty() {
                continue;
            }
            for (p, contrib) in self.vjp_nodes(i, g, &depends)? {
                let c = contrib.index;
                adj[p] = Some(match adj[p] {
                    None => c,
                    Some(prev) => {
                        let (a, b) = (self.node_id(prev), self.node_id(c));
                        self.add(a, b)?.index
                    }
                });
            }
        }
        wrt_idx
            .iter()
            .map(|&w| match adj.get(w).copied().flatten() {
                Some(g) => Ok(self.node_id(g)),
                None => self.constant(Tensor::zeros(self.nodes[w].value.shape())),
            })
            .collect()
    }

    /// Repeats a `[n, 1]` column `k` times: `[n, 1] -> [n, k]`.
    pub fn broadcast_to_cols(&mut self, a: NodeId, k: usize) -> Result<NodeId> {
        let a = self.check(a)?;
        let (_, c) = self.matrix_dims("broadcast_cols", a)?;
        if c != 1 {
            return Err(self.mismatch("broadcast_cols", format!("expected one column, got {c}")));
        }
        self.broadcast_cols(a, k)
    }

    /// Repeats a `[1, k]` row `n` times: `[1, k] -> [n, k]`.
    pub fn broadcast_to_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        let a = self.check(a)?;
        let (r, _) = self.matrix_dims("broadcast_rows", a)?;
        if r != 1 {
            return Err(self.mismatch("broadcast_rows", format!("expected one row, got {r}")));
        }
        self.broadcast_rows(a, n)
    }

    fn node_id(&self, index: usize) -> NodeId {
        NodeId {
            graph: self.id,
            index,
        }
    }

    fn parents(&self, i: usize) -> Vec<usize> {
        match &self.nodes[i].op {
            Op::Leaf(_) => vec![],
            &Op::MatMul { a, b, .. } => vec![a, b],
            &Op::AddBias { x, bias } => vec![x, bias],
            &Op::MulRow { x, row } => vec![x, row],
            &Op::Add(a, b) | &Op::Sub(a, b) | &Op::Mul(a, b) => vec![a, b],
            &Op::Neg(a)
            | &Op::Scale(a, _)
            | &Op::AddScalar(a, _)
            | &Op::Relu(a)
            | &Op::Tanh(a)
            | &Op::Square(a)
            | &Op::Sqrt(a)
            | &Op::Sum(a)
            | &Op::Mean(a)
            | &Op::SumCols(a)
            | &Op::SumRows(a)
            | &Op::ExpandScalar(a)
            | &Op::BroadcastCols(a)
            | &Op::BroadcastRows(a) => vec![a],
            Op::BatchNorm(rec) => vec![rec.x, rec.gamma, rec.beta],
        }
    }

    /// Vector-Jacobian products of node `i` against adjoint node `g`,
    /// expressed as new graph nodes.
    fn vjp_nodes(&mut self, i: usize, g: usize, depends: &[bool]) -> Result<Vec<(usize, NodeId)>> {
        let gid = self.node_id(g);
        let mut out = Vec::new();
        let op = self.nodes[i].op.clone();
        let d = |p: usize| depends[p];
        match op {
            Op::Leaf(_) => {}
            Op::MatMul { a, b, ta, tb } => {
                let (na, nb) = (self.node_id(a), self.node_id(b));
                if d(a) {
                    let ga = if ta {
                        self.matmul_t(nb, gid, tb, true)?
                    } else {
                        self.matmul_t(gid, nb, false, !tb)?
                    };
                    out.push((a, ga));
                }
                if d(b) {
                    let gb = if tb {
                        self.matmul_t(gid, na, true, ta)?
                    } else {
                        self.matmul_t(na, gid, !ta, false)?
                    };
                    out.push((b, gb));
                }
            }
            Op::AddBias { x, bias } => {
                if d(x) {
                    out.push((x, gid));
                }
                if d(bias) {
                    out.push((bias, self.sum_rows(gid)?));
                }
            }
            Op::MulRow { x, row } => {
                if d(x) {
                    let r = self.node_id(row);
                    out.push((x, self.mul_row(gid, r)?));
                }
                if d(row) {
                    let xn = self.node_id(x);
                    let p = self.mul(gid, xn)?;
                    out.push((row, self.sum_rows(p)?));
                }
            }
            Op::Add(a, b) => {
                if d(a) {
                    out.push((a, gid));
                }
                if d(b) {
                    out.push((b, gid));
                }
            }
            Op::Sub(a, b) => {
                if d(a) {
                    out.push((a, gid));
                }
                if d(b) {
                    out.push((b, self.neg(gid)?));
                }
            }
            Op::Mul(a, b) => {
                if d(a) {
                    let nb = self.node_id(b);
                    out.push((a, self.mul(gid, nb)?));
                }
                if d(b) {
                    let na = self.node_id(a);
                    out.push((b, self.mul(gid, na)?));
                }
            }
            Op::Neg(a) => out.push((a, self.neg(gid)?)),
            Op::Scale(a, c) => out.push((a, self.scale(gid, c)?)),
            Op::AddScalar(a, _) => out.push((a, gid)),
            Op::Relu(a) => {
                // the mask is piecewise constant, so it enters as a constant
                let mask = self.nodes[a].value.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                let m = self.constant(mask)?;
                out.push((a, self.mul(gid, m)?));
            }
            Op::Tanh(a) => {
                let y = self.node_id(i);
                let y2 = self.square(y)?;
                let ny2 = self.neg(y2)?;
                let dy = self.add_scalar(ny2, 1.0)?;
                out.push((a, self.mul(gid, dy)?));
            }
            Op::Square(a) => {
                let na = self.node_id(a);
                let two_a = self.scale(na, 2.0)?;
                out.push((a, self.mul(gid, two_a)?));
            }
            Op::Sum(a) => {
                let shape = self.nodes[a].value.shape().to_vec();
                out.push((a, self.expand_scalar(g, &shape)?));
            }
            Op::Mean(a) => {
                let shape = self.nodes[a].value.shape().to_vec();
                let n = self.nodes[a].value.len() as f64;
                let e = self.expand_scalar(g, &shape)?;
                out.push((a, self.scale(e, 1.0 / n)?));
            }
            Op::SumCols(a) => {
                let k = self.nodes[a].value.cols();
                out.push((a, self.broadcast_cols(g, k)?));
            }
            Op::SumRows(a) => {
                let n = self.nodes[a].value.rows();
                out.push((a, self.broadcast_rows(g, n)?));
            }
            Op::ExpandScalar(a) => out.push((a, self.sum(gid)?)),
            Op::BroadcastCols(a) => out.push((a, self.sum_cols(gid)?)),
            Op::BroadcastRows(a) => out.push((a, self.sum_rows(gid)?)),
            Op::Sqrt(_) | Op::BatchNorm(_) => {
                return Err(Error::Contract(format!(
                    "differentiable gradient through node {i} ({}) is not supported",
                    if matches!(op, Op::Sqrt(_)) { "sqrt" } else { "batch_norm" }
                )))
            }
        }
        Ok(out)
    }
}

fn column_sums(t: &Tensor) -> Vec<f64> {
    let k = t.cols();
    let mut s = vec![0.0; k];
    for row in t.data().chunks(k) {
        for (a, v) in s.iter_mut().zip(row) {
            *a += v;
        }
    }
    s
}
