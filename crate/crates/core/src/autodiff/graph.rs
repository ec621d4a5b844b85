//! Eagerly recorded computation graph with reverse-mode differentiation.
//!
//! Every primitive evaluates immediately and appends a node, so node indices
//! are already a topological order. Two reverse passes are provided:
//!
//! * [`Graph::backward`] propagates numeric gradients and accumulates them
//!   into the `grad` slot of every leaf that requires one.
//! * [`Graph::differentiate`] records the gradient computation itself as new
//!   graph nodes, so the result can be differentiated again. This is what the
//!   gradient penalty needs. Batch normalization opts out and reports
//!   [`Error::UnsupportedOp`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::rc::Rc;

use super::kernels::{self, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Abs(Var),
    ClampMin(Var, f64),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Sigmoid(Var),
    Softplus(Var),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    Broadcast(Var),
    /// `out[i, j] = x[i, idx[i*q + j]]`; `idx` holds column indices into `x`.
    Gather {
        x: Var,
        idx: Rc<[usize]>,
        width: usize,
    },
    /// Adjoint of `Gather`: scatters `[r×q]` back into `[r×width]`.
    Scatter {
        x: Var,
        idx: Rc<[usize]>,
        width: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Rc<[f64]>,
        inv_std: Rc<[f64]>,
    },
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => vec![*a, *b],
            Transpose(a) | Neg(a) | Scale(a, _) | Offset(a) | Relu(a) | Abs(a)
            | ClampMin(a, _) | Exp(a) | Log(a) | Sqrt(a) | Square(a) | Sigmoid(a)
            | Softplus(a) | SumAll(a) | SumRows(a) | SumCols(a) | Broadcast(a) => vec![*a],
            Gather { x, .. } | Scatter { x, .. } => vec![*x],
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Train/eval switch for mode-dependent layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Statistics of one train-mode batch normalization call.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (divide-by-`b`) batch variance.
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Parents of `v` in recording order; leaves have none.
    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.parents()
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    /// Every node from which `target` is reachable, including `target`.
    pub fn ancestors(&self, target: Var) -> Vec<bool> {
        let mut mark = vec![false; target.0 + 1];
        mark[target.0] = true;
        for i in (0..=target.0).rev() {
            if mark[i] {
                for p in self.nodes[i].op.parents() {
                    mark[p.0] = true;
                }
            }
        }
        mark
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op
            .parents()
            .iter()
            .any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        value.dims2()?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true).expect("parameter must be a matrix")
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false).expect("constant must be a matrix")
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Constant copy of `v`'s current value, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    // ---- structural ops -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, q) = self.dims(a);
        let (q2, r) = self.dims(b);
        if q != q2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(
            MatRef::new(self.value(a).data(), p, q),
            MatRef::new(self.value(b).data(), q2, r),
        );
        Ok(self.push(Tensor::from_parts(p, r, out), Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = kernels::transpose(self.value(a).data(), r, c);
        self.push(Tensor::from_parts(c, r, out), Op::Transpose(a))
    }

    /// Expands a `1×1`, `1×c` or `r×1` tensor to `rows×cols`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if (r, c) == (rows, cols) {
            return Ok(a);
        }
        let ok = (r == 1 || r == rows) && (c == 1 || c == cols);
        if !ok {
            return Err(Error::shape("broadcast", self.shape(a), &[rows, cols]));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let si = if r == 1 { 0 } else { i };
                let sj = if c == 1 { 0 } else { j };
                out.push(src[si * c + sj]);
            }
        }
        Ok(self.push(Tensor::from_parts(rows, cols, out), Op::Broadcast(a)))
    }

    fn align(&mut self, op: &'static str, a: Var, b: Var) -> Result<(Var, Var)> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if (ra, ca) == (rb, cb) {
            return Ok((a, b));
        }
        let rows = ra.max(rb);
        let cols = ca.max(cb);
        let fits = |r: usize, c: usize| (r == 1 || r == rows) && (c == 1 || c == cols);
        if !fits(ra, ca) || !fits(rb, cb) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        let a = self.broadcast(a, rows, cols)?;
        let b = self.broadcast(b, rows, cols)?;
        Ok((a, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (r, c) = self.dims(a);
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_parts(r, c, out)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        self.value(a).map(f)
    }

    // ---- elementwise arithmetic (with broadcasting) ---------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align("add", a, b)?;
        let v = self.zip(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align("sub", a, b)?;
        let v = self.zip(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align("mul", a, b)?;
        let v = self.zip(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.align("div", a, b)?;
        let v = self.zip(a, b, |x, y| x / y);
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.unary(a, |x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.unary(a, |x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.unary(a, |x| x + c);
        self.push(v, Op::Offset(a))
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.unary(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a))
    }

    /// `|x|`; the subgradient at 0 is 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.unary(a, f64::abs);
        self.push(v, Op::Abs(a))
    }

    /// `max(x, lo)`; gradient passes only where `x > lo`.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let v = self.unary(a, |x| if x > lo { x } else { lo });
        self.push(v, Op::ClampMin(a, lo))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.unary(a, f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.unary(a, f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.unary(a, f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.unary(a, |x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.unary(a, sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// `ln(1 + eˣ)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.unary(a, softplus);
        self.push(v, Op::Softplus(a))
    }

    // ---- reductions ------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sum: `[r×c] → [r×1]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let src = self.value(a).data();
        let out = (0..r).map(|i| src[i * c..(i + 1) * c].iter().sum()).collect();
        self.push(Tensor::from_parts(r, 1, out), Op::SumRows(a))
    }

    /// Per-column sum: `[r×c] → [1×c]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let src = self.value(a).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, s) in out.iter_mut().zip(&src[i * c..(i + 1) * c]) {
                *o += s;
            }
        }
        self.push(Tensor::from_parts(1, c, out), Op::SumCols(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let c = self.dims(a).1;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / c as f64)
    }

    // ---- network primitives ---------------------------------------------

    /// `x·w + b` with `b` a `1×q` row broadcast over the batch.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add(h, b)
    }

    /// Elementwise max over `pieces` blocks of `x`'s columns.
    ///
    /// `x` is `[b × pieces·q]` with piece `p` occupying columns
    /// `p·q .. (p+1)·q`. Gradient flows to the winning piece only; ties go to
    /// the lowest piece index.
    pub fn maxout(&mut self, x: Var, pieces: usize) -> Result<Var> {
        if pieces < 2 {
            return Err(Error::Config(format!(
                "maxout needs at least 2 pieces, got {pieces}"
            )));
        }
        let (b, width) = self.dims(x);
        if width % pieces != 0 {
            return Err(Error::shape("maxout", self.shape(x), &[pieces]));
        }
        let q = width / pieces;
        let src = self.value(x).data();
        let mut idx = Vec::with_capacity(b * q);
        let mut out = Vec::with_capacity(b * q);
        for i in 0..b {
            let row = &src[i * width..(i + 1) * width];
            for j in 0..q {
                let mut best = j;
                for p in 1..pieces {
                    if row[p * q + j] > row[best] {
                        best = p * q + j;
                    }
                }
                idx.push(best);
                out.push(row[best]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(b, q, out),
            Op::Gather {
                x,
                idx: idx.into(),
                width,
            },
        ))
    }

    fn gather_with(&mut self, x: Var, idx: Rc<[usize]>, width: usize) -> Var {
        let (b, w) = self.dims(x);
        debug_assert_eq!(w, width);
        let q = idx.len() / b;
        let src = self.value(x).data();
        let out = (0..b)
            .flat_map(|i| (0..q).map(move |j| (i, j)))
            .map(|(i, j)| src[i * width + idx[i * q + j]])
            .collect();
        self.push(Tensor::from_parts(b, q, out), Op::Gather { x, idx, width })
    }

    fn scatter_with(&mut self, x: Var, idx: Rc<[usize]>, width: usize) -> Var {
        let (b, q) = self.dims(x);
        let src = self.value(x).data();
        let mut out = vec![0.0; b * width];
        for i in 0..b {
            for j in 0..q {
                out[i * width + idx[i * q + j]] += src[i * q + j];
            }
        }
        self.push(Tensor::from_parts(b, width, out), Op::Scatter { x, idx, width })
    }

    /// Train-mode batch normalization over rows of `x` (`[b×p]`), followed
    /// by the affine map `γ·x̂ + β`. Returns the batch statistics so the
    /// caller can maintain running averages.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let (b, p) = self.dims(x);
        if b < 2 {
            return Err(Error::BatchSize {
                op: "batch_norm",
                min: 2,
                got: b,
            });
        }
        for v in [gamma, beta] {
            if self.dims(v) != (1, p) {
                return Err(Error::shape("batch_norm", self.shape(x), self.shape(v)));
            }
        }
        let src = self.value(x).data();
        let mut mean = vec![0.0; p];
        for i in 0..b {
            for (m, v) in mean.iter_mut().zip(&src[i * p..(i + 1) * p]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut var = vec![0.0; p];
        for i in 0..b {
            for j in 0..p {
                let d = src[i * p + j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= b as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; b * p];
        for i in 0..b {
            for j in 0..p {
                xhat[i * p + j] = (src[i * p + j] - mean[j]) * inv_std[j];
            }
        }
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let out = (0..b * p).map(|k| g[k % p] * xhat[k] + be[k % p]).collect();
        let v = self.push(
            Tensor::from_parts(b, p, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: xhat.into(),
                inv_std: inv_std.into(),
            },
        );
        Ok((v, BatchStats { mean, var }))
    }

    // ---- kink bookkeeping -----------------------------------------------

    /// Hash of every branch decision taken by piecewise primitives (ReLU
    /// masks, maxout winners, abs signs, clamp masks). Two evaluations with
    /// equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for n in &self.nodes {
            match &n.op {
                Op::Relu(a) => self.value(*a).data().iter().for_each(|&x| (x > 0.0).hash(&mut h)),
                Op::Abs(a) => self.value(*a).data().iter().for_each(|&x| (x > 0.0, x < 0.0).hash(&mut h)),
                Op::ClampMin(a, lo) => {
                    self.value(*a).data().iter().for_each(|&x| (x > *lo).hash(&mut h))
                }
                Op::Gather { idx, .. } => idx.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    // ---- numeric reverse pass --------------------------------------------

    /// Reverse-mode pass from a scalar `seed`. Gradients accumulate (sum)
    /// into every reachable leaf with `requires_grad`; calling twice without
    /// [`Graph::zero_grad`] doubles them.
    pub fn backward(&mut self, seed: Var) -> Result<()> {
        if self.value(seed).len() != 1 {
            return Err(Error::Contract(format!(
                "backward seed must be a scalar, got shape {:?}",
                self.shape(seed)
            )));
        }
        if !self.nodes[seed.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; seed.0 + 1];
        grads[seed.0] = Some(Tensor::full(1, 1, 1.0).reshape_like(self.value(seed)));
        for i in (0..=seed.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.vjp(i, &g, &mut grads);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contribution: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn vjp(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let (r, c) = (out.rows(), out.cols());
        let gd = g.data();
        let elementwise =
            |f: &dyn Fn(usize) -> f64| Tensor::from_parts(r, c, (0..gd.len()).map(f).collect());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (p, q) = self.dims(*a);
                let (_, rr) = self.dims(*b);
                if self.needs(*a) {
                    let da = kernels::matmul(
                        MatRef::new(gd, p, rr),
                        MatRef::new(self.value(*b).data(), q, rr).t(),
                    );
                    self.accumulate(grads, *a, Tensor::from_parts(p, q, da));
                }
                if self.needs(*b) {
                    let db = kernels::matmul(
                        MatRef::new(self.value(*a).data(), p, q).t(),
                        MatRef::new(gd, p, rr),
                    );
                    self.accumulate(grads, *b, Tensor::from_parts(q, rr, db));
                }
            }
            Op::Transpose(a) => {
                let t = kernels::transpose(gd, r, c);
                self.accumulate(grads, *a, Tensor::from_parts(c, r, t));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    self.accumulate(grads, *a, elementwise(&|k| gd[k] * bv[k]));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, elementwise(&|k| gd[k] * av[k]));
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b).data();
                let ov = out.data();
                if self.needs(*a) {
                    self.accumulate(grads, *a, elementwise(&|k| gd[k] / bv[k]));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, elementwise(&|k| -gd[k] * ov[k] / bv[k]));
                }
            }
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|x| -x)),
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| s * x)),
            Op::Offset(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let xv = self.value(*a).data();
                let t = elementwise(&|k| if xv[k] > 0.0 { gd[k] } else { 0.0 });
                self.accumulate(grads, *a, t);
            }
            Op::Abs(a) => {
                let xv = self.value(*a).data();
                let t = elementwise(&|k| gd[k] * sign(xv[k]));
                self.accumulate(grads, *a, t);
            }
            Op::ClampMin(a, lo) => {
                let xv = self.value(*a).data();
                let t = elementwise(&|k| if xv[k] > *lo { gd[k] } else { 0.0 });
                self.accumulate(grads, *a, t);
            }
            Op::Exp(a) => {
                let ov = out.data();
                self.accumulate(grads, *a, elementwise(&|k| gd[k] * ov[k]));
            }
            Op::Log(a) => {
                let xv = self.value(*a).data();
                self.accumulate(grads, *a, elementwise(&|k| gd[k] / xv[k]));
            }
            Op::Sqrt(a) => {
                let ov = out.data();
                self.accumulate(grads, *a, elementwise(&|k| gd[k] / (2.0 * ov[k])));
            }
            Op::Square(a) => {
                let xv = self.value(*a).data();
                self.accumulate(grads, *a, elementwise(&|k| 2.0 * gd[k] * xv[k]));
            }
            Op::Sigmoid(a) => {
                let ov = out.data();
                let t = elementwise(&|k| gd[k] * ov[k] * (1.0 - ov[k]));
                self.accumulate(grads, *a, t);
            }
            Op::Softplus(a) => {
                let xv = self.value(*a).data();
                let t = elementwise(&|k| gd[k] * sigmoid(xv[k]));
                self.accumulate(grads, *a, t);
            }
            Op::SumAll(a) => {
                let (ra, ca) = self.dims(*a);
                self.accumulate(grads, *a, Tensor::full(ra, ca, gd[0]));
            }
            Op::SumRows(a) => {
                let (ra, ca) = self.dims(*a);
                let t = (0..ra * ca).map(|k| gd[k / ca]).collect();
                self.accumulate(grads, *a, Tensor::from_parts(ra, ca, t));
            }
            Op::SumCols(a) => {
                let (ra, ca) = self.dims(*a);
                let t = (0..ra * ca).map(|k| gd[k % ca]).collect();
                self.accumulate(grads, *a, Tensor::from_parts(ra, ca, t));
            }
            Op::Broadcast(a) => {
                let (ra, ca) = self.dims(*a);
                let mut t = vec![0.0; ra * ca];
                for i in 0..r {
                    for j in 0..c {
                        let si = if ra == 1 { 0 } else { i };
                        let sj = if ca == 1 { 0 } else { j };
                        t[si * ca + sj] += gd[i * c + j];
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(ra, ca, t));
            }
            Op::Gather { x, idx, width } => {
                let mut t = vec![0.0; r * width];
                for i in 0..r {
                    for j in 0..c {
                        t[i * width + idx[i * c + j]] += gd[i * c + j];
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(r, *width, t));
            }
            Op::Scatter { x, idx, width } => {
                let (rx, q) = self.dims(*x);
                let t = (0..rx * q)
                    .map(|k| gd[(k / q) * width + idx[k]])
                    .collect();
                self.accumulate(grads, *x, Tensor::from_parts(rx, q, t));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let p = c;
                let b = r;
                let gv = self.value(*gamma).data();
                if self.needs(*beta) {
                    let mut db = vec![0.0; p];
                    for k in 0..b * p {
                        db[k % p] += gd[k];
                    }
                    self.accumulate(grads, *beta, Tensor::from_parts(1, p, db));
                }
                let mut sum_g = vec![0.0; p];
                let mut sum_gx = vec![0.0; p];
                for k in 0..b * p {
                    sum_g[k % p] += gd[k];
                    sum_gx[k % p] += gd[k] * xhat[k];
                }
                if self.needs(*gamma) {
                    self.accumulate(grads, *gamma, Tensor::from_parts(1, p, sum_gx.clone()));
                }
                if self.needs(*x) {
                    let bf = b as f64;
                    let dx = (0..b * p)
                        .map(|k| {
                            let j = k % p;
                            gv[j] * inv_std[j] / bf
                                * (bf * gd[k] - sum_g[j] - xhat[k] * sum_gx[j])
                        })
                        .collect();
                    self.accumulate(grads, *x, Tensor::from_parts(b, p, dx));
                }
            }
        }
    }

    // ---- symbolic reverse pass -------------------------------------------

    /// Gradients of scalar `output` with respect to `wrt`, recorded as new
    /// differentiable nodes. Inputs that `output` does not depend on get a
    /// zero constant.
    pub fn differentiate(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(output).len() != 1 {
            return Err(Error::Contract(format!(
                "differentiate needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let n = output.0 + 1;
        let mut depends = vec![false; n];
        for w in wrt {
            if w.0 < n {
                depends[w.0] = true;
            }
        }
        for i in 0..n {
            if !depends[i] && self.nodes[i].op.parents().iter().any(|p| depends[p.0]) {
                depends[i] = true;
            }
        }
        let mut grads: Vec<Option<Var>> = vec![None; n];
        if depends[output.0] {
            grads[output.0] = Some(self.scalar(1.0));
        }
        for i in (0..n).rev() {
            if !depends[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let contributions = self.vjp_graph(Var(i), g)?;
            for (p, d) in contributions {
                if !depends[p.0] {
                    continue;
                }
                grads[p.0] = Some(match grads[p.0] {
                    Some(acc) => self.add(acc, d)?,
                    None => d,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = self.dims(*w);
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect())
    }

    fn mask_of(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let m = self.value(a).map(f);
        self.constant(m)
    }

    fn vjp_graph(&mut self, v: Var, g: Var) -> Result<Vec<(Var, Var)>> {
        let op = self.nodes[v.0].op.clone();
        let (r, c) = self.dims(v);
        Ok(match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let bt = self.transpose(b);
                let da = self.matmul(g, bt)?;
                let at = self.transpose(a);
                let db = self.matmul(at, g)?;
                vec![(a, da), (b, db)]
            }
            Op::Transpose(a) => vec![(a, self.transpose(g))],
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => vec![(a, g), (b, self.neg(g))],
            Op::Mul(a, b) => {
                let da = self.mul(g, b)?;
                let db = self.mul(g, a)?;
                vec![(a, da), (b, db)]
            }
            Op::Div(a, b) => {
                let da = self.div(g, b)?;
                let t = self.mul(g, v)?;
                let t = self.div(t, b)?;
                vec![(a, da), (b, self.neg(t))]
            }
            Op::Neg(a) => vec![(a, self.neg(g))],
            Op::Scale(a, s) => vec![(a, self.scale(g, s))],
            Op::Offset(a) => vec![(a, g)],
            Op::Relu(a) => {
                let m = self.mask_of(a, |x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![(a, self.mul(g, m)?)]
            }
            Op::Abs(a) => {
                let m = self.mask_of(a, sign);
                vec![(a, self.mul(g, m)?)]
            }
            Op::ClampMin(a, lo) => {
                let m = self.mask_of(a, |x| if x > lo { 1.0 } else { 0.0 });
                vec![(a, self.mul(g, m)?)]
            }
            Op::Exp(a) => vec![(a, self.mul(g, v)?)],
            Op::Log(a) => vec![(a, self.div(g, a)?)],
            Op::Sqrt(a) => {
                let two_out = self.scale(v, 2.0);
                vec![(a, self.div(g, two_out)?)]
            }
            Op::Square(a) => {
                let two_x = self.scale(a, 2.0);
                vec![(a, self.mul(g, two_x)?)]
            }
            Op::Sigmoid(a) => {
                let one_minus = self.neg(v);
                let one_minus = self.offset(one_minus, 1.0);
                let slope = self.mul(v, one_minus)?;
                vec![(a, self.mul(g, slope)?)]
            }
            Op::Softplus(a) => {
                let s = self.sigmoid(a);
                vec![(a, self.mul(g, s)?)]
            }
            Op::SumAll(a) | Op::SumRows(a) | Op::SumCols(a) => {
                let (ra, ca) = self.dims(a);
                vec![(a, self.broadcast(g, ra, ca)?)]
            }
            Op::Broadcast(a) => {
                let (ra, ca) = self.dims(a);
                let d = match (ra == 1 && r != 1, ca == 1 && c != 1) {
                    (true, true) => self.sum(g),
                    (true, false) => self.sum_cols(g),
                    (false, true) => self.sum_rows(g),
                    (false, false) => g,
                };
                vec![(a, d)]
            }
            Op::Gather { x, idx, width } => vec![(x, self.scatter_with(g, idx, width))],
            Op::Scatter { x, idx, width } => vec![(x, self.gather_with(g, idx, width))],
            Op::BatchNorm { .. } => return Err(Error::UnsupportedOp("batch_norm")),
        })
    }
}

impl Tensor {
    fn reshape_like(self, other: &Tensor) -> Tensor {
        let (r, c) = (other.rows(), other.cols());
        Tensor::from_parts(r, c, self.into_data())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
