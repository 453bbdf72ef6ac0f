//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Node
//! indices are assigned in creation order, so walking them backwards is a
//! reverse topological traversal and each node is visited exactly once.
//!
//! ```
//! use afkan::tape::Tape;
//! use afkan::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::vector(vec![3.0]));
//! let sq = tape.mul(w, w).unwrap();
//! let loss = tape.sum_all(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(w).data(), &[6.0]);
//! ```

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::tensor::{
    axis_split, broadcast_map, broadcast_shapes, broadcast_strides, resolve_axis, zip_broadcast, Tensor,
};

/// A fused operation whose forward value is computed by the caller and whose
/// backward rule is written by hand.
pub trait CustomOp: std::fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients for each input given the upstream gradient `grad` of the output.
    /// Entries whose `need` flag is false may be `None`. `act_scale` multiplies every
    /// activation derivative the rule uses (1 outside of fault-injection tests).
    fn backward(
        &self,
        inputs: &[&Tensor],
        out: &Tensor,
        grad: Tensor,
        need: &[bool],
        act_scale: f64,
    ) -> Vec<Option<Tensor>>;

    /// Distance of the nearest kinked sub-expression from its kink.
    fn kink_margin(&self, _inputs: &[&Tensor]) -> f64 {
        f64::INFINITY
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Tanh,
    AddScalar(f64),
    MulScalar(f64),
    PowScalar(f64),
    /// `max(x, c)`; ties route the gradient to `x`.
    MaxScalar(f64),
    Act(Activation),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
    Min,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinaryOp, usize, usize),
    Unary(UnaryOp, usize),
    /// `a · b`, or `a · bᵀ` when the flag is set.
    MatMul(usize, usize, bool),
    Reduce {
        op: ReduceOp,
        input: usize,
        axis: usize,
        /// Selected position along `axis` for max/min.
        picks: Vec<usize>,
    },
    Softmax(usize, usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    CrossEntropy {
        input: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Custom(Box<dyn CustomOp>, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations and replays them backwards.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Accumulated gradients of leaf nodes, indexed by node.
    leaf_grads: Vec<Option<Tensor>>,
    strict: bool,
    track_kinks: bool,
    kink_margin: f64,
    fault: Option<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self {
            kink_margin: f64::INFINITY,
            ..Self::default()
        }
    }

    /// Strict mode turns division by exact zero and non-finite results into errors.
    pub fn strict() -> Self {
        Self {
            strict: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records, for kinked ops, the smallest distance of any input to its kink.
    pub fn track_kinks(&mut self, on: bool) {
        self.track_kinks = on;
        self.kink_margin = f64::INFINITY;
    }

    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    /// Scales every activation backward by `factor`. Test fixture for negative controls.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, factor: f64) {
        self.fault = Some(factor);
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
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

    /// Whether gradients will flow back through `v`.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn check(&self, op: &'static str, t: &Tensor) -> Result<()> {
        if self.strict && !t.all_finite() {
            return Err(Error::NonFinite { op });
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if op == BinaryOp::Div && self.strict && vb.data().contains(&0.0) {
            return Err(Error::DivisionByZero);
        }
        let out = match op {
            BinaryOp::Add => broadcast_map(va, vb, |x, y| x + y),
            BinaryOp::Sub => broadcast_map(va, vb, |x, y| x - y),
            BinaryOp::Mul => broadcast_map(va, vb, |x, y| x * y),
            BinaryOp::Div => broadcast_map(va, vb, |x, y| x / y),
            BinaryOp::Pow => broadcast_map(va, vb, f64::powf),
        }
        .map_err(|_| Error::ShapeMismatch {
            op: binary_name(op),
            lhs: va.shape().to_vec(),
            rhs: vb.shape().to_vec(),
        })?;
        self.check(binary_name(op), &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(op, a.0, b.0), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn pow(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Pow, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        if self.track_kinks {
            let x = self.nodes[a.0].value.data();
            let margin = match op {
                UnaryOp::Act(act) if act.has_kink() => min_abs(x, 0.0),
                UnaryOp::MaxScalar(c) => min_abs(x, c),
                _ => f64::INFINITY,
            };
            self.kink_margin = self.kink_margin.min(margin);
        }
        let va = self.value(a);
        let out = match op {
            UnaryOp::Neg => va.map(|x| -x),
            UnaryOp::Exp => va.map(f64::exp),
            UnaryOp::Log => va.map(f64::ln),
            UnaryOp::Tanh => va.map(f64::tanh),
            UnaryOp::AddScalar(c) => va.map(|x| x + c),
            UnaryOp::MulScalar(c) => va.map(|x| x * c),
            UnaryOp::PowScalar(p) => va.map(|x| x.powf(p)),
            UnaryOp::MaxScalar(c) => va.map(|x| x.max(c)),
            UnaryOp::Act(act) => Tensor::from_parts(va.shape().to_vec(), act.apply_all(va.data())),
        };
        self.check("unary", &out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Unary(op, a.0), rg))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::AddScalar(c), a)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::MulScalar(c), a)
    }

    pub fn pow_scalar(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(UnaryOp::PowScalar(p), a)
    }

    pub fn max_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(UnaryOp::MaxScalar(c), a)
    }

    pub fn activation(&mut self, act: Activation, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Act(act), a)
    }

    // ---- structural ----

    /// `(…, m, k) × (k, n)`; leading axes of `a` are treated as a batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for a `(n, k)` matrix `b`, without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, bt: bool) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        let (k, n) = if bt && sb.len() == 2 {
            (sb[1], sb[0])
        } else {
            (sb[0], sb.get(1).copied().unwrap_or(0))
        };
        if !(2..=3).contains(&sa.len()) || sb.len() != 2 || sa[sa.len() - 1] != k {
            return Err(Error::ShapeMismatch {
                op: if bt { "matmul_t" } else { "matmul" },
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let m = va.len() / k;
        let mut out = vec![0.0; m * n];
        let bs = if bt { (1, k) } else { (n, 1) };
        gemm(m, k, n, va.data(), (k, 1), vb.data(), bs, &mut out);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul(a.0, b.0, bt), rg))
    }

    pub fn reduce(&mut self, op: ReduceOp, a: Var, axis: isize, keep: bool) -> Result<Var> {
        let va = self.value(a);
        let ax = resolve_axis("reduce", axis, va.rank())?;
        let (outer, len, inner) = axis_split(va.shape(), ax);
        let x = va.data();
        let mut out = vec![0.0; outer * inner];
        let mut picks = Vec::new();
        match op {
            ReduceOp::Sum | ReduceOp::Mean => {
                if inner == 1 {
                    for (acc, row) in out.iter_mut().zip(x.chunks_exact(len)) {
                        *acc = row.iter().sum();
                    }
                } else {
                    for o in 0..outer {
                        for j in 0..len {
                            let row = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                            for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                    }
                }
                if op == ReduceOp::Mean {
                    let s = 1.0 / len as f64;
                    out.iter_mut().for_each(|v| *v *= s);
                }
            }
            ReduceOp::Max | ReduceOp::Min => {
                picks = vec![0; outer * inner];
                let better = |c: f64, best: f64| {
                    if op == ReduceOp::Max {
                        c > best
                    } else {
                        c < best
                    }
                };
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = x[o * len * inner + i];
                        let mut at = 0;
                        for j in 1..len {
                            let c = x[(o * len + j) * inner + i];
                            if better(c, best) {
                                best = c;
                                at = j;
                            }
                        }
                        out[o * inner + i] = best;
                        picks[o * inner + i] = at;
                    }
                }
            }
        }
        let mut shape = va.shape().to_vec();
        if keep {
            shape[ax] = 1;
        } else {
            shape.remove(ax);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Reduce {
                op,
                input: a.0,
                axis: ax,
                picks,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var, axis: isize, keep: bool) -> Result<Var> {
        self.reduce(ReduceOp::Sum, a, axis, keep)
    }

    pub fn mean(&mut self, a: Var, axis: isize, keep: bool) -> Result<Var> {
        self.reduce(ReduceOp::Mean, a, axis, keep)
    }

    fn reduce_all(&mut self, op: ReduceOp, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let flat = self.reshape(a, vec![n])?;
        self.reduce(op, flat, 0, false)
    }

    /// Sum over every entry; the result has rank 0.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.reduce_all(ReduceOp::Sum, a)
    }

    pub fn max_all(&mut self, a: Var) -> Result<Var> {
        self.reduce_all(ReduceOp::Max, a)
    }

    pub fn min_all(&mut self, a: Var) -> Result<Var> {
        self.reduce_all(ReduceOp::Min, a)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: isize) -> Result<Var> {
        let va = self.value(a);
        let ax = resolve_axis("softmax", axis, va.rank())?;
        let (outer, len, inner) = axis_split(va.shape(), ax);
        let x = va.data();
        let mut out = vec![0.0; x.len()];
        if inner == 1 {
            for (dst, row) in out.chunks_exact_mut(len).zip(x.chunks_exact(len)) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d = (v - m).exp();
                    z += *d;
                }
                let inv = 1.0 / z;
                dst.iter_mut().for_each(|d| *d *= inv);
            }
        }
        for o in 0..if inner == 1 { 0 } else { outer } {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let m = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..len {
                    let e = (x[at(j)] - m).exp();
                    out[at(j)] = e;
                    z += e;
                }
                for j in 0..len {
                    out[at(j)] /= z;
                }
            }
        }
        let shape = va.shape().to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax(a.0, ax), rg))
    }

    /// Softmax of `a / max(tau, 1)` along `axis`, with `tau` a one-element var.
    pub fn softmax_tempered(&mut self, a: Var, axis: isize, tau: Var) -> Result<Var> {
        let t = self.max_scalar(tau, 1.0)?;
        let scaled = self.div(a, t)?;
        self.softmax(scaled, axis)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a.0), rg))
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: Vec<usize>) -> Result<Var> {
        let va = self.value(a);
        let rank = va.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::InvalidShape {
                op: "permute",
                shape: va.shape().to_vec(),
                reason: format!("bad permutation {perm:?}"),
            });
        }
        let out = permute_tensor(va, &perm);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Permute(a.0, perm), rg))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)` for `(B, C)` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let s = v.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::InvalidShape {
                op: "cross_entropy",
                shape: s.to_vec(),
                reason: format!("expected ({}, C) logits", labels.len()),
            });
        }
        let (b, c) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let x = v.data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &x[r * c..(r + 1) * c];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + z.ln();
            loss += lse - row[label];
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
        }
        let out = Tensor::scalar(loss / b as f64);
        self.check("cross_entropy", &out)?;
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                input: logits.0,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Records a fused op whose forward `value` the caller already computed.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var], value: Tensor) -> Result<Var> {
        self.check(op.name(), &value)?;
        if self.track_kinks {
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let m = op.kink_margin(&vals);
            self.kink_margin = self.kink_margin.min(m);
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        let ids = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(value, Op::Custom(op, ids), rg))
    }

    // ---- gradients ----

    /// Accumulates d(loss)/d(leaf) into every reachable leaf.
    ///
    /// Calling this twice without [`zero_grad`](Self::zero_grad) adds the gradients twice.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let seed = Tensor::full(lv.shape().to_vec(), 1.0);
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(seed);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => accumulate(&mut self.leaf_grads[i], g),
                op => {
                    for (j, gj) in self.local_backward(op, &node.value, g) {
                        if self.nodes[j].requires_grad {
                            accumulate(&mut grads[j], gj);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn local_backward(&self, op: &Op, out: &Tensor, g: Tensor) -> Vec<(usize, Tensor)> {
        let val = |i: usize| &self.nodes[i].value;
        match *op {
            Op::Leaf => Vec::new(),
            Op::Binary(kind, a, b) => {
                let need = (self.nodes[a].requires_grad, self.nodes[b].requires_grad);
                let (ga, gb) = binary_backward(kind, val(a), val(b), out, g, need);
                ga.map(|t| (a, t)).into_iter().chain(gb.map(|t| (b, t))).collect()
            }
            Op::Unary(kind, a) => {
                let x = val(a).data();
                let y = out.data();
                let mut g = g;
                let gd = g.data_mut();
                match kind {
                    UnaryOp::Neg => gd.iter_mut().for_each(|v| *v = -*v),
                    UnaryOp::Exp => gd.iter_mut().zip(y).for_each(|(g, y)| *g *= y),
                    UnaryOp::Log => gd.iter_mut().zip(x).for_each(|(g, x)| *g /= x),
                    UnaryOp::Tanh => gd.iter_mut().zip(y).for_each(|(g, y)| *g *= 1.0 - y * y),
                    UnaryOp::AddScalar(_) => {}
                    UnaryOp::MulScalar(c) => gd.iter_mut().for_each(|g| *g *= c),
                    UnaryOp::PowScalar(p) => gd
                        .iter_mut()
                        .zip(x)
                        .for_each(|(g, x)| *g = if p == 0.0 { 0.0 } else { *g * p * x.powf(p - 1.0) }),
                    UnaryOp::MaxScalar(c) => gd.iter_mut().zip(x).for_each(|(g, &x)| {
                        if x < c {
                            *g = 0.0
                        }
                    }),
                    UnaryOp::Act(act) => act.scale_by_derivative(x, gd, self.fault.unwrap_or(1.0)),
                }
                vec![(a, g)]
            }
            Op::MatMul(a, b, bt) => {
                let (va, vb) = (val(a), val(b));
                let (k, n) = if bt {
                    (vb.shape()[1], vb.shape()[0])
                } else {
                    (vb.shape()[0], vb.shape()[1])
                };
                let m = va.len() / k;
                let mut out = Vec::with_capacity(2);
                if self.nodes[a].requires_grad {
                    // dA = dC · Bᵀ, where B is the effective (k, n) right factor
                    let mut ga = vec![0.0; m * k];
                    let bs = if bt { (k, 1) } else { (1, n) };
                    gemm(m, n, k, g.data(), (n, 1), vb.data(), bs, &mut ga);
                    out.push((a, Tensor::from_parts(va.shape().to_vec(), ga)));
                }
                if self.nodes[b].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    if bt {
                        // dBᵀ = dCᵀ · A
                        gemm(n, m, k, g.data(), (1, n), va.data(), (k, 1), &mut gb);
                    } else {
                        // dB = Aᵀ · dC
                        gemm(k, m, n, va.data(), (1, k), g.data(), (n, 1), &mut gb);
                    }
                    out.push((b, Tensor::from_parts(vb.shape().to_vec(), gb)));
                }
                out
            }
            Op::Reduce {
                op,
                input,
                axis,
                ref picks,
            } => {
                let vi = val(input);
                let (outer, len, inner) = axis_split(vi.shape(), axis);
                let gd = g.data();
                let mut gi = vec![0.0; vi.len()];
                match op {
                    ReduceOp::Sum | ReduceOp::Mean if inner == 1 => {
                        let s = if op == ReduceOp::Mean {
                            1.0 / len as f64
                        } else {
                            1.0
                        };
                        for (row, &v) in gi.chunks_exact_mut(len).zip(gd) {
                            row.fill(v * s);
                        }
                    }
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let s = if op == ReduceOp::Mean {
                            1.0 / len as f64
                        } else {
                            1.0
                        };
                        for o in 0..outer {
                            for j in 0..len {
                                let dst = &mut gi[(o * len + j) * inner..(o * len + j + 1) * inner];
                                for (d, &v) in dst.iter_mut().zip(&gd[o * inner..(o + 1) * inner]) {
                                    *d = v * s;
                                }
                            }
                        }
                    }
                    ReduceOp::Max | ReduceOp::Min => {
                        for o in 0..outer {
                            for i in 0..inner {
                                let j = picks[o * inner + i];
                                gi[(o * len + j) * inner + i] = gd[o * inner + i];
                            }
                        }
                    }
                }
                vec![(input, Tensor::from_parts(vi.shape().to_vec(), gi))]
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = axis_split(out.shape(), axis);
                let y = out.data();
                let gd = g.data();
                let mut gi = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| gd[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            gi[at(j)] = y[at(j)] * (gd[at(j)] - dot);
                        }
                    }
                }
                vec![(a, Tensor::from_parts(out.shape().to_vec(), gi))]
            }
            Op::Reshape(a) => {
                let shape = val(a).shape().to_vec();
                vec![(a, Tensor::from_parts(shape, g.into_data()))]
            }
            Op::Permute(a, ref perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![(a, permute_tensor(&g, &inv))]
            }
            Op::CrossEntropy {
                input,
                ref labels,
                ref probs,
            } => {
                let b = labels.len();
                let c = probs.len() / b;
                let scale = g.data()[0] / b as f64;
                let mut gi: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gi[r * c + l] -= scale;
                }
                vec![(input, Tensor::from_parts(vec![b, c], gi))]
            }
            Op::Custom(ref custom, ref ids) => {
                let inputs: Vec<&Tensor> = ids.iter().map(|&i| val(i)).collect();
                let need: Vec<bool> = ids.iter().map(|&i| self.nodes[i].requires_grad).collect();
                let grads = custom.backward(&inputs, out, g, &need, self.fault.unwrap_or(1.0));
                ids.iter()
                    .zip(grads)
                    .filter_map(|(&i, g)| g.map(|g| (i, g)))
                    .collect()
            }
        }
    }

    /// Gradient accumulated for `v`; zeros when nothing reached it.
    pub fn grad(&self, v: Var) -> Tensor {
        self.leaf_grads
            .get(v.0)
            .and_then(Option::as_ref)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape().to_vec()))
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }
}

fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
        BinaryOp::Pow => "pow",
    }
}

fn min_abs(x: &[f64], c: f64) -> f64 {
    x.iter().map(|v| (v - c).abs()).fold(f64::INFINITY, f64::min)
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Gradients of a broadcast binary op, already summed down to each operand's shape.
/// Only the operands flagged in `need` get a gradient.
fn binary_backward(
    op: BinaryOp,
    a: &Tensor,
    b: &Tensor,
    y: &Tensor,
    g: Tensor,
    need: (bool, bool),
) -> (Option<Tensor>, Option<Tensor>) {
    let same = a.shape() == y.shape() && b.shape() == y.shape();
    if same && matches!(op, BinaryOp::Add | BinaryOp::Sub) {
        let gb = need.1.then(|| match op {
            BinaryOp::Sub => g.map(|v| -v),
            _ => g.clone(),
        });
        return (need.0.then_some(g), gb);
    }
    match op {
        BinaryOp::Add => backward_pass(a, b, y, &g, need, |_, _, gv, _| (gv, gv)),
        BinaryOp::Sub => backward_pass(a, b, y, &g, need, |_, _, gv, _| (gv, -gv)),
        BinaryOp::Mul => backward_pass(a, b, y, &g, need, |x, w, gv, _| (gv * w, gv * x)),
        BinaryOp::Div => backward_pass(a, b, y, &g, need, |x, w, gv, _| (gv / w, -gv * x / (w * w))),
        BinaryOp::Pow => backward_pass(a, b, y, &g, need, |x, w, gv, yv| {
            let da = if w == 0.0 { 0.0 } else { gv * w * x.powf(w - 1.0) };
            let db = if x > 0.0 { gv * yv * x.ln() } else { 0.0 };
            (da, db)
        }),
    }
}

/// Walks the broadcast once, accumulating each partial straight into its operand's layout.
#[inline(always)]
fn backward_pass(
    a: &Tensor,
    b: &Tensor,
    y: &Tensor,
    g: &Tensor,
    need: (bool, bool),
    f: impl Fn(f64, f64, f64, f64) -> (f64, f64),
) -> (Option<Tensor>, Option<Tensor>) {
    let out = y.shape();
    let (ad, bd, yd, gd) = (a.data(), b.data(), y.data(), g.data());
    let mut ga = vec![0.0; if need.0 { ad.len() } else { 0 }];
    let mut gb = vec![0.0; if need.1 { bd.len() } else { 0 }];
    if a.shape() == out && b.shape() == out {
        for o in 0..gd.len() {
            let (da, db) = f(ad[o], bd[o], gd[o], yd[o]);
            if need.0 {
                ga[o] = da;
            }
            if need.1 {
                gb[o] = db;
            }
        }
    } else if a.shape() == out && bd.len() == 1 {
        let w = bd[0];
        let mut acc = 0.0;
        for o in 0..gd.len() {
            let (da, db) = f(ad[o], w, gd[o], yd[o]);
            if need.0 {
                ga[o] = da;
            }
            acc += db;
        }
        if need.1 {
            gb[0] = acc;
        }
    } else {
        let sa = broadcast_strides(a.shape(), out);
        let sb = broadcast_strides(b.shape(), out);
        zip_broadcast(out, &sa, &sb, |o, ia, ib| {
            let (da, db) = f(ad[ia], bd[ib], gd[o], yd[o]);
            if need.0 {
                ga[ia] += da;
            }
            if need.1 {
                gb[ib] += db;
            }
        });
    }
    (
        need.0.then(|| Tensor::from_parts(a.shape().to_vec(), ga)),
        need.1.then(|| Tensor::from_parts(b.shape().to_vec(), gb)),
    )
}

pub(crate) fn permute_tensor(t: &Tensor, perm: &[usize]) -> Tensor {
    let shape = t.shape();
    let rank = shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let zero = vec![0; rank];
    let src = t.data();
    let mut data = vec![0.0; t.len()];
    zip_broadcast(&out_shape, &strides, &zero, |o, i, _| data[o] = src[i]);
    Tensor::from_parts(out_shape, data)
}

/// `c = a · b` for an `(m, k)` by `(k, n)` product with explicit `(row, col)` strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if n == 1 && rsa < csa {
        // Matrix-vector product with A stored column-major: stream A once.
        let c = &mut c[..m];
        c.fill(0.0);
        for p in 0..k {
            let bv = b[p * rsb];
            let col = &a[p * csa..];
            for (i, cv) in c.iter_mut().enumerate() {
                *cv += col[i * rsa] * bv;
            }
        }
        return;
    }
    if n == 1 {
        for (i, cv) in c[..m].iter_mut().enumerate() {
            let row = &a[i * rsa..];
            *cv = (0..k).map(|p| row[p * csa] * b[p * rsb]).sum();
        }
        return;
    }
    if k.min(n) <= 4 {
        // Thin products: packing overhead dominates, plain loops are faster.
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            row.fill(0.0);
            for p in 0..k {
                let av = a[i * rsa + p * csa];
                for (j, cv) in row.iter_mut().enumerate() {
                    *cv += av * b[p * rsb + j * csb];
                }
            }
        }
        return;
    }
    // SAFETY: slice lengths cover every strided access for the given extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `softmax(x / max(temperature, 1))` along `axis`, outside of any training graph.
pub fn softmax_axis(x: &Tensor, axis: isize, temperature: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let t = tape.constant(Tensor::scalar(temperature));
    let y = tape.softmax_tempered(v, axis, t)?;
    Ok(tape.value(y).clone())
}

/// Broadcast shape check exposed for property tests.
pub fn broadcast(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    broadcast_shapes(a, b)
}
