//! Reverse-mode automatic differentiation on a linear tape.
//!
//! A [`Tape`] records every forward operation in execution order; nodes are
//! addressed by [`Var`] handles. Because an operation's inputs are always
//! recorded before the operation itself, a single reverse sweep over the
//! node list is a valid reverse-topological traversal: each node is visited
//! exactly once and its gradient is complete before it propagates to its
//! parents. Gradients accumulate additively across multiple uses of a value.
//!
//! Tapes are cheap and rebuilt per forward pass; parameters live outside the
//! tape as plain [`Tensor`]s and are registered as leaves each step.

use crate::error::{Error, Result};
use crate::tensor::{broadcast_shape, broadcast_strides, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Max,
    Min,
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum UnaryKind {
    Abs,
    Exp,
    Log,
    Relu,
    Neg,
    Scale(f64),
}

#[derive(Debug)]
enum Rule {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
    },
    Reduce {
        x: Var,
        axis: usize,
        kind: ReduceKind,
        /// Flat input index receiving the gradient, per output slot (max/min only).
        winners: Vec<usize>,
    },
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
    },
    Unary {
        x: Var,
        kind: UnaryKind,
    },
    Reshape {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    rule: Rule,
}

/// Ordered record of executed operations with stored forward values.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a tensor as a leaf node. Its `requires_grad` flag decides
    /// whether gradients are tracked through it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Rule::Leaf)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<Var> {
        Ok(self.leaf(Tensor::new(data, shape)?))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.data()
    }

    /// Gradient of a node, if one was accumulated during `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad.as_deref()
    }

    fn push(&mut self, tensor: Tensor, rule: Rule) -> Var {
        self.nodes.push(Node { tensor, rule });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad
    }

    // ── Forward operations ──────────────────────────────────────────

    /// `a · b` where `a` is `[..., m, k]` (rank ≥ 2) and `b` is `[k, n]`.
    /// Leading extents of `a` are treated as batch dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: ashape.clone(),
            rhs: bshape.clone(),
        };
        if ashape.len() < 2 || bshape.len() != 2 || ashape[ashape.len() - 1] != bshape[0] {
            return Err(mismatch());
        }
        let k = bshape[0];
        let n = bshape[1];
        let rows: usize = ashape[..ashape.len() - 1].iter().product();
        let mut out = vec![0.0; rows * n];
        dgemm(
            rows,
            k,
            n,
            self.data(a),
            (k, 1),
            self.data(b),
            (n, 1),
            &mut out,
            false,
        );
        let mut out_shape = ashape.clone();
        *out_shape.last_mut().unwrap() = n;
        let mut t = Tensor::new(out, &out_shape)?;
        t.requires_grad = self.requires(a) || self.requires(b);
        Ok(self.push(t, Rule::Matmul { a, b }))
    }

    /// Reduce one axis. For max/min the backward pass routes the whole
    /// incoming gradient to the winning element; ties go to the lowest
    /// flat index.
    pub fn reduce(&mut self, x: Var, axis: usize, kind: ReduceKind) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::AxisOutOfRange {
                axis,
                rank: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let ext = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let data = self.data(x);
        let mut out = vec![0.0; outer * inner];
        let mut winners = Vec::new();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => {
                for o in 0..outer {
                    let base = o * ext * inner;
                    let acc = &mut out[o * inner..(o + 1) * inner];
                    for e in 0..ext {
                        let row = &data[base + e * inner..base + (e + 1) * inner];
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    let inv = 1.0 / ext as f64;
                    for v in &mut out {
                        *v *= inv;
                    }
                }
            }
            ReduceKind::Max | ReduceKind::Min => {
                winners = vec![0usize; outer * inner];
                for o in 0..outer {
                    let base = o * ext * inner;
                    for i in 0..inner {
                        out[o * inner + i] = data[base + i];
                        winners[o * inner + i] = base + i;
                    }
                    for e in 1..ext {
                        for i in 0..inner {
                            let idx = base + e * inner + i;
                            let v = data[idx];
                            let slot = o * inner + i;
                            let better = match kind {
                                ReduceKind::Max => v > out[slot],
                                _ => v < out[slot],
                            };
                            if better {
                                out[slot] = v;
                                winners[slot] = idx;
                            }
                        }
                    }
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let mut t = Tensor::new(out, &out_shape)?;
        t.requires_grad = self.requires(x);
        Ok(self.push(
            t,
            Rule::Reduce {
                x,
                axis,
                kind,
                winners,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&ashape, &bshape).ok_or(Error::ShapeMismatch {
            op: "elementwise",
            lhs: ashape.clone(),
            rhs: bshape.clone(),
        })?;
        let numel: usize = out_shape.iter().product();
        let mut out = vec![0.0; numel];
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let (ad, bd) = (self.data(a), self.data(b));
        if ashape == bshape {
            for ((o, x), y) in out.iter_mut().zip(ad).zip(bd) {
                *o = f(*x, *y);
            }
        } else if is_suffix(&bshape, &ashape) {
            // e.g. bias add: [B,N,W] ⊕ [W]
            for (chunk, o) in ad.chunks_exact(bd.len()).zip(out.chunks_exact_mut(bd.len())) {
                for i in 0..bd.len() {
                    o[i] = f(chunk[i], bd[i]);
                }
            }
        } else {
            let sa = broadcast_strides(&ashape, out_shape.len());
            let sb = broadcast_strides(&bshape, out_shape.len());
            for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                out[o] = f(ad[ia], bd[ib]);
            });
        }
        let mut t = Tensor::new(out, &out_shape)?;
        t.requires_grad = self.requires(a) || self.requires(b);
        Ok(self.push(t, Rule::Binary { a, b, kind }))
    }

    /// Elementwise |x|; backward uses sign(x) with sign(0) = 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Abs).unwrap()
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Exp).unwrap()
    }

    /// Elementwise natural log; errors if any element is ≤ 0.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Log)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Relu).unwrap()
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Neg).unwrap()
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, UnaryKind::Scale(c)).unwrap()
    }

    fn unary(&mut self, x: Var, kind: UnaryKind) -> Result<Var> {
        let data = self.data(x);
        if let UnaryKind::Log = kind {
            if let Some(v) = data.iter().copied().find(|v| *v <= 0.0) {
                return Err(Error::LogDomain { value: v });
            }
        }
        let out: Vec<f64> = data
            .iter()
            .map(|&v| match kind {
                UnaryKind::Abs => v.abs(),
                UnaryKind::Exp => v.exp(),
                UnaryKind::Log => v.ln(),
                UnaryKind::Relu => {
                    if v > 0.0 {
                        v
                    } else {
                        0.0
                    }
                }
                UnaryKind::Neg => -v,
                UnaryKind::Scale(c) => c * v,
            })
            .collect();
        let mut t = Tensor::new(out, self.shape(x))?;
        t.requires_grad = self.requires(x);
        Ok(self.push(t, Rule::Unary { x, kind }))
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let mut t = Tensor::new(self.data(x).to_vec(), shape)?;
        t.requires_grad = self.requires(x);
        Ok(self.push(t, Rule::Reshape { x }))
    }

    // ── Backward pass ───────────────────────────────────────────────

    /// Populate `grad` on every `requires_grad` tensor reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        self.seed_grad(loss.0);
        for idx in (0..=loss.0).rev() {
            let grad = match self.nodes[idx].tensor.grad.take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &grad);
            self.nodes[idx].tensor.grad = Some(grad);
        }
        Ok(())
    }

    fn seed_grad(&mut self, idx: usize) {
        let n = self.nodes[idx].tensor.numel();
        let g = self.nodes[idx]
            .tensor
            .grad
            .get_or_insert_with(|| vec![0.0; n]);
        for v in g.iter_mut() {
            *v += 1.0;
        }
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        if !self.requires(v) {
            return;
        }
        let n = self.nodes[v.0].tensor.numel();
        let g = self.nodes[v.0]
            .tensor
            .grad
            .get_or_insert_with(|| vec![0.0; n]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    fn propagate(&mut self, idx: usize, grad: &[f64]) {
        if !self.nodes[idx].tensor.requires_grad {
            return;
        }
        // Take the rule out so its fields can be read while `self` is
        // mutated by `accumulate`; restored below.
        let rule = std::mem::replace(&mut self.nodes[idx].rule, Rule::Leaf);
        match &rule {
            Rule::Leaf => {}
            &Rule::Matmul { a, b } => {
                let ashape = self.shape(a).to_vec();
                let k = *ashape.last().unwrap();
                let rows: usize = ashape[..ashape.len() - 1].iter().product();
                let n = self.shape(b)[1];
                if self.requires(a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; rows * k];
                    dgemm(rows, n, k, grad, (n, 1), self.data(b), (1, n), &mut da, false);
                    self.accumulate(a, &da);
                }
                if self.requires(b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    dgemm(k, rows, n, self.data(a), (1, k), grad, (n, 1), &mut db, false);
                    self.accumulate(b, &db);
                }
            }
            Rule::Reduce {
                x,
                axis,
                kind,
                winners,
            } if self.requires(*x) => {
                let (x, axis, kind) = (*x, *axis, *kind);
                let shape = self.shape(x).to_vec();
                let outer: usize = shape[..axis].iter().product();
                let ext = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let mut dx = vec![0.0; outer * ext * inner];
                match kind {
                    ReduceKind::Max | ReduceKind::Min => {
                        for (slot, &w) in winners.iter().enumerate() {
                            dx[w] += grad[slot];
                        }
                    }
                    ReduceKind::Sum | ReduceKind::Mean => {
                        let scale = if kind == ReduceKind::Mean {
                            1.0 / ext as f64
                        } else {
                            1.0
                        };
                        for o in 0..outer {
                            let base = o * ext * inner;
                            let g = &grad[o * inner..(o + 1) * inner];
                            for e in 0..ext {
                                let row = &mut dx[base + e * inner..base + (e + 1) * inner];
                                for (r, gi) in row.iter_mut().zip(g) {
                                    *r += gi * scale;
                                }
                            }
                        }
                    }
                }
                self.accumulate(x, &dx);
            }
            &Rule::Binary { a, b, kind } => {
                let ashape = self.shape(a).to_vec();
                let bshape = self.shape(b).to_vec();
                let out_shape = broadcast_shape(&ashape, &bshape).unwrap();
                let sa = broadcast_strides(&ashape, out_shape.len());
                let sb = broadcast_strides(&bshape, out_shape.len());
                let (need_a, need_b) = (self.requires(a), self.requires(b));
                let mut da = vec![0.0; if need_a { self.value(a).numel() } else { 0 }];
                let mut db = vec![0.0; if need_b { self.value(b).numel() } else { 0 }];
                match kind {
                    BinaryKind::Add | BinaryKind::Sub => {
                        let bsign = if kind == BinaryKind::Sub { -1.0 } else { 1.0 };
                        for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                            if need_a {
                                da[ia] += grad[o];
                            }
                            if need_b {
                                db[ib] += bsign * grad[o];
                            }
                        });
                    }
                    BinaryKind::Mul => {
                        let (ad, bd) = (self.data(a), self.data(b));
                        for_each_broadcast(&out_shape, &sa, &sb, |o, ia, ib| {
                            if need_a {
                                da[ia] += grad[o] * bd[ib];
                            }
                            if need_b {
                                db[ib] += grad[o] * ad[ia];
                            }
                        });
                    }
                }
                if need_a {
                    self.accumulate(a, &da);
                }
                if need_b {
                    self.accumulate(b, &db);
                }
            }
            &Rule::Unary { x, kind } if self.requires(x) => {
                let xd = self.data(x);
                let out = self.nodes[idx].tensor.data();
                let dx: Vec<f64> = match kind {
                    UnaryKind::Abs => xd
                        .iter()
                        .zip(grad)
                        .map(|(&v, &g)| {
                            if v > 0.0 {
                                g
                            } else if v < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        })
                        .collect(),
                    UnaryKind::Exp => out.iter().zip(grad).map(|(&o, &g)| o * g).collect(),
                    UnaryKind::Log => xd.iter().zip(grad).map(|(&v, &g)| g / v).collect(),
                    UnaryKind::Relu => xd
                        .iter()
                        .zip(grad)
                        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                        .collect(),
                    UnaryKind::Neg => grad.iter().map(|&g| -g).collect(),
                    UnaryKind::Scale(c) => grad.iter().map(|&g| c * g).collect(),
                };
                self.accumulate(x, &dx);
            }
            &Rule::Reshape { x } => {
                self.accumulate(x, grad);
            }
            // reduce/unary whose input is untracked
            Rule::Reduce { .. } | Rule::Unary { .. } => {}
        }
        self.nodes[idx].rule = rule;
    }
}

/// `b_shape` equals the trailing extents of `a_shape`.
fn is_suffix(b_shape: &[usize], a_shape: &[usize]) -> bool {
    b_shape.len() <= a_shape.len() && a_shape[a_shape.len() - b_shape.len()..] == *b_shape
}

/// Walk an output shape once, yielding (out flat idx, a flat idx, b flat idx)
/// under broadcast strides. Incremental odometer, no per-element div/mod.
fn for_each_broadcast(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let numel: usize = out_shape.iter().product();
    if numel == 0 {
        return;
    }
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..numel {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Thin wrapper over matrixmultiply's f64 GEMM. `a` is (m,k) and `b` is (k,n)
/// under the given (row, col) strides; accumulates into `c` when `acc`.
fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    astrides: (usize, usize),
    b: &[f64],
    bstrides: (usize, usize),
    c: &mut [f64],
    acc: bool,
) {
    debug_assert!(c.len() == m * n);
    debug_assert!(a.len() >= if m * k == 0 { 0 } else { (m - 1) * astrides.0 + (k - 1) * astrides.1 + 1 });
    debug_assert!(b.len() >= if k * n == 0 { 0 } else { (k - 1) * bstrides.0 + (n - 1) * bstrides.1 + 1 });
    let beta = if acc { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            astrides.0 as isize,
            astrides.1 as isize,
            b.as_ptr(),
            bstrides.0 as isize,
            bstrides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, data: &[f64], shape: &[usize]) -> Var {
        tape.leaf(Tensor::new(data.to_vec(), shape).unwrap().with_grad())
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i = leaf(&mut tape, &[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let v = leaf(&mut tape, &[3.0, 4.0], &[2, 1]);
        let out = tape.matmul(i, v).unwrap();
        assert_eq!(tape.data(out), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[1.0, 2.0], &[1, 2]);
        let b = leaf(&mut tape, &[3.0, 4.0], &[2, 1]);
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.data(out), &[11.0]);
    }

    #[test]
    fn matmul_batched_leading_dims() {
        // [2,1,2]·[2,2]: two stacked row-vectors through the same matrix.
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[1.0, 0.0, 0.0, 2.0], &[2, 1, 2]);
        let b = leaf(&mut tape, &[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(out), &[2, 1, 2]);
        assert_eq!(tape.data(out), &[1.0, 2.0, 6.0, 8.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[0.0; 6], &[2, 3]);
        let b = leaf(&mut tape, &[0.0; 4], &[2, 2]);
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        // random-ish fixed 4x3 · 3x2, loss = sum of output
        let avals: Vec<f64> = (0..12).map(|i| ((i * 7 + 3) % 11) as f64 / 3.0 - 1.5).collect();
        let bvals: Vec<f64> = (0..6).map(|i| ((i * 5 + 1) % 7) as f64 / 2.0 - 1.0).collect();
        let forward = |av: &[f64], bv: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::new(av.to_vec(), &[4, 3]).unwrap().with_grad());
            let b = tape.leaf(Tensor::new(bv.to_vec(), &[3, 2]).unwrap().with_grad());
            let m = tape.matmul(a, b).unwrap();
            // weight the entries so the gradient is not uniform
            let w: Vec<f64> = (0..8).map(|i| (i as f64 + 1.0) / 4.0).collect();
            let wv = tape.constant(w, &[4, 2]).unwrap();
            let p = tape.mul(m, wv).unwrap();
            let s0 = tape.reduce(p, 0, ReduceKind::Sum).unwrap();
            let s = tape.reduce(s0, 0, ReduceKind::Sum).unwrap();
            tape.value(s).item()
        };
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &avals, &[4, 3]);
        let b = leaf(&mut tape, &bvals, &[3, 2]);
        let m = tape.matmul(a, b).unwrap();
        let w: Vec<f64> = (0..8).map(|i| (i as f64 + 1.0) / 4.0).collect();
        let wv = tape.constant(w, &[4, 2]).unwrap();
        let p = tape.mul(m, wv).unwrap();
        let s0 = tape.reduce(p, 0, ReduceKind::Sum).unwrap();
        let s = tape.reduce(s0, 0, ReduceKind::Sum).unwrap();
        tape.backward(s).unwrap();

        let h = 1e-5;
        for (vals, var, other, is_a) in [(&avals, a, &bvals, true), (&bvals, b, &avals, false)] {
            let analytic = tape.grad(var).unwrap().to_vec();
            for i in 0..vals.len() {
                let mut plus = vals.clone();
                plus[i] += h;
                let mut minus = vals.clone();
                minus[i] -= h;
                let fd = if is_a {
                    (forward(&plus, other) - forward(&minus, other)) / (2.0 * h)
                } else {
                    (forward(other, &plus) - forward(other, &minus)) / (2.0 * h)
                };
                let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-6, "element {i}: analytic {} vs fd {fd}", analytic[i]);
            }
        }
    }

    #[test]
    fn reduce_max_and_mean_values() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1.0, 5.0, 3.0], &[1, 3]);
        let m = tape.reduce(x, 1, ReduceKind::Max).unwrap();
        assert_eq!(tape.data(m), &[5.0]);
        let y = leaf(&mut tape, &[2.0, 4.0], &[1, 2]);
        let mn = tape.reduce(y, 1, ReduceKind::Mean).unwrap();
        assert_eq!(tape.data(mn), &[3.0]);
    }

    #[test]
    fn reduce_axis_out_of_range() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1.0, 2.0], &[2]);
        assert!(matches!(
            tape.reduce(x, 1, ReduceKind::Sum),
            Err(Error::AxisOutOfRange { axis: 1, rank: 1 })
        ));
    }

    #[test]
    fn max_tie_routes_to_lowest_flat_index() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[7.0, 7.0, 1.0], &[3]);
        let m = tape.reduce(x, 0, ReduceKind::Max).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn min_backward_routes_to_argmin() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[4.0, -2.0, 9.0, -2.0], &[4]);
        let m = tape.reduce(x, 0, ReduceKind::Min).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn reduce_backward_conserves_gradient_mass() {
        // over several shapes/axes, sum of routed grads == number of output slots
        let data: Vec<f64> = (0..24).map(|i| ((i * 13 + 5) % 17) as f64 - 8.0).collect();
        for axis in 0..3 {
            for kind in [ReduceKind::Max, ReduceKind::Min] {
                let mut tape = Tape::new();
                let x = leaf(&mut tape, &data, &[2, 3, 4]);
                let r = tape.reduce(x, axis, kind).unwrap();
                let s0 = tape.reduce(r, 0, ReduceKind::Sum).unwrap();
                let s = tape.reduce(s0, 0, ReduceKind::Sum).unwrap();
                tape.backward(s).unwrap();
                let total: f64 = tape.grad(x).unwrap().iter().sum();
                let slots = 24 / [2, 3, 4][axis];
                assert_eq!(total, slots as f64);
            }
        }
    }

    #[test]
    fn elementwise_abs_sub() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[3.0], &[1]);
        let b = leaf(&mut tape, &[5.0], &[1]);
        let d = tape.sub(a, b).unwrap();
        let r = tape.abs(d);
        assert_eq!(tape.data(r), &[2.0]);
    }

    #[test]
    fn relu_forward() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[-1.0, 2.0], &[2]);
        let r = tape.relu(x);
        assert_eq!(tape.data(r), &[0.0, 2.0]);
    }

    #[test]
    fn exp_log_round_trip() {
        let vals: Vec<f64> = (1..40).map(|i| i as f64 * 0.37 + 0.01).collect();
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &vals, &[39]);
        let e = tape.exp(x);
        let l = tape.log(e).unwrap();
        for (orig, back) in vals.iter().zip(tape.data(l)) {
            assert!((orig - back).abs() < 1e-12, "{orig} vs {back}");
        }
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1.0, 0.0], &[2]);
        assert!(matches!(tape.log(x), Err(Error::LogDomain { .. })));
    }

    #[test]
    fn broadcast_add_bias_and_general() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let bias = leaf(&mut tape, &[10.0, 20.0, 30.0], &[3]);
        let out = tape.add(a, bias).unwrap();
        assert_eq!(tape.data(out), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        // column broadcast [2,3] - [2,1]
        let col = leaf(&mut tape, &[1.0, 2.0], &[2, 1]);
        let out2 = tape.sub(a, col).unwrap();
        assert_eq!(tape.data(out2), &[0.0, 1.0, 2.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn broadcast_backward_sums_over_expanded_axes() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let bias = leaf(&mut tape, &[1.0, 1.0, 1.0], &[3]);
        let s = tape.add(a, bias).unwrap();
        let s0 = tape.reduce(s, 0, ReduceKind::Sum).unwrap();
        let tot = tape.reduce(s0, 0, ReduceKind::Sum).unwrap();
        tape.backward(tot).unwrap();
        assert_eq!(tape.grad(bias).unwrap(), &[2.0, 2.0, 2.0]);
        assert_eq!(tape.grad(a).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn incompatible_broadcast_is_an_error() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[0.0; 6], &[2, 3]);
        let b = leaf(&mut tape, &[0.0; 4], &[4]);
        assert!(matches!(
            tape.add(a, b),
            Err(Error::ShapeMismatch { op: "elementwise", .. })
        ));
    }

    #[test]
    fn backward_of_sum_is_all_ones() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3.0, -1.0, 2.0, 8.0, 0.5, -2.5], &[2, 3]);
        let s0 = tape.reduce(x, 1, ReduceKind::Sum).unwrap();
        let s = tape.reduce(s0, 0, ReduceKind::Sum).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_mean_squared_error_closed_form() {
        // loss = mean((x - c)^2) ⇒ dx = 2(x - c)/n
        let xv = [1.0, -2.0, 0.5, 3.0];
        let cv = [0.0, 1.0, -1.0, 2.0];
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &xv, &[4]);
        let c = tape.constant(cv.to_vec(), &[4]).unwrap();
        let d = tape.sub(x, c).unwrap();
        let sq = tape.mul(d, d).unwrap();
        let loss = tape.reduce(sq, 0, ReduceKind::Mean).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        for i in 0..4 {
            let expect = 2.0 * (xv[i] - cv[i]) / 4.0;
            assert!((g[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2.0], &[1]);
        let y = tape.add(x, x).unwrap();
        let loss = tape.reduce(y, 0, ReduceKind::Sum).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1.0, 2.0], &[2]);
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn no_grad_leaves_stay_untracked() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![1.0, 2.0], &[2]).unwrap();
        let y = tape.scale(x, 3.0);
        let s = tape.reduce(y, 0, ReduceKind::Sum).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn abs_backward_sign_zero_is_zero() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[-3.0, 0.0, 2.0], &[3]);
        let a = tape.abs(x);
        let s = tape.reduce(a, 0, ReduceKind::Sum).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn forward_and_backward_are_deterministic() {
        let run = || {
            let data: Vec<f64> = (0..60).map(|i| (i as f64 * 0.7).sin()).collect();
            let wts: Vec<f64> = (0..20).map(|i| (i as f64 * 1.3).cos()).collect();
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::new(data, &[4, 3, 5]).unwrap().with_grad());
            let w = tape.leaf(Tensor::new(wts, &[5, 4]).unwrap().with_grad());
            let h = tape.matmul(x, w).unwrap();
            let r = tape.relu(h);
            let m = tape.reduce(r, 1, ReduceKind::Max).unwrap();
            let s0 = tape.reduce(m, 1, ReduceKind::Sum).unwrap();
            let s = tape.reduce(s0, 0, ReduceKind::Mean).unwrap();
            tape.backward(s).unwrap();
            (
                tape.data(s).to_vec(),
                tape.grad(x).unwrap().to_vec(),
                tape.grad(w).unwrap().to_vec(),
            )
        };
        let (v1, gx1, gw1) = run();
        let (v2, gx2, gw2) = run();
        assert!(v1.iter().zip(&v2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(gx1.iter().zip(&gx2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(gw1.iter().zip(&gw2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
