//! Reverse-mode automatic differentiation on a recording tape.
//!
//! A [`Tape`] records every forward operation of one training instance as a
//! node holding its value and the references needed to replay the chain rule
//! backwards. Parameters enter the tape as shared leaves (no copy); their
//! gradients flow straight into the owning [`ParamStore`] during
//! [`Tape::backward`], so several instances can accumulate into one batch
//! update.
//!
//! The op set is the closed vocabulary the model is written in: affine maps,
//! concatenation, sigmoid/tanh, elementwise add/sub/mul, dot products,
//! scaling by constants or scalar nodes, softmax, L2 and squared-L2 norms,
//! relu, and the elementwise recip/log needed by the squashing nonlinearity
//! and the cross-entropy head. Every op has a finite-difference-checked
//! backward rule.

use std::collections::HashMap;
use std::sync::Arc;

use crate::param::{ParamId, ParamStore};
use crate::tensor::{axpy, dot, matvec_into, Tensor, TensorError};

/// Index of a node on the tape.
pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NShape {
    Vector(usize),
    Matrix(usize, usize),
}

impl NShape {
    fn len(self) -> usize {
        match self {
            NShape::Vector(n) => n,
            NShape::Matrix(r, c) => r * c,
        }
    }

    fn to_vec(self) -> Vec<usize> {
        match self {
            NShape::Vector(n) => vec![n],
            NShape::Matrix(r, c) => vec![r, c],
        }
    }

    fn from_tensor(t: &Tensor) -> NShape {
        match t.shape() {
            [n] => NShape::Vector(*n),
            [r, c] => NShape::Matrix(*r, *c),
            other => panic!("tape supports 1-D and 2-D tensors, got {other:?}"),
        }
    }
}

enum NodeVal {
    Owned(Vec<f64>),
    Shared(Arc<Tensor>),
    /// One row of a shared 2-D parameter (embedding lookup).
    Row(Arc<Tensor>, usize),
}

enum Op {
    Const,
    Param(ParamId),
    ParamRow(ParamId, usize),
    /// W·x + b
    Affine { w: NodeId, x: NodeId, b: NodeId },
    /// W·x
    MatVec { w: NodeId, x: NodeId },
    Concat(Vec<NodeId>),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Recip(NodeId),
    Log(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Dot(NodeId, NodeId),
    ScaleConst { x: NodeId, k: f64 },
    /// x scaled by a one-element node.
    Scale { x: NodeId, s: NodeId },
    Softmax { x: NodeId, axis: usize },
    L2Norm(NodeId),
    SqNorm(NodeId),
}

struct Node {
    val: NodeVal,
    shape: NShape,
    op: Op,
}

impl Node {
    fn data(&self) -> &[f64] {
        match &self.val {
            NodeVal::Owned(v) => v,
            NodeVal::Shared(t) => t.data(),
            NodeVal::Row(t, r) => t.row(*r),
        }
    }
}

/// Recording tape for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: HashMap<(usize, usize), NodeId>,
}

const NO_ROW: usize = usize::MAX;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clear all recorded nodes, keeping allocations for reuse.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.leaves.clear();
    }

    fn push(&mut self, val: NodeVal, shape: NShape, op: Op) -> NodeId {
        self.nodes.push(Node { val, shape, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        self.nodes[id].data()
    }

    pub fn shape(&self, id: NodeId) -> Vec<usize> {
        self.nodes[id].shape.to_vec()
    }

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let shape = NShape::from_tensor(&t);
        self.push(NodeVal::Owned(t.data().to_vec()), shape, Op::Const)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(NodeVal::Owned(vec![v]), NShape::Vector(1), Op::Const)
    }

    pub fn zeros(&mut self, n: usize) -> NodeId {
        self.push(NodeVal::Owned(vec![0.0; n]), NShape::Vector(n), Op::Const)
    }

    /// Parameter leaf. Repeated requests for the same parameter return the
    /// same node, so its gradient is accumulated once per tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.leaves.get(&(id.0, NO_ROW)) {
            return n;
        }
        let t = store.value(id).clone();
        let shape = NShape::from_tensor(&t);
        let n = self.push(NodeVal::Shared(t), shape, Op::Param(id));
        self.leaves.insert((id.0, NO_ROW), n);
        n
    }

    /// One row of a 2-D parameter, for embedding lookups. Gradient flows into
    /// that row only.
    pub fn param_row(
        &mut self,
        store: &ParamStore,
        id: ParamId,
        row: usize,
    ) -> Result<NodeId, TensorError> {
        if let Some(&n) = self.leaves.get(&(id.0, row)) {
            return Ok(n);
        }
        let t = store.value(id).clone();
        match *t.shape() {
            [rows, cols] => {
                if row >= rows {
                    return Err(TensorError::RowOutOfBounds { row, rows });
                }
                let n = self.push(NodeVal::Row(t, row), NShape::Vector(cols), Op::ParamRow(id, row));
                self.leaves.insert((id.0, row), n);
                Ok(n)
            }
            _ => Err(TensorError::BadShape {
                op: "param_row",
                expected: "a 2-D parameter",
                shape: t.shape().to_vec(),
            }),
        }
    }

    fn vec_len(&self, id: NodeId, op: &'static str) -> Result<usize, TensorError> {
        match self.nodes[id].shape {
            NShape::Vector(n) => Ok(n),
            s => Err(TensorError::BadShape {
                op,
                expected: "a vector",
                shape: s.to_vec(),
            }),
        }
    }

    /// W·x + b with W `m x n`, x length n, b length m.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = match self.nodes[w].shape {
            NShape::Matrix(m, n) => (m, n),
            s => {
                return Err(TensorError::BadShape {
                    op: "affine",
                    expected: "a matrix for W",
                    shape: s.to_vec(),
                })
            }
        };
        let xn = self.vec_len(x, "affine")?;
        let bn = self.vec_len(b, "affine")?;
        if xn != n || bn != m {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                lhs: vec![m, n],
                rhs: vec![xn, bn],
            });
        }
        let mut out = vec![0.0; m];
        matvec_into(self.nodes[w].data(), self.nodes[x].data(), &mut out, m, n);
        for (o, bv) in out.iter_mut().zip(self.nodes[b].data()) {
            *o += bv;
        }
        Ok(self.push(NodeVal::Owned(out), NShape::Vector(m), Op::Affine { w, x, b }))
    }

    /// W·x without a bias term.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = match self.nodes[w].shape {
            NShape::Matrix(m, n) => (m, n),
            s => {
                return Err(TensorError::BadShape {
                    op: "matvec",
                    expected: "a matrix for W",
                    shape: s.to_vec(),
                })
            }
        };
        let xn = self.vec_len(x, "matvec")?;
        if xn != n {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                lhs: vec![m, n],
                rhs: vec![xn],
            });
        }
        let mut out = vec![0.0; m];
        matvec_into(self.nodes[w].data(), self.nodes[x].data(), &mut out, m, n);
        Ok(self.push(NodeVal::Owned(out), NShape::Vector(m), Op::MatVec { w, x }))
    }

    /// Concatenate 1-D nodes in order.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let mut total = 0;
        for &p in parts {
            total += self.vec_len(p, "concat")?;
        }
        let mut out = Vec::with_capacity(total);
        for &p in parts {
            out.extend_from_slice(self.nodes[p].data());
        }
        Ok(self.push(
            NodeVal::Owned(out),
            NShape::Vector(total),
            Op::Concat(parts.to_vec()),
        ))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let out: Vec<f64> = self.nodes[x].data().iter().map(|&v| f(v)).collect();
        let shape = self.nodes[x].shape;
        self.push(NodeVal::Owned(out), shape, op)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Elementwise 1/x. Inputs must be bounded away from zero; the model only
    /// applies it to 1 + squared norms.
    pub fn recip(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| 1.0 / v, Op::Recip(x))
    }

    /// Elementwise natural log; inputs must be positive.
    pub fn log(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::ln, Op::Log(x))
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, TensorError> {
        let (sa, sb) = (self.nodes[a].shape, self.nodes[b].shape);
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let out: Vec<f64> = self.nodes[a]
            .data()
            .iter()
            .zip(self.nodes[b].data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(NodeVal::Owned(out), sa, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Dot product of two equal-length vectors; result has shape `[1]`.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let na = self.vec_len(a, "dot")?;
        let nb = self.vec_len(b, "dot")?;
        if na != nb {
            return Err(TensorError::ShapeMismatch {
                op: "dot",
                lhs: vec![na],
                rhs: vec![nb],
            });
        }
        let v = dot(self.nodes[a].data(), self.nodes[b].data());
        Ok(self.push(NodeVal::Owned(vec![v]), NShape::Vector(1), Op::Dot(a, b)))
    }

    pub fn scale_const(&mut self, x: NodeId, k: f64) -> NodeId {
        self.unary(x, |v| k * v, Op::ScaleConst { x, k })
    }

    /// Scale a node by a one-element node.
    pub fn scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId, TensorError> {
        let sn = self.vec_len(s, "scale")?;
        if sn != 1 {
            return Err(TensorError::BadShape {
                op: "scale",
                expected: "a one-element scale",
                shape: self.nodes[s].shape.to_vec(),
            });
        }
        let k = self.nodes[s].data()[0];
        let out: Vec<f64> = self.nodes[x].data().iter().map(|&v| k * v).collect();
        let shape = self.nodes[x].shape;
        Ok(self.push(NodeVal::Owned(out), shape, Op::Scale { x, s }))
    }

    /// Softmax along `axis`. For a vector the axis must be 0; for a matrix,
    /// axis 1 normalizes each row and axis 0 each column.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let shape = self.nodes[x].shape;
        match (shape, axis) {
            (NShape::Vector(_), 0) | (NShape::Matrix(..), 0) | (NShape::Matrix(..), 1) => {}
            _ => {
                return Err(TensorError::BadShape {
                    op: "softmax",
                    expected: "axis 0 for vectors, 0 or 1 for matrices",
                    shape: shape.to_vec(),
                })
            }
        }
        let mut out = self.nodes[x].data().to_vec();
        for lane in lanes(shape, axis) {
            softmax_lane(&mut out, &lane);
        }
        Ok(self.push(NodeVal::Owned(out), shape, Op::Softmax { x, axis }))
    }

    /// Euclidean norm; result has shape `[1]`.
    pub fn l2_norm(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].data().iter().map(|&a| a * a).sum::<f64>().sqrt();
        self.push(NodeVal::Owned(vec![v]), NShape::Vector(1), Op::L2Norm(x))
    }

    /// Squared Euclidean norm; result has shape `[1]`.
    pub fn sq_norm(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].data().iter().map(|&a| a * a).sum::<f64>();
        self.push(NodeVal::Owned(vec![v]), NShape::Vector(1), Op::SqNorm(x))
    }

    /// Sum a list of equal-shape nodes.
    pub fn sum_nodes(&mut self, nodes: &[NodeId]) -> Result<NodeId, TensorError> {
        let mut acc = nodes[0];
        for &n in &nodes[1..] {
            acc = self.add(acc, n)?;
        }
        Ok(acc)
    }

    /// Propagate gradients from a scalar loss back to every parameter leaf,
    /// accumulating into the store. The tape itself is unchanged and may be
    /// inspected afterwards.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<(), TensorError> {
        if self.nodes[loss].shape != NShape::Vector(1) {
            return Err(TensorError::NonScalarLoss {
                shape: self.nodes[loss].shape.to_vec(),
            });
        }
        // Param leaves accumulate straight into the store; only interior
        // nodes get scratch gradient buffers.
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(loss + 1);
        for node in &self.nodes[..=loss] {
            match node.op {
                Op::Param(_) | Op::ParamRow(..) | Op::Const => grads.push(Vec::new()),
                _ => grads.push(vec![0.0; node.shape.len()]),
            }
        }
        if grads[loss].is_empty() {
            grads[loss] = vec![0.0];
        }
        grads[loss][0] = 1.0;

        for i in (0..=loss).rev() {
            let g = std::mem::take(&mut grads[i]);
            if g.is_empty() {
                continue;
            }
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(id) => axpy(store.gradient_mut(*id).data_mut(), 1.0, &g),
                Op::ParamRow(id, row) => {
                    let grad = store.gradient_mut(*id);
                    let cols = grad.shape()[1];
                    let start = row * cols;
                    axpy(&mut grad.data_mut()[start..start + cols], 1.0, &g);
                }
                Op::Affine { w, x, b } => {
                    self.back_matvec(*w, *x, &g, &mut grads, store);
                    self.accumulate(*b, &g, &mut grads, store);
                }
                Op::MatVec { w, x } => {
                    self.back_matvec(*w, *x, &g, &mut grads, store);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p].shape.len();
                        self.accumulate(p, &g[off..off + n], &mut grads, store);
                        off += n;
                    }
                }
                Op::Sigmoid(x) => {
                    let y = self.nodes[i].data();
                    let dx: Vec<f64> = g.iter().zip(y).map(|(&g, &y)| g * y * (1.0 - y)).collect();
                    self.accumulate(*x, &dx, &mut grads, store);
                }
                Op::Tanh(x) => {
                    let y = self.nodes[i].data();
                    let dx: Vec<f64> = g.iter().zip(y).map(|(&g, &y)| g * (1.0 - y * y)).collect();
                    self.accumulate(*x, &dx, &mut grads, store);
                }
                Op::Relu(x) => {
                    let xv = self.nodes[*x].data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    self.accumulate(*x, &dx, &mut grads, store);
                }
                Op::Recip(x) => {
                    let y = self.nodes[i].data();
                    let dx: Vec<f64> = g.iter().zip(y).map(|(&g, &y)| -g * y * y).collect();
                    self.accumulate(*x, &dx, &mut grads, store);
                }
                Op::Log(x) => {
                    let xv = self.nodes[*x].data();
                    let dx: Vec<f64> = g.iter().zip(xv).map(|(&g, &x)| g / x).collect();
                    self.accumulate(*x, &dx, &mut grads, store);
                }
                Op::Add(a, b) => {
                    self.accumulate(*a, &g, &mut grads, store);
                    self.accumulate(*b, &g, &mut grads, store);
                }
                Op::Sub(a, b) => {
                    self.accumulate(*a, &g, &mut grads, store);
                    let neg: Vec<f64> = g.iter().map(|&v| -v).collect();
                    self.accumulate(*b, &neg, &mut grads, store);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[*b].data())
                        .map(|(&g, &b)| g * b)
                        .collect();
                    let db: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[*a].data())
                        .map(|(&g, &a)| g * a)
                        .collect();
                    self.accumulate(*a, &da, &mut grads, store);
                    self.accumulate(*b, &db, &mut grads, store);
                }
                Op::Dot(a, b) => {
                    let g0 = g[0];
                    let da: Vec<f64> = self.nodes[*b].data().iter().map(|&v| g0 * v).collect();
                    let db: Vec<f64> = self.nodes[*a].data().iter().map(|&v| g0 * v).collect();
                    self.accumulate(*a, &da, &mut grads, store);
                    self.accumulate(*b, &db, &mut grads, store);
                }
                Op::ScaleConst { x, k } => {
                    let dx: Vec<f64> = g.iter().map(|&v| k * v).collect();
                    self.accumulate(*x, &dx, &mut grads, store);
                }
                Op::Scale { x, s } => {
                    let k = self.nodes[*s].data()[0];
                    let dx: Vec<f64> = g.iter().map(|&v| k * v).collect();
                    let ds = [dot(&g, self.nodes[*x].data())];
                    self.accumulate(*x, &dx, &mut grads, store);
                    self.accumulate(*s, &ds, &mut grads, store);
                }
                Op::Softmax { x, axis } => {
                    let y = self.nodes[i].data();
                    let mut dx = vec![0.0; y.len()];
                    for lane in lanes(self.nodes[i].shape, *axis) {
                        let mut inner = 0.0;
                        for idx in lane.clone() {
                            inner += g[idx] * y[idx];
                        }
                        for idx in lane {
                            dx[idx] = y[idx] * (g[idx] - inner);
                        }
                    }
                    self.accumulate(*x, &dx, &mut grads, store);
                }
                Op::L2Norm(x) => {
                    let n = self.nodes[i].data()[0];
                    // Subgradient 0 at the origin; squash composes through
                    // this so that squash(0) has zero gradient.
                    if n > 0.0 {
                        let k = g[0] / n;
                        let dx: Vec<f64> = self.nodes[*x].data().iter().map(|&v| k * v).collect();
                        self.accumulate(*x, &dx, &mut grads, store);
                    }
                }
                Op::SqNorm(x) => {
                    let k = 2.0 * g[0];
                    let dx: Vec<f64> = self.nodes[*x].data().iter().map(|&v| k * v).collect();
                    self.accumulate(*x, &dx, &mut grads, store);
                }
            }
        }
        Ok(())
    }

    /// Route `g` into node `j`: interior nodes use the scratch buffer, param
    /// leaves accumulate straight into the store.
    fn accumulate(&self, j: NodeId, g: &[f64], grads: &mut [Vec<f64>], store: &mut ParamStore) {
        match self.nodes[j].op {
            Op::Const => {}
            Op::Param(id) => axpy(store.gradient_mut(id).data_mut(), 1.0, g),
            Op::ParamRow(id, row) => {
                let grad = store.gradient_mut(id);
                let cols = grad.shape()[1];
                let start = row * cols;
                axpy(&mut grad.data_mut()[start..start + cols], 1.0, g);
            }
            _ => axpy(&mut grads[j], 1.0, g),
        }
    }

    /// Shared backward for `Affine`/`MatVec`: dW += g⊗x, dx += Wᵀ·g.
    fn back_matvec(
        &self,
        w: NodeId,
        x: NodeId,
        g: &[f64],
        grads: &mut [Vec<f64>],
        store: &mut ParamStore,
    ) {
        let (m, n) = match self.nodes[w].shape {
            NShape::Matrix(m, n) => (m, n),
            _ => unreachable!("checked at record time"),
        };
        let xv = self.nodes[x].data();
        let wv = self.nodes[w].data();

        // dW
        match self.nodes[w].op {
            Op::Const => {}
            Op::Param(id) => {
                let dw = store.gradient_mut(id).data_mut();
                for r in 0..m {
                    axpy(&mut dw[r * n..(r + 1) * n], g[r], xv);
                }
            }
            Op::ParamRow(..) => unreachable!("a matrix cannot be a row leaf"),
            _ => {
                let dw = &mut grads[w];
                for r in 0..m {
                    axpy(&mut dw[r * n..(r + 1) * n], g[r], xv);
                }
            }
        }

        // dx
        let mut dx = vec![0.0; n];
        for r in 0..m {
            axpy(&mut dx, g[r], &wv[r * n..(r + 1) * n]);
        }
        self.accumulate(x, &dx, grads, store);
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index sets normalized together by softmax.
fn lanes(shape: NShape, axis: usize) -> Vec<Vec<usize>> {
    match (shape, axis) {
        (NShape::Vector(n), _) => vec![(0..n).collect()],
        (NShape::Matrix(r, c), 1) => (0..r).map(|i| (i * c..(i + 1) * c).collect()).collect(),
        (NShape::Matrix(r, c), 0) => (0..c).map(|j| (0..r).map(|i| i * c + j).collect()).collect(),
        _ => unreachable!("validated at record time"),
    }
}

fn softmax_lane(data: &mut [f64], lane: &[usize]) {
    let max = lane.iter().map(|&i| data[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &i in lane {
        data[i] = (data[i] - max).exp();
        sum += data[i];
    }
    for &i in lane {
        data[i] /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::AdamConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn activation_identities() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0]));
        let s = tape.sigmoid(x);
        let t = tape.tanh(x);
        assert_eq!(tape.value(s), &[0.5]);
        assert_eq!(tape.value(t), &[0.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        for &v in tape.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 40.0, 41.0, 39.0]).unwrap());
        let y = tape.softmax(x, 1).unwrap();
        let v = tape.value(y);
        for r in 0..2 {
            let sum: f64 = v[r * 3..(r + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(v[r * 3..(r + 1) * 3].iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn dot_hand_value() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let d = tape.dot(a, b).unwrap();
        assert_eq!(tape.value(d), &[11.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let err = tape.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn backward_of_self_dot_is_twice_the_vector() {
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let pn = tape.param(&store, p);
        let loss = tape.dot(pn, pn).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.gradient(p).data(), &[2.0, 4.0]);
    }

    #[test]
    fn unused_parameter_keeps_zero_gradient() {
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::vector(vec![1.0, 2.0]));
        let q = store.register("q", Tensor::vector(vec![3.0]));
        let mut tape = Tape::new();
        let pn = tape.param(&store, p);
        let loss = tape.dot(pn, pn).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.gradient(q).data(), &[0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let pn = tape.param(&store, p);
        assert!(matches!(
            tape.backward(pn, &mut store),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn backward_on_bare_constant_touches_nothing() {
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::vector(vec![1.0]));
        let mut tape = Tape::new();
        let c = tape.scalar(4.0);
        tape.backward(c, &mut store).unwrap();
        assert_eq!(store.gradient(p).data(), &[0.0]);
    }

    #[test]
    fn param_leaves_are_deduplicated() {
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::vector(vec![1.0]));
        let mut tape = Tape::new();
        let a = tape.param(&store, p);
        let b = tape.param(&store, p);
        assert_eq!(a, b);
    }

    /// Central finite differences on parameter `idx` of the loss rebuilt by
    /// `f`. The oracle never touches the backward pass.
    fn numeric_grad(
        store: &mut ParamStore,
        id: ParamId,
        f: &dyn Fn(&ParamStore) -> f64,
    ) -> Vec<f64> {
        let eps = 1e-5;
        let n = store.value(id).len();
        let mut out = vec![0.0; n];
        for k in 0..n {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + eps;
            let up = f(store);
            store.value_mut(id).data_mut()[k] = orig - eps;
            let down = f(store);
            store.value_mut(id).data_mut()[k] = orig;
            out[k] = (up - down) / (2.0 * eps);
        }
        out
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!(
                ((a - n) / denom).abs() < 1e-4,
                "analytic {a} vs numeric {n}"
            );
        }
    }

    /// Builds a loss exercising every op in one graph, then checks each
    /// parameter against the finite-difference oracle.
    fn full_graph_loss(store: &ParamStore) -> (Tape, NodeId) {
        let mut tape = Tape::new();
        let w = tape.param(store, ParamId(0));
        let x = tape.param(store, ParamId(1));
        let b = tape.param(store, ParamId(2));
        let y = tape.param(store, ParamId(3));
        let emb = tape.param_row(store, ParamId(4), 1).unwrap();

        let h = tape.affine(w, x, b).unwrap(); // [3]
        let hs = tape.sigmoid(h);
        let ht = tape.tanh(h);
        let hm = tape.mul(hs, ht).unwrap();
        let hr = tape.relu(h);
        let hsum = tape.add(hm, hr).unwrap();
        let hsub = tape.sub(hsum, ht).unwrap();
        let cat = tape.concat(&[hsub, y]).unwrap(); // [5]
        let sm = tape.softmax(cat, 0).unwrap();
        let lg = tape.log(sm);
        let catn = tape.l2_norm(cat);
        let sq = tape.sq_norm(lg);
        let one = tape.scalar(1.0);
        let denom = tape.add(sq, one).unwrap();
        let rec = tape.recip(denom);
        let f = tape.mul(catn, rec).unwrap();
        let scaled = tape.scale(cat, f).unwrap();
        let w2 = tape.param(store, ParamId(5));
        let mv = tape.matvec(w2, scaled).unwrap();
        let d = tape.dot(mv, mv).unwrap();
        let demb = tape.dot(emb, emb).unwrap();
        let dk = tape.scale_const(demb, 0.25);
        let loss = tape.add(d, dk).unwrap();
        (tape, loss)
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let mut reg = |name: &str, shape: Vec<usize>, store: &mut ParamStore| {
            let len: usize = shape.iter().product();
            let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.9..0.9)).collect();
            store.register(name, Tensor::new(shape, data).unwrap())
        };
        reg("w", vec![3, 4], &mut store);
        reg("x", vec![4], &mut store);
        reg("b", vec![3], &mut store);
        reg("y", vec![2], &mut store);
        reg("emb", vec![3, 2], &mut store);
        reg("w2", vec![2, 5], &mut store);

        let eval = |s: &ParamStore| {
            let (tape, loss) = full_graph_loss(s);
            tape.value(loss)[0]
        };

        let (tape, loss) = full_graph_loss(&store);
        store.zero_grad();
        tape.backward(loss, &mut store).unwrap();
        let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.gradient.data().to_vec()).collect();

        for (i, a) in analytic.iter().enumerate() {
            let n = numeric_grad(&mut store, ParamId(i), &eval);
            assert_close(a, &n);
        }
    }

    #[test]
    fn concat_routes_gradient_slices_to_the_right_inputs() {
        let mut store = ParamStore::new();
        let a = store.register("a", Tensor::vector(vec![0.3, -0.2]));
        let b = store.register("b", Tensor::vector(vec![0.7]));
        let eval = |s: &ParamStore| {
            let mut tape = Tape::new();
            let an = tape.param(s, a);
            let bn = tape.param(s, b);
            let cat = tape.concat(&[an, bn]).unwrap();
            let w = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
            let wc = tape.mul(cat, w).unwrap();
            let loss = tape.dot(wc, wc).unwrap();
            (tape, loss)
        };
        let (tape, loss) = eval(&store);
        tape.backward(loss, &mut store).unwrap();
        let ga = store.gradient(a).data().to_vec();
        let gb = store.gradient(b).data().to_vec();
        let na = numeric_grad(&mut store, a, &|s| {
            let (t, l) = eval(s);
            t.value(l)[0]
        });
        let nb = numeric_grad(&mut store, b, &|s| {
            let (t, l) = eval(s);
            t.value(l)[0]
        });
        assert_close(&ga, &na);
        assert_close(&gb, &nb);
    }

    #[test]
    fn embedding_row_gradient_lands_on_that_row_only() {
        let mut store = ParamStore::new();
        let emb = store.register(
            "emb",
            Tensor::new(vec![3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap(),
        );
        let mut tape = Tape::new();
        let row = tape.param_row(&store, emb, 1).unwrap();
        let loss = tape.dot(row, row).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.gradient(emb).data(), &[0.0, 0.0, 0.6, 0.8, 0.0, 0.0]);
    }

    #[test]
    fn three_layer_composite_random_gradient_check() {
        // Random affine -> tanh -> affine -> sigmoid -> squared-norm stack,
        // dimensions <= 8, repeated over several seeds.
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let mut reg = |name: &str, shape: Vec<usize>, store: &mut ParamStore| {
                let len: usize = shape.iter().product();
                let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.8..0.8)).collect();
                store.register(name, Tensor::new(shape, data).unwrap())
            };
            reg("w1", vec![5, 4], &mut store);
            reg("b1", vec![5], &mut store);
            reg("w2", vec![3, 5], &mut store);
            reg("b2", vec![3], &mut store);
            reg("x", vec![4], &mut store);

            let eval = |s: &ParamStore| {
                let mut tape = Tape::new();
                let w1 = tape.param(s, ParamId(0));
                let b1 = tape.param(s, ParamId(1));
                let w2 = tape.param(s, ParamId(2));
                let b2 = tape.param(s, ParamId(3));
                let x = tape.param(s, ParamId(4));
                let h1 = tape.affine(w1, x, b1).unwrap();
                let a1 = tape.tanh(h1);
                let h2 = tape.affine(w2, a1, b2).unwrap();
                let a2 = tape.sigmoid(h2);
                let loss = tape.sq_norm(a2);
                (tape, loss)
            };

            let (tape, loss) = eval(&store);
            tape.backward(loss, &mut store).unwrap();
            let analytic: Vec<Vec<f64>> =
                store.iter().map(|p| p.gradient.data().to_vec()).collect();
            for (i, a) in analytic.iter().enumerate() {
                let n = numeric_grad(&mut store, ParamId(i), &|s| {
                    let (t, l) = eval(s);
                    t.value(l)[0]
                });
                assert_close(a, &n);
            }
        }
    }

    #[test]
    fn forward_and_gradients_are_bit_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut store = ParamStore::new();
            let w = store.register_uniform("w", vec![4, 4], 0.08, &mut rng);
            let x = store.register_uniform("x", vec![4], 0.08, &mut rng);
            let mut tape = Tape::new();
            let wn = tape.param(&store, w);
            let xn = tape.param(&store, x);
            let h = tape.matvec(wn, xn).unwrap();
            let t = tape.tanh(h);
            let loss = tape.sq_norm(t);
            tape.backward(loss, &mut store).unwrap();
            let bits: Vec<u64> = tape
                .value(loss)
                .iter()
                .chain(store.gradient(w).data())
                .chain(store.gradient(x).data())
                .map(|f| f.to_bits())
                .collect();
            bits
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_trains_a_tiny_quadratic() {
        // Minimize ||p - t||^2; Adam with defaults should approach t.
        let mut store = ParamStore::new();
        let p = store.register("p", Tensor::vector(vec![2.0, -1.0]));
        let target = Tensor::vector(vec![0.4, 0.6]);
        for _ in 0..4000 {
            let mut tape = Tape::new();
            let pn = tape.param(&store, p);
            let t = tape.constant(target.clone());
            let d = tape.sub(pn, t).unwrap();
            let loss = tape.sq_norm(d);
            store.zero_grad();
            tape.backward(loss, &mut store).unwrap();
            store.adam_step(&AdamConfig::default());
        }
        let v = store.value(p).data();
        assert!((v[0] - 0.4).abs() < 5e-3 && (v[1] - 0.6).abs() < 5e-3, "{v:?}");
    }
}
