//! Eager tape for reverse-mode differentiation.
//!
//! Every primitive computes its value immediately and records an op node.
//! Nodes are appended in execution order, which is a topological order, so
//! `backward` is a single reverse sweep. A node only carries gradient when
//! one of its inputs does; constants (data, targets, frozen parameters) stop
//! the sweep.

use super::array::{numel, strides, Array};
use super::kernels::{self, ConvGeom};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    MatMul(NodeId, NodeId),
    Conv {
        input: NodeId,
        kernel: NodeId,
        geom: ConvGeom,
    },
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Log {
        input: NodeId,
        floor: f64,
    },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumAxis {
        input: NodeId,
        axis: usize,
    },
    MeanAxis {
        input: NodeId,
        axis: usize,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        input: NodeId,
        axis: usize,
        start: usize,
    },
    L2Normalize {
        input: NodeId,
        eps: f64,
    },
    Affine {
        input: NodeId,
        scale: Option<NodeId>,
        shift: Option<NodeId>,
        axis: usize,
    },
    Reshape(NodeId),
    Permute {
        input: NodeId,
        perm: Vec<usize>,
    },
    Gather {
        input: NodeId,
        indices: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Array,
    requires_grad: bool,
}

/// Recorded computation. Confined to one thread for its lifetime.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// `(outer, mid, inner)` sizes around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn last_axis(shape: &[usize]) -> (usize, usize) {
    let d = *shape.last().unwrap_or(&1);
    let rows = numel(shape).checked_div(d).unwrap_or(0);
    (rows, d)
}

fn broadcast_shape(op: &str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    match (numel(a), numel(b)) {
        (1, 1) => Ok(if a.len() >= b.len() {
            a.to_vec()
        } else {
            b.to_vec()
        }),
        (1, _) => Ok(b.to_vec()),
        (_, 1) => Ok(a.to_vec()),
        _ => Err(Error::contract(format!(
            "{op}: shapes {a:?} and {b:?} differ"
        ))),
    }
}

#[inline]
fn at(a: &Array, i: usize) -> f64 {
    let d = a.data();
    if d.len() == 1 {
        d[0]
    } else {
        d[i]
    }
}

/// Reduces an elementwise gradient onto an operand that may have been
/// broadcast from a single value.
fn unbroadcast(operand: &Array, g: Vec<f64>) -> Array {
    if operand.len() == g.len() {
        Array::new(operand.shape().to_vec(), g).expect("shape preserved")
    } else {
        Array::new(operand.shape().to_vec(), vec![g.iter().sum()]).expect("scalar operand")
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row.
pub(crate) fn softmax_row(x: &[f64], out: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = libm::exp(v - m);
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn log_softmax_row(x: &[f64], out: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = x.iter().map(|&v| libm::exp(v - m)).sum();
    let lse = m + libm::log(s);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
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

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Array, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// Differentiable input (a trainable parameter or a variable under test).
    pub fn leaf(&mut self, value: Array) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Input that never receives gradient.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    fn binary(
        &mut self,
        name: &str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Array> {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(name, va.shape(), vb.shape())?;
        let n = numel(&shape);
        Array::new(shape, (0..n).map(|i| f(at(va, i), at(vb, i))).collect())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Sub(a, b), v, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary("div", a, b, |x, y| x / y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Div(a, b), v, rg))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(Op::AddScalar(a), v, rg)
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(Op::MulScalar(a, c), v, rg)
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::contract(format!(
                "matmul: shapes {sa:?} and {sb:?} incompatible"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let v = Array::new(vec![m, n], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), v, rg))
    }

    /// 3-D cross-correlation. `input` is `[N, C, T, H, W]` (or unbatched
    /// `[C, T, H, W]`), `kernel` is `[C', C, kt, kh, kw]`.
    pub fn conv3d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<NodeId> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        if sk.len() != 5 {
            return Err(Error::contract(format!(
                "conv3d: kernel must be 5-D, got {sk:?}"
            )));
        }
        let (dims, batched) = match si.len() {
            5 => ([si[0], si[1], si[2], si[3], si[4]], true),
            4 => ([1, si[0], si[1], si[2], si[3]], false),
            _ => {
                return Err(Error::contract(format!(
                    "conv3d: input must be 4-D or 5-D, got {si:?}"
                )))
            }
        };
        let geom = ConvGeom::new(dims, [sk[0], sk[1], sk[2], sk[3], sk[4]], stride, pad)?;
        let data =
            kernels::conv_forward(&geom, self.value(input).data(), self.value(kernel).data());
        let shape = if batched {
            vec![geom.n, geom.c_out, geom.to, geom.ho, geom.wo]
        } else {
            vec![geom.c_out, geom.to, geom.ho, geom.wo]
        };
        let v = Array::new(shape, data)?;
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(
            Op::Conv {
                input,
                kernel,
                geom,
            },
            v,
            rg,
        ))
    }

    /// 2-D cross-correlation. `input` is `[N, C, H, W]`, `kernel` is `[C', C, kh, kw]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: [usize; 2],
        pad: [usize; 2],
    ) -> Result<NodeId> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        if si.len() != 4 || sk.len() != 4 {
            return Err(Error::contract(format!(
                "conv2d: expected 4-D input and kernel, got {si:?} and {sk:?}"
            )));
        }
        let geom = ConvGeom::new(
            [si[0], si[1], 1, si[2], si[3]],
            [sk[0], sk[1], 1, sk[2], sk[3]],
            [1, stride[0], stride[1]],
            [0, pad[0], pad[1]],
        )?;
        let data =
            kernels::conv_forward(&geom, self.value(input).data(), self.value(kernel).data());
        let v = Array::new(vec![geom.n, geom.c_out, geom.ho, geom.wo], data)?;
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(
            Op::Conv {
                input,
                kernel,
                geom,
            },
            v,
            rg,
        ))
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(op, v, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| if x < 0.0 { 0.0 } else { x })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), libm::tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// `ln(max(x, floor))`; no gradient flows where the floor is active.
    pub fn log(&mut self, a: NodeId, floor: f64) -> NodeId {
        self.unary(a, Op::Log { input: a, floor }, |x| libm::log(x.max(floor)))
    }

    fn rowwise(&mut self, a: NodeId, op: Op, f: fn(&[f64], &mut [f64])) -> NodeId {
        let x = self.value(a);
        let (rows, d) = last_axis(x.shape());
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            f(&x.data()[r * d..(r + 1) * d], &mut out[r * d..(r + 1) * d]);
        }
        let v = Array::new(x.shape().to_vec(), out).expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(op, v, rg)
    }

    /// Softmax over the last axis (max-subtracted).
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        self.rowwise(a, Op::Softmax(a), softmax_row)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        self.rowwise(a, Op::LogSoftmax(a), log_softmax_row)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Array::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), v, rg)
    }

    /// Mean of all elements. The mean of an empty array is 0.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let m = if x.is_empty() {
            0.0
        } else {
            x.sum() / x.len() as f64
        };
        let rg = self.rg(&[a]);
        self.push(Op::Mean(a), Array::scalar(m), rg)
    }

    fn reduce_axis(&self, a: NodeId, axis: usize, scale_by_len: bool) -> Result<Array> {
        let x = self.value(a);
        if axis >= x.ndim() {
            return Err(Error::contract(format!(
                "axis {axis} out of range for {:?}",
                x.shape()
            )));
        }
        let (outer, mid, inner) = split_at_axis(x.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let src = &x.data()[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                kernels::axpy(&mut out[o * inner..(o + 1) * inner], 1.0, src);
            }
        }
        if scale_by_len && mid > 0 {
            for v in &mut out {
                *v /= mid as f64;
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        Array::new(shape, out)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let v = self.reduce_axis(a, axis, false)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::SumAxis { input: a, axis }, v, rg))
    }

    /// Mean over one axis, removing it.
    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let v = self.reduce_axis(a, axis, true)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::MeanAxis { input: a, axis }, v, rg))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::contract("concat of zero arrays"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::contract(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for &i in inputs {
            let s = self.shape(i);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::contract(format!(
                    "concat: {s:?} incompatible with {base:?} on axis {axis}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in inputs {
                let x = self.value(i);
                let mid = x.shape()[axis];
                out.extend_from_slice(&x.data()[o * mid * inner..(o + 1) * mid * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Array::new(shape, out)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            v,
            rg,
        ))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let x = self.value(a);
        if axis >= x.ndim() || start + len > x.shape()[axis] {
            return Err(Error::contract(format!(
                "slice [{start}, {}) on axis {axis} of {:?}",
                start + len,
                x.shape()
            )));
        }
        let (outer, mid, inner) = split_at_axis(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * mid + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let v = Array::new(shape, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            Op::Slice {
                input: a,
                axis,
                start,
            },
            v,
            rg,
        ))
    }

    /// `x / max(‖x‖₂, eps)` over the last axis.
    pub fn l2_normalize(&mut self, a: NodeId, eps: f64) -> NodeId {
        let x = self.value(a);
        let (rows, d) = last_axis(x.shape());
        let mut out = x.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * d..(r + 1) * d];
            let n = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>()).max(eps);
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        let v = Array::new(x.shape().to_vec(), out).expect("shape preserved");
        let rg = self.rg(&[a]);
        self.push(Op::L2Normalize { input: a, eps }, v, rg)
    }

    /// `x·scale[c] + shift[c]` where `c` indexes `axis`; either part may be absent.
    pub fn affine(
        &mut self,
        a: NodeId,
        scale: Option<NodeId>,
        shift: Option<NodeId>,
        axis: usize,
    ) -> Result<NodeId> {
        let x = self.value(a);
        if axis >= x.ndim() {
            return Err(Error::contract(format!(
                "affine axis {axis} out of range for {:?}",
                x.shape()
            )));
        }
        let (outer, mid, inner) = split_at_axis(x.shape(), axis);
        for p in [scale, shift].into_iter().flatten() {
            if self.shape(p) != [mid] {
                return Err(Error::contract(format!(
                    "affine parameter shape {:?}, expected [{mid}]",
                    self.shape(p)
                )));
            }
        }
        let sc = scale.map(|s| self.value(s).data());
        let sh = shift.map(|s| self.value(s).data());
        let mut out = x.data().to_vec();
        for o in 0..outer {
            for m in 0..mid {
                let (k, b) = (sc.map_or(1.0, |s| s[m]), sh.map_or(0.0, |s| s[m]));
                for v in &mut out[(o * mid + m) * inner..(o * mid + m + 1) * inner] {
                    *v = *v * k + b;
                }
            }
        }
        let v = Array::new(x.shape().to_vec(), out)?;
        let mut ids = vec![a];
        ids.extend(scale);
        ids.extend(shift);
        let rg = self.rg(&ids);
        Ok(self.push(
            Op::Affine {
                input: a,
                scale,
                shift,
                axis,
            },
            v,
            rg,
        ))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Reshape(a), v, rg))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: NodeId, perm: &[usize]) -> Result<NodeId> {
        let x = self.value(a);
        let nd = x.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd
            || perm
                .iter()
                .any(|&p| p >= nd || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::contract(format!(
                "invalid permutation {perm:?} for {:?}",
                x.shape()
            )));
        }
        let data = permute_data(x.data(), x.shape(), perm);
        let shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
        let v = Array::new(shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            Op::Permute {
                input: a,
                perm: perm.to_vec(),
            },
            v,
            rg,
        ))
    }

    /// Selects entries along axis 0.
    pub fn gather(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let x = self.value(a);
        if x.ndim() == 0 {
            return Err(Error::contract("gather on a zero-dimensional array"));
        }
        let rows = x.shape()[0];
        let inner = x.len().checked_div(rows).unwrap_or(0);
        let mut out = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            if i >= rows {
                return Err(Error::contract(format!(
                    "gather index {i} out of range {rows}"
                )));
            }
            out.extend_from_slice(&x.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = indices.len();
        let v = Array::new(shape, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            Op::Gather {
                input: a,
                indices: indices.to_vec(),
            },
            v,
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Every leaf gets a gradient (zeros
    /// when the loss does not depend on it).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Array::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let mut acc = |id: NodeId, delta: Array| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let val = |id: NodeId| &self.nodes[id.0].value;
        let gd = g.data();
        let elementwise = |src: &Array, f: &dyn Fn(usize, f64) -> f64| -> Array {
            Array::new(
                src.shape().to_vec(),
                gd.iter().enumerate().map(|(i, &gi)| f(i, gi)).collect(),
            )
            .expect("shape preserved")
        };

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                acc(*a, unbroadcast(val(*a), gd.to_vec()));
                acc(*b, unbroadcast(val(*b), gd.to_vec()));
            }
            Op::Sub(a, b) => {
                acc(*a, unbroadcast(val(*a), gd.to_vec()));
                acc(*b, unbroadcast(val(*b), gd.iter().map(|v| -v).collect()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(
                    *a,
                    unbroadcast(
                        va,
                        gd.iter()
                            .enumerate()
                            .map(|(i, &gi)| gi * at(vb, i))
                            .collect(),
                    ),
                );
                acc(
                    *b,
                    unbroadcast(
                        vb,
                        gd.iter()
                            .enumerate()
                            .map(|(i, &gi)| gi * at(va, i))
                            .collect(),
                    ),
                );
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(
                    *a,
                    unbroadcast(
                        va,
                        gd.iter()
                            .enumerate()
                            .map(|(i, &gi)| gi / at(vb, i))
                            .collect(),
                    ),
                );
                acc(
                    *b,
                    unbroadcast(
                        vb,
                        gd.iter()
                            .enumerate()
                            .map(|(i, &gi)| {
                                let d = at(vb, i);
                                -gi * at(va, i) / (d * d)
                            })
                            .collect(),
                    ),
                );
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MulScalar(a, c) => acc(*a, g.map(|v| v * c)),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    acc(
                        *a,
                        Array::new(vec![m, k], kernels::matmul_grad_a(gd, vb.data(), m, k, n))?,
                    );
                }
                if self.nodes[b.0].requires_grad {
                    acc(
                        *b,
                        Array::new(vec![k, n], kernels::matmul_grad_b(va.data(), gd, m, k, n))?,
                    );
                }
            }
            Op::Conv {
                input,
                kernel,
                geom,
            } => {
                let (vi, vk) = (val(*input), val(*kernel));
                let (di, dk) = kernels::conv_backward(
                    geom,
                    vi.data(),
                    vk.data(),
                    gd,
                    self.nodes[input.0].requires_grad,
                    self.nodes[kernel.0].requires_grad,
                );
                if let Some(di) = di {
                    acc(*input, Array::new(vi.shape().to_vec(), di)?);
                }
                if let Some(dk) = dk {
                    acc(*kernel, Array::new(vk.shape().to_vec(), dk)?);
                }
            }
            Op::Relu(a) => {
                let x = val(*a);
                acc(
                    *a,
                    elementwise(x, &|i, gi| if x.data()[i] > 0.0 { gi } else { 0.0 }),
                );
            }
            Op::Tanh(a) => acc(
                *a,
                elementwise(y, &|i, gi| gi * (1.0 - y.data()[i] * y.data()[i])),
            ),
            Op::Sigmoid(a) => acc(
                *a,
                elementwise(y, &|i, gi| gi * y.data()[i] * (1.0 - y.data()[i])),
            ),
            Op::Square(a) => {
                let x = val(*a);
                acc(*a, elementwise(x, &|i, gi| 2.0 * x.data()[i] * gi));
            }
            Op::Abs(a) => {
                let x = val(*a);
                acc(
                    *a,
                    elementwise(x, &|i, gi| {
                        let v = x.data()[i];
                        if v > 0.0 {
                            gi
                        } else if v < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Log { input, floor } => {
                let x = val(*input);
                acc(
                    *input,
                    elementwise(x, &|i, gi| {
                        let v = x.data()[i];
                        if v > *floor {
                            gi / v
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Softmax(a) => {
                let (rows, d) = last_axis(y.shape());
                let mut out = vec![0.0; y.len()];
                for r in 0..rows {
                    let (yr, gr) = (&y.data()[r * d..(r + 1) * d], &gd[r * d..(r + 1) * d]);
                    let s = kernels::dot(yr, gr);
                    for j in 0..d {
                        out[r * d + j] = yr[j] * (gr[j] - s);
                    }
                }
                acc(*a, Array::new(y.shape().to_vec(), out)?);
            }
            Op::LogSoftmax(a) => {
                let (rows, d) = last_axis(y.shape());
                let mut out = vec![0.0; y.len()];
                for r in 0..rows {
                    let gr = &gd[r * d..(r + 1) * d];
                    let s: f64 = gr.iter().sum();
                    for j in 0..d {
                        out[r * d + j] = gr[j] - libm::exp(y.data()[r * d + j]) * s;
                    }
                }
                acc(*a, Array::new(y.shape().to_vec(), out)?);
            }
            Op::Sum(a) => acc(*a, Array::full(val(*a).shape(), gd[0])),
            Op::Mean(a) => {
                let x = val(*a);
                let n = x.len().max(1) as f64;
                acc(*a, Array::full(x.shape(), gd[0] / n));
            }
            Op::SumAxis { input, axis } | Op::MeanAxis { input, axis } => {
                let x = val(*input);
                let (outer, mid, inner) = split_at_axis(x.shape(), *axis);
                let scale = if matches!(node.op, Op::MeanAxis { .. }) && mid > 0 {
                    1.0 / mid as f64
                } else {
                    1.0
                };
                let mut out = vec![0.0; x.len()];
                for o in 0..outer {
                    for m in 0..mid {
                        for i in 0..inner {
                            out[(o * mid + m) * inner + i] = gd[o * inner + i] * scale;
                        }
                    }
                }
                acc(*input, Array::new(x.shape().to_vec(), out)?);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_at_axis(y.shape(), *axis);
                let mut offset = 0;
                for &i in inputs {
                    let x = val(i);
                    let mid = x.shape()[*axis];
                    let mut out = Vec::with_capacity(x.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        out.extend_from_slice(&gd[base..base + mid * inner]);
                    }
                    offset += mid;
                    acc(i, Array::new(x.shape().to_vec(), out)?);
                }
            }
            Op::Slice { input, axis, start } => {
                let x = val(*input);
                let (outer, mid, inner) = split_at_axis(x.shape(), *axis);
                let len = y.shape()[*axis];
                let mut out = vec![0.0; x.len()];
                for o in 0..outer {
                    let dst = (o * mid + start) * inner;
                    out[dst..dst + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                acc(*input, Array::new(x.shape().to_vec(), out)?);
            }
            Op::L2Normalize { input, eps } => {
                let x = val(*input);
                let (rows, d) = last_axis(x.shape());
                let mut out = vec![0.0; x.len()];
                for r in 0..rows {
                    let xr = &x.data()[r * d..(r + 1) * d];
                    let (yr, gr) = (&y.data()[r * d..(r + 1) * d], &gd[r * d..(r + 1) * d]);
                    let n = libm::sqrt(xr.iter().map(|v| v * v).sum::<f64>());
                    if n > *eps {
                        let s = kernels::dot(yr, gr);
                        for j in 0..d {
                            out[r * d + j] = (gr[j] - yr[j] * s) / n;
                        }
                    } else {
                        for j in 0..d {
                            out[r * d + j] = gr[j] / eps;
                        }
                    }
                }
                acc(*input, Array::new(x.shape().to_vec(), out)?);
            }
            Op::Affine {
                input,
                scale,
                shift,
                axis,
            } => {
                let x = val(*input);
                let (outer, mid, inner) = split_at_axis(x.shape(), *axis);
                let sc = scale.map(|s| val(s).data());
                if self.nodes[input.0].requires_grad {
                    let mut out = gd.to_vec();
                    if let Some(sc) = sc {
                        for o in 0..outer {
                            for m in 0..mid {
                                for v in &mut out[(o * mid + m) * inner..(o * mid + m + 1) * inner]
                                {
                                    *v *= sc[m];
                                }
                            }
                        }
                    }
                    acc(*input, Array::new(x.shape().to_vec(), out)?);
                }
                let mut gscale = vec![0.0; mid];
                let mut gshift = vec![0.0; mid];
                for o in 0..outer {
                    for m in 0..mid {
                        let r = (o * mid + m) * inner..(o * mid + m + 1) * inner;
                        gscale[m] += kernels::dot(&gd[r.clone()], &x.data()[r.clone()]);
                        gshift[m] += gd[r].iter().sum::<f64>();
                    }
                }
                if let Some(s) = scale {
                    acc(*s, Array::from_vec(gscale));
                }
                if let Some(s) = shift {
                    acc(*s, Array::from_vec(gshift));
                }
            }
            Op::Reshape(a) => acc(*a, g.clone().reshape(val(*a).shape())?),
            Op::Permute { input, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let data = permute_data(gd, y.shape(), &inverse);
                acc(*input, Array::new(val(*input).shape().to_vec(), data)?);
            }
            Op::Gather { input, indices } => {
                let x = val(*input);
                let rows = x.shape()[0];
                let inner = x.len().checked_div(rows).unwrap_or(0);
                let mut out = vec![0.0; x.len()];
                for (k, &i) in indices.iter().enumerate() {
                    kernels::axpy(
                        &mut out[i * inner..(i + 1) * inner],
                        1.0,
                        &gd[k * inner..(k + 1) * inner],
                    );
                }
                acc(*input, Array::new(x.shape().to_vec(), out)?);
            }
        }
        Ok(())
    }
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let nd = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    if nd == 0 {
        out.push(data[0]);
        return out;
    }
    // Copy runs along the innermost output axis.
    let last = nd - 1;
    let run = out_shape[last];
    let run_stride = src_strides[last];
    let mut idx = vec![0usize; nd];
    loop {
        let base: usize = (0..last).map(|d| idx[d] * src_strides[d]).sum();
        if run_stride == 1 {
            out.extend_from_slice(&data[base..base + run]);
        } else {
            out.extend((0..run).map(|j| data[base + j * run_stride]));
        }
        let mut d = last;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Free-function form of [`Graph::backward`].
pub fn backward(graph: &Graph, loss: NodeId) -> Result<Gradients> {
    graph.backward(loss)
}
