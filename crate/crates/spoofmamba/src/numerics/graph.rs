//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! A [`Graph`] owns the forward values; every op validates shapes, runs its
//! kernel, checks the result for NaN/Inf (non-finite values are a hard error,
//! never silently propagated), and records what backward needs. `backward`
//! walks the tape once in reverse, which is reverse topological order by
//! construction.

use std::sync::Arc;

use super::kernels;
use super::{broadcast_shape, broadcast_strides, el, Element, Tensor};
use crate::{Error, Result};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Neg,
    Abs,
    Exp,
    Ln,
    Sqrt,
    Sigmoid,
    Silu,
    Selu,
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Standard SeLU constants.
pub const SELU_ALPHA: f64 = 1.6732632423543772;
pub const SELU_LAMBDA: f64 = 1.0507009873554805;

/// Domain-specific op plugged into the tape (sinc kernel synthesis, the
/// selective scan). The forward value is computed by the caller; the trait
/// only has to map the output gradient back onto the inputs.
pub trait CustomOp<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;
    /// `needs[i]` tells whether input `i` requires a gradient.
    fn backward(
        &self,
        saved: &[Tensor<T>],
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

struct Conv1dMeta {
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad_l: usize,
    pad_r: usize,
    groups: usize,
}

struct Conv2dMeta {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    pad: usize,
}

enum Op<T: Element> {
    Leaf,
    Unary { kind: UnaryKind, input: NodeId },
    Binary { kind: BinaryKind, lhs: NodeId, rhs: NodeId },
    AddScalar { input: NodeId },
    MulScalar { input: NodeId, c: T },
    Matmul { a: NodeId, b: NodeId },
    Conv1d { x: NodeId, w: NodeId, meta: Conv1dMeta },
    Conv2d { x: NodeId, w: NodeId, meta: Conv2dMeta },
    MaxPoolLast { input: NodeId, arg: Vec<u32> },
    MaxPool2d { input: NodeId, arg: Vec<u32> },
    Softmax { input: NodeId, axis: usize },
    LayerNorm { input: NodeId, gamma: NodeId, beta: NodeId, axis: usize, xhat: Tensor<T>, inv_std: Vec<T> },
    BatchNormTrain { input: NodeId, gamma: NodeId, beta: NodeId, xhat: Tensor<T>, inv_std: Vec<T> },
    BatchNormEval { input: NodeId, gamma: NodeId, beta: NodeId, xhat: Tensor<T>, inv_std: Vec<T> },
    SumAxis { input: NodeId, axis: usize },
    SumAll { input: NodeId },
    Reshape { input: NodeId },
    Transpose2d { input: NodeId },
    Flip { input: NodeId, axis: usize },
    Concat { inputs: Vec<NodeId>, axis: usize },
    Narrow { input: NodeId, axis: usize, start: usize },
    Custom { op: Arc<dyn CustomOp<T>>, inputs: Vec<NodeId>, saved: Vec<Tensor<T>> },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-channel statistics observed by a batch-normalization op in training
/// mode; the owner folds them into running statistics.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients produced by a backward pass, indexed by node id.
pub struct Grads<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Grads<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), consumed: false }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        self.nodes.len() - 1
    }

    fn push_checked(
        &mut self,
        value: Tensor<T>,
        op: Op<T>,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<NodeId> {
        value.check_finite(name)?;
        Ok(self.push(value, op, requires_grad))
    }

    /// Insert a tensor as a leaf. Gradients accumulate on it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Non-differentiable constant.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: T) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    // -- elementwise ---------------------------------------------------------

    pub fn unary(&mut self, kind: UnaryKind, input: NodeId) -> Result<NodeId> {
        let x = self.nodes[input].value.clone();
        let out = x.map(|v| unary_eval(kind, v));
        let rg = self.nodes[input].requires_grad;
        self.push_checked(out, Op::Unary { kind, input }, rg, unary_name(kind))
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Neg, x)
    }
    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Abs, x)
    }
    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Exp, x)
    }
    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Ln, x)
    }
    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Sqrt, x)
    }
    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Sigmoid, x)
    }
    pub fn silu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Silu, x)
    }
    pub fn selu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Selu, x)
    }
    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn binary(&mut self, kind: BinaryKind, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let (a, b) = (&self.nodes[lhs].value, &self.nodes[rhs].value);
        let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::ShapeMismatch {
            op: binary_name(kind),
            detail: format!("{:?} not broadcastable with {:?}", a.shape(), b.shape()),
        })?;
        let out = if a.shape() == b.shape() {
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| binary_eval(kind, x, y))
                .collect();
            Tensor::from_vec(out_shape, data)
        } else {
            let sa = broadcast_strides(a.shape(), &out_shape);
            let sb = broadcast_strides(b.shape(), &out_shape);
            let n: usize = out_shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut idx = vec![0usize; out_shape.len()];
            let (mut oa, mut ob) = (0usize, 0usize);
            for _ in 0..n {
                data.push(binary_eval(kind, a.data()[oa], b.data()[ob]));
                for d in (0..out_shape.len()).rev() {
                    idx[d] += 1;
                    oa += sa[d];
                    ob += sb[d];
                    if idx[d] < out_shape[d] {
                        break;
                    }
                    idx[d] = 0;
                    oa -= sa[d] * out_shape[d];
                    ob -= sb[d] * out_shape[d];
                }
            }
            Tensor::from_vec(out_shape, data)
        };
        let rg = self.nodes[lhs].requires_grad || self.nodes[rhs].requires_grad;
        self.push_checked(out, Op::Binary { kind, lhs, rhs }, rg, binary_name(kind))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Add, a, b)
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Mul, a, b)
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn add_scalar(&mut self, input: NodeId, c: T) -> Result<NodeId> {
        let out = self.nodes[input].value.map(|v| v + c);
        let rg = self.nodes[input].requires_grad;
        self.push_checked(out, Op::AddScalar { input }, rg, "add_scalar")
    }

    pub fn mul_scalar(&mut self, input: NodeId, c: T) -> Result<NodeId> {
        let out = self.nodes[input].value.map(|v| v * c);
        let rg = self.nodes[input].requires_grad;
        self.push_checked(out, Op::MulScalar { input, c }, rg, "mul_scalar")
    }

    // -- linear algebra ------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = Tensor::from_vec(vec![m, n], kernels::matmul(ta.data(), tb.data(), m, k, n));
        let rg = self.nodes[a].requires_grad || self.nodes[b].requires_grad;
        self.push_checked(out, Op::Matmul { a, b }, rg, "matmul")
    }

    /// x: (c_in, l), w: (c_out, c_in/groups, k).
    #[allow(clippy::too_many_arguments)]
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad_l: usize,
        pad_r: usize,
        groups: usize,
    ) -> Result<NodeId> {
        let (tx, tw) = (&self.nodes[x].value, &self.nodes[w].value);
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 2 || sw.len() != 3 || sx[0] % groups != 0 || sw[1] != sx[0] / groups {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                detail: format!("x {sx:?}, w {sw:?}, groups {groups}"),
            });
        }
        let meta = Conv1dMeta {
            c_in: sx[0],
            l: sx[1],
            c_out: sw[0],
            k: sw[2],
            stride,
            pad_l,
            pad_r,
            groups,
        };
        if meta.l + pad_l + pad_r < meta.k {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                detail: format!("kernel {} larger than padded input {}", meta.k, meta.l + pad_l + pad_r),
            });
        }
        if meta.c_out % groups != 0 {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                detail: format!("c_out {} not divisible by groups {groups}", meta.c_out),
            });
        }
        let l_out = kernels::conv1d_out_len(meta.l, meta.k, stride, pad_l, pad_r);
        let data = kernels::conv1d(
            tx.data(), tw.data(), meta.c_in, meta.l, meta.c_out, meta.k, stride, pad_l, pad_r, groups,
        );
        let out = Tensor::from_vec(vec![meta.c_out, l_out], data);
        let rg = self.nodes[x].requires_grad || self.nodes[w].requires_grad;
        self.push_checked(out, Op::Conv1d { x, w, meta }, rg, "conv1d")
    }

    /// x: (c_in, h, w), k: (c_out, c_in, kh, kw), stride 1, symmetric padding.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, pad: usize) -> Result<NodeId> {
        let (tx, tw) = (&self.nodes[x].value, &self.nodes[w].value);
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: format!("x {sx:?}, w {sw:?}"),
            });
        }
        if sx[1] + 2 * pad < sw[2] || sx[2] + 2 * pad < sw[3] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                detail: "kernel larger than padded input".into(),
            });
        }
        let meta = Conv2dMeta {
            c_in: sx[0],
            h: sx[1],
            w: sx[2],
            c_out: sw[0],
            kh: sw[2],
            kw: sw[3],
            pad,
        };
        let ho = meta.h + 2 * pad - meta.kh + 1;
        let wo = meta.w + 2 * pad - meta.kw + 1;
        let data = kernels::conv2d(
            tx.data(), tw.data(), meta.c_in, meta.h, meta.w, meta.c_out, meta.kh, meta.kw, pad,
        );
        let out = Tensor::from_vec(vec![meta.c_out, ho, wo], data);
        let rg = self.nodes[x].requires_grad || self.nodes[w].requires_grad;
        self.push_checked(out, Op::Conv2d { x, w, meta }, rg, "conv2d")
    }

    // -- pooling -------------------------------------------------------------

    /// Non-overlapping max pool over the last axis of a 2-D tensor.
    pub fn maxpool_last(&mut self, input: NodeId, w: usize) -> Result<NodeId> {
        let t = &self.nodes[input].value;
        let s = t.shape();
        if s.len() != 2 || s[1] < w || w == 0 {
            return Err(Error::ShapeMismatch {
                op: "maxpool_last",
                detail: format!("shape {s:?}, window {w}"),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let (data, arg) = kernels::maxpool_last(t.data(), rows, cols, w);
        let out = Tensor::from_vec(vec![rows, cols / w], data);
        let rg = self.nodes[input].requires_grad;
        self.push_checked(out, Op::MaxPoolLast { input, arg }, rg, "maxpool_last")
    }

    /// Non-overlapping max pool over the (f, t) plane of a (c, f, t) tensor.
    pub fn maxpool2d(&mut self, input: NodeId, wf: usize, wt: usize) -> Result<NodeId> {
        let t = &self.nodes[input].value;
        let s = t.shape();
        if s.len() != 3 || s[1] < wf || s[2] < wt || wf == 0 || wt == 0 {
            return Err(Error::ShapeMismatch {
                op: "maxpool2d",
                detail: format!("shape {s:?}, window ({wf},{wt})"),
            });
        }
        if wf == 1 && wt == 1 {
            return self.reshape(input, s.to_vec());
        }
        let (c, f, tt) = (s[0], s[1], s[2]);
        let (data, arg) = kernels::maxpool_2d(t.data(), c, f, tt, wf, wt);
        let out = Tensor::from_vec(vec![c, f / wf, tt / wt], data);
        let rg = self.nodes[input].requires_grad;
        self.push_checked(out, Op::MaxPool2d { input, arg }, rg, "maxpool2d")
    }

    // -- normalizations ------------------------------------------------------

    /// Softmax along `axis`, subtracting the axis max before exponentiation.
    pub fn softmax(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        let t = &self.nodes[input].value;
        let s = t.shape().to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                detail: format!("axis {axis} invalid or empty for shape {s:?}"),
            });
        }
        let (outer, len, inner) = kernels::axis_split(&s, axis);
        let x = t.data();
        let mut data = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let mut mx = x[at(0)];
                for a in 1..len {
                    if x[at(a)] > mx {
                        mx = x[at(a)];
                    }
                }
                let mut denom = T::zero();
                for a in 0..len {
                    let e = (x[at(a)] - mx).exp();
                    data[at(a)] = e;
                    denom = denom + e;
                }
                for a in 0..len {
                    data[at(a)] = data[at(a)] / denom;
                }
            }
        }
        let out = Tensor::from_vec(s, data);
        let rg = self.nodes[input].requires_grad;
        self.push_checked(out, Op::Softmax { input, axis }, rg, "softmax")
    }

    /// Layer normalization along `axis` with affine parameters shaped like
    /// that axis; `eps` sits inside the square root.
    pub fn layer_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        axis: usize,
        eps: T,
    ) -> Result<NodeId> {
        let t = &self.nodes[input].value;
        let s = t.shape().to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                detail: format!("axis {axis} invalid for shape {s:?}"),
            });
        }
        let (tg, tb) = (&self.nodes[gamma].value, &self.nodes[beta].value);
        if tg.shape() != [s[axis]] || tb.shape() != [s[axis]] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                detail: format!("gamma/beta must be shaped [{}]", s[axis]),
            });
        }
        let (outer, len, inner) = kernels::axis_split(&s, axis);
        let x = t.data();
        let inv_len = T::one() / el::<T>(len as f64);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); outer * inner];
        let mut data = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let mut mean = T::zero();
                for a in 0..len {
                    mean = mean + x[at(a)];
                }
                mean = mean * inv_len;
                let mut var = T::zero();
                for a in 0..len {
                    let d = x[at(a)] - mean;
                    var = d.mul_add(d, var);
                }
                var = var * inv_len;
                let istd = T::one() / (var + eps).sqrt();
                inv_std[o * inner + i] = istd;
                for a in 0..len {
                    let xh = (x[at(a)] - mean) * istd;
                    xhat[at(a)] = xh;
                    data[at(a)] = xh.mul_add(tg.data()[a], tb.data()[a]);
                }
            }
        }
        let out = Tensor::from_vec(s.clone(), data);
        let xhat = Tensor::from_vec(s, xhat);
        let rg = self.nodes[input].requires_grad
            || self.nodes[gamma].requires_grad
            || self.nodes[beta].requires_grad;
        self.push_checked(
            out,
            Op::LayerNorm { input, gamma, beta, axis, xhat, inv_std },
            rg,
            "layer_norm",
        )
    }

    /// Batch-style normalization over all axes except axis 0 (channels).
    /// Training mode computes per-clip statistics and reports them via
    /// `BatchStats`; eval mode normalizes with frozen running statistics.
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: T,
        running: Option<(&[T], &[T])>,
    ) -> Result<(NodeId, Option<BatchStats<T>>)> {
        let t = &self.nodes[input].value;
        let s = t.shape().to_vec();
        if s.is_empty() {
            return Err(Error::ShapeMismatch { op: "batch_norm", detail: "rank 0".into() });
        }
        let c = s[0];
        let spatial: usize = s[1..].iter().product();
        let (tg, tb) = (&self.nodes[gamma].value, &self.nodes[beta].value);
        if tg.shape() != [c] || tb.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                detail: format!("gamma/beta must be shaped [{c}]"),
            });
        }
        let x = t.data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut data = vec![T::zero(); x.len()];
        let mut stats = None;
        let inv_n = T::one() / el::<T>(spatial as f64);

        match running {
            None => {
                let mut means = vec![T::zero(); c];
                let mut vars = vec![T::zero(); c];
                for ch in 0..c {
                    let row = &x[ch * spatial..(ch + 1) * spatial];
                    let mut mean = T::zero();
                    for &v in row {
                        mean = mean + v;
                    }
                    mean = mean * inv_n;
                    let mut var = T::zero();
                    for &v in row {
                        let d = v - mean;
                        var = d.mul_add(d, var);
                    }
                    var = var * inv_n;
                    means[ch] = mean;
                    vars[ch] = var;
                    let istd = T::one() / (var + eps).sqrt();
                    inv_std[ch] = istd;
                    let (gm, bt) = (tg.data()[ch], tb.data()[ch]);
                    for i in 0..spatial {
                        let idx = ch * spatial + i;
                        let h = (x[idx] - mean) * istd;
                        xhat[idx] = h;
                        data[idx] = h.mul_add(gm, bt);
                    }
                }
                stats = Some(BatchStats { mean: means, var: vars });
            }
            Some((rm, rv)) => {
                for ch in 0..c {
                    let istd = T::one() / (rv[ch] + eps).sqrt();
                    inv_std[ch] = istd;
                    let mean = rm[ch];
                    let (gm, bt) = (tg.data()[ch], tb.data()[ch]);
                    for i in 0..spatial {
                        let idx = ch * spatial + i;
                        let h = (x[idx] - mean) * istd;
                        xhat[idx] = h;
                        data[idx] = h.mul_add(gm, bt);
                    }
                }
            }
        }

        let out = Tensor::from_vec(s.clone(), data);
        let xhat = Tensor::from_vec(s, xhat);
        let rg = self.nodes[input].requires_grad
            || self.nodes[gamma].requires_grad
            || self.nodes[beta].requires_grad;
        let op = if stats.is_some() {
            Op::BatchNormTrain { input, gamma, beta, xhat, inv_std }
        } else {
            Op::BatchNormEval { input, gamma, beta, xhat, inv_std }
        };
        let id = self.push_checked(out, op, rg, "batch_norm")?;
        Ok((id, stats))
    }

    // -- shape ops -----------------------------------------------------------

    pub fn sum_axis(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        let t = &self.nodes[input].value;
        let s = t.shape().to_vec();
        if axis >= s.len() {
            return Err(Error::ShapeMismatch {
                op: "sum_axis",
                detail: format!("axis {axis} for shape {s:?}"),
            });
        }
        let data = kernels::sum_axis(t.data(), &s, axis);
        let mut out_shape = s.clone();
        out_shape.remove(axis);
        let out = Tensor::from_vec(out_shape, data);
        let rg = self.nodes[input].requires_grad;
        self.push_checked(out, Op::SumAxis { input, axis }, rg, "sum_axis")
    }

    pub fn sum_all(&mut self, input: NodeId) -> Result<NodeId> {
        let t = &self.nodes[input].value;
        let out = Tensor::scalar(kernels::sum_all(t.data()));
        let rg = self.nodes[input].requires_grad;
        self.push_checked(out, Op::SumAll { input }, rg, "sum_all")
    }

    pub fn mean_all(&mut self, input: NodeId) -> Result<NodeId> {
        let n = self.nodes[input].value.numel();
        let s = self.sum_all(input)?;
        self.mul_scalar(s, T::one() / el::<T>(n as f64))
    }

    pub fn reshape(&mut self, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = &self.nodes[input].value;
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", t.shape()),
            });
        }
        let out = t.reshaped(shape);
        let rg = self.nodes[input].requires_grad;
        Ok(self.push(out, Op::Reshape { input }, rg))
    }

    pub fn transpose2d(&mut self, input: NodeId) -> Result<NodeId> {
        let t = &self.nodes[input].value;
        let s = t.shape();
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose2d",
                detail: format!("rank {} != 2", s.len()),
            });
        }
        let (r, c) = (s[0], s[1]);
        let x = t.data();
        let mut data = vec![T::zero(); x.len()];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = x[i * c + j];
            }
        }
        let out = Tensor::from_vec(vec![c, r], data);
        let rg = self.nodes[input].requires_grad;
        Ok(self.push(out, Op::Transpose2d { input }, rg))
    }

    /// Reverse the tensor along `axis`.
    pub fn flip(&mut self, input: NodeId, axis: usize) -> Result<NodeId> {
        let t = &self.nodes[input].value;
        let s = t.shape().to_vec();
        if axis >= s.len() {
            return Err(Error::ShapeMismatch {
                op: "flip",
                detail: format!("axis {axis} for shape {s:?}"),
            });
        }
        let out = Tensor::from_vec(s.clone(), flip_data(t.data(), &s, axis));
        let rg = self.nodes[input].requires_grad;
        Ok(self.push(out, Op::Flip { input, axis }, rg))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let first = self.nodes[inputs[0]].value.shape().to_vec();
        if axis >= first.len() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                detail: format!("axis {axis} for shape {first:?}"),
            });
        }
        let mut total = 0usize;
        for &id in inputs {
            let s = self.nodes[id].value.shape();
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    detail: format!("{s:?} vs {first:?} on axis {axis}"),
                });
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = kernels::axis_split(&out_shape, axis);
        let mut data = vec![T::zero(); outer * total * inner];
        let mut off = 0usize;
        for &id in inputs {
            let t = &self.nodes[id].value;
            let len = t.shape()[axis];
            for o in 0..outer {
                let src = o * len * inner;
                let dst = (o * total + off) * inner;
                data[dst..dst + len * inner].copy_from_slice(&t.data()[src..src + len * inner]);
            }
            off += len;
        }
        let out = Tensor::from_vec(out_shape, data);
        let rg = inputs.iter().any(|&id| self.nodes[id].requires_grad);
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Slice `len` elements starting at `start` along `axis`.
    pub fn narrow(&mut self, input: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let t = &self.nodes[input].value;
        let s = t.shape().to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::ShapeMismatch {
                op: "narrow",
                detail: format!("axis {axis}, {start}+{len} > {s:?}"),
            });
        }
        let (outer, alen, inner) = kernels::axis_split(&s, axis);
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let mut data = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            let src = (o * alen + start) * inner;
            let dst = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&t.data()[src..src + len * inner]);
        }
        let out = Tensor::from_vec(out_shape, data);
        let rg = self.nodes[input].requires_grad;
        Ok(self.push(out, Op::Narrow { input, axis, start }, rg))
    }

    /// Record a domain-specific op whose forward value was computed by the
    /// caller.
    pub fn custom(
        &mut self,
        op: Arc<dyn CustomOp<T>>,
        inputs: &[NodeId],
        saved: Vec<Tensor<T>>,
        output: Tensor<T>,
    ) -> Result<NodeId> {
        let name = op.name();
        let rg = inputs.iter().any(|&id| self.nodes[id].requires_grad);
        self.push_checked(
            output,
            Op::Custom { op, inputs: inputs.to_vec(), saved },
            rg,
            name,
        )
    }

    // -- backward ------------------------------------------------------------

    /// Reverse pass from a scalar loss; visits each node exactly once in
    /// reverse topological order and populates gradients for every node with
    /// `requires_grad` on a path to the loss.
    pub fn backward(&mut self, loss: NodeId) -> Result<Grads<T>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        self.consumed = true;
        let lv = &self.nodes[loss].value;
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss { numel: lv.numel() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::full(lv.shape().to_vec(), T::one()));

        for id in (0..self.nodes.len()).rev() {
            if id > loss {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                _ => {}
            }
            let contributions = self.backprop_node(id, &g);
            for (src, gt) in contributions {
                accumulate(&mut grads[src], gt);
            }
        }
        Ok(Grads { grads })
    }

    fn backprop_node(&self, id: NodeId, g: &Tensor<T>) -> Vec<(NodeId, Tensor<T>)> {
        let node = &self.nodes[id];
        let mut out: Vec<(NodeId, Tensor<T>)> = Vec::new();
        let needs = |n: NodeId| self.nodes[n].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Unary { kind, input } => {
                if needs(*input) {
                    let x = self.nodes[*input].value.data();
                    let y = node.value.data();
                    let data = g
                        .data()
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(&gv, (&xv, &yv))| gv * unary_deriv(*kind, xv, yv))
                        .collect();
                    out.push((*input, Tensor::from_vec(x_shape(self, *input), data)));
                }
            }
            Op::Binary { kind, lhs, rhs } => {
                let (a, b) = (&self.nodes[*lhs].value, &self.nodes[*rhs].value);
                let (da, db) = binary_backward(*kind, a, b, g, needs(*lhs), needs(*rhs));
                if let Some(da) = da {
                    out.push((*lhs, reduce_to_shape(da, a.shape())));
                }
                if let Some(db) = db {
                    out.push((*rhs, reduce_to_shape(db, b.shape())));
                }
            }
            Op::AddScalar { input } => {
                if needs(*input) {
                    out.push((*input, g.clone()));
                }
            }
            Op::MulScalar { input, c } => {
                if needs(*input) {
                    out.push((*input, g.map(|v| v * *c)));
                }
            }
            Op::Matmul { a, b } => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if needs(*a) {
                    let da = kernels::matmul_nt(g.data(), tb.data(), m, n, k);
                    out.push((*a, Tensor::from_vec(vec![m, k], da)));
                }
                if needs(*b) {
                    let db = kernels::matmul_tn(ta.data(), g.data(), m, k, n);
                    out.push((*b, Tensor::from_vec(vec![k, n], db)));
                }
            }
            Op::Conv1d { x, w, meta } => {
                let (tx, tw) = (&self.nodes[*x].value, &self.nodes[*w].value);
                if needs(*w) {
                    let dw = kernels::conv1d_grad_w(
                        tx.data(), g.data(), meta.c_in, meta.l, meta.c_out, meta.k,
                        meta.stride, meta.pad_l, meta.pad_r, meta.groups,
                    );
                    out.push((*w, Tensor::from_vec(tw.shape().to_vec(), dw)));
                }
                if needs(*x) {
                    let dx = kernels::conv1d_grad_x(
                        tw.data(), g.data(), meta.c_in, meta.l, meta.c_out, meta.k,
                        meta.stride, meta.pad_l, meta.pad_r, meta.groups,
                    );
                    out.push((*x, Tensor::from_vec(tx.shape().to_vec(), dx)));
                }
            }
            Op::Conv2d { x, w, meta } => {
                let (tx, tw) = (&self.nodes[*x].value, &self.nodes[*w].value);
                if needs(*w) {
                    let dw = kernels::conv2d_grad_w(
                        tx.data(), g.data(), meta.c_in, meta.h, meta.w, meta.c_out,
                        meta.kh, meta.kw, meta.pad,
                    );
                    out.push((*w, Tensor::from_vec(tw.shape().to_vec(), dw)));
                }
                if needs(*x) {
                    let dx = kernels::conv2d_grad_x(
                        tw.data(), g.data(), meta.c_in, meta.h, meta.w, meta.c_out,
                        meta.kh, meta.kw, meta.pad,
                    );
                    out.push((*x, Tensor::from_vec(tx.shape().to_vec(), dx)));
                }
            }
            Op::MaxPoolLast { input, arg } | Op::MaxPool2d { input, arg } => {
                if needs(*input) {
                    let t = &self.nodes[*input].value;
                    let dx = kernels::maxpool_backward(g.data(), arg, t.numel());
                    out.push((*input, Tensor::from_vec(t.shape().to_vec(), dx)));
                }
            }
            Op::Softmax { input, axis } => {
                if needs(*input) {
                    let y = node.value.data();
                    let s = node.value.shape();
                    let (outer, len, inner) = kernels::axis_split(s, *axis);
                    let mut dx = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * len + a) * inner + i;
                            let mut dot = T::zero();
                            for a in 0..len {
                                dot = g.data()[at(a)].mul_add(y[at(a)], dot);
                            }
                            for a in 0..len {
                                dx[at(a)] = y[at(a)] * (g.data()[at(a)] - dot);
                            }
                        }
                    }
                    out.push((*input, Tensor::from_vec(s.to_vec(), dx)));
                }
            }
            Op::LayerNorm { input, gamma, beta, axis, xhat, inv_std } => {
                let s = node.value.shape();
                let (outer, len, inner) = kernels::axis_split(s, *axis);
                let tg = self.nodes[*gamma].value.data();
                if needs(*gamma) {
                    let mut dg = vec![T::zero(); len];
                    for o in 0..outer {
                        for a in 0..len {
                            for i in 0..inner {
                                let idx = (o * len + a) * inner + i;
                                dg[a] = g.data()[idx].mul_add(xhat.data()[idx], dg[a]);
                            }
                        }
                    }
                    out.push((*gamma, Tensor::from_vec(vec![len], dg)));
                }
                if needs(*beta) {
                    let mut db = vec![T::zero(); len];
                    for o in 0..outer {
                        for a in 0..len {
                            for i in 0..inner {
                                db[a] = db[a] + g.data()[(o * len + a) * inner + i];
                            }
                        }
                    }
                    out.push((*beta, Tensor::from_vec(vec![len], db)));
                }
                if needs(*input) {
                    let inv_len = T::one() / el::<T>(len as f64);
                    let mut dx = vec![T::zero(); node.value.numel()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * len + a) * inner + i;
                            let mut sum_dh = T::zero();
                            let mut sum_dh_xh = T::zero();
                            for a in 0..len {
                                let dh = g.data()[at(a)] * tg[a];
                                sum_dh = sum_dh + dh;
                                sum_dh_xh = dh.mul_add(xhat.data()[at(a)], sum_dh_xh);
                            }
                            let istd = inv_std[o * inner + i];
                            for a in 0..len {
                                let dh = g.data()[at(a)] * tg[a];
                                let xh = xhat.data()[at(a)];
                                dx[at(a)] = istd
                                    * (dh - inv_len * sum_dh - xh * inv_len * sum_dh_xh);
                            }
                        }
                    }
                    out.push((*input, Tensor::from_vec(s.to_vec(), dx)));
                }
            }
            Op::BatchNormTrain { input, gamma, beta, xhat, inv_std }
            | Op::BatchNormEval { input, gamma, beta, xhat, inv_std } => {
                let train = matches!(node.op, Op::BatchNormTrain { .. });
                let s = node.value.shape();
                let c = s[0];
                let spatial: usize = s[1..].iter().product();
                let tg = self.nodes[*gamma].value.data();
                if needs(*gamma) {
                    let mut dg = vec![T::zero(); c];
                    for ch in 0..c {
                        let mut acc = T::zero();
                        for i in 0..spatial {
                            let idx = ch * spatial + i;
                            acc = g.data()[idx].mul_add(xhat.data()[idx], acc);
                        }
                        dg[ch] = acc;
                    }
                    out.push((*gamma, Tensor::from_vec(vec![c], dg)));
                }
                if needs(*beta) {
                    let mut db = vec![T::zero(); c];
                    for ch in 0..c {
                        let mut acc = T::zero();
                        for i in 0..spatial {
                            acc = acc + g.data()[ch * spatial + i];
                        }
                        db[ch] = acc;
                    }
                    out.push((*beta, Tensor::from_vec(vec![c], db)));
                }
                if needs(*input) {
                    let mut dx = vec![T::zero(); node.value.numel()];
                    let inv_n = T::one() / el::<T>(spatial as f64);
                    for ch in 0..c {
                        let istd = inv_std[ch];
                        let gch = tg[ch];
                        if train {
                            let mut sum_dh = T::zero();
                            let mut sum_dh_xh = T::zero();
                            for i in 0..spatial {
                                let idx = ch * spatial + i;
                                let dh = g.data()[idx] * gch;
                                sum_dh = sum_dh + dh;
                                sum_dh_xh = dh.mul_add(xhat.data()[idx], sum_dh_xh);
                            }
                            for i in 0..spatial {
                                let idx = ch * spatial + i;
                                let dh = g.data()[idx] * gch;
                                dx[idx] = istd
                                    * (dh - inv_n * sum_dh - xhat.data()[idx] * inv_n * sum_dh_xh);
                            }
                        } else {
                            for i in 0..spatial {
                                let idx = ch * spatial + i;
                                dx[idx] = g.data()[idx] * gch * istd;
                            }
                        }
                    }
                    out.push((*input, Tensor::from_vec(s.to_vec(), dx)));
                }
            }
            Op::SumAxis { input, axis } => {
                if needs(*input) {
                    let s = self.nodes[*input].value.shape();
                    let (outer, len, inner) = kernels::axis_split(s, *axis);
                    let mut dx = vec![T::zero(); outer * len * inner];
                    for o in 0..outer {
                        for a in 0..len {
                            let dst = (o * len + a) * inner;
                            let src = o * inner;
                            dx[dst..dst + inner].copy_from_slice(&g.data()[src..src + inner]);
                        }
                    }
                    out.push((*input, Tensor::from_vec(s.to_vec(), dx)));
                }
            }
            Op::SumAll { input } => {
                if needs(*input) {
                    let t = &self.nodes[*input].value;
                    out.push((*input, Tensor::full(t.shape().to_vec(), g.item())));
                }
            }
            Op::Reshape { input } => {
                if needs(*input) {
                    let s = self.nodes[*input].value.shape().to_vec();
                    out.push((*input, g.reshaped(s)));
                }
            }
            Op::Transpose2d { input } => {
                if needs(*input) {
                    let s = node.value.shape();
                    let (r, c) = (s[0], s[1]);
                    let mut dx = vec![T::zero(); r * c];
                    for i in 0..r {
                        for j in 0..c {
                            dx[j * r + i] = g.data()[i * c + j];
                        }
                    }
                    out.push((*input, Tensor::from_vec(vec![c, r], dx)));
                }
            }
            Op::Flip { input, axis } => {
                if needs(*input) {
                    let s = node.value.shape().to_vec();
                    let dx = flip_data(g.data(), &s, *axis);
                    out.push((*input, Tensor::from_vec(s, dx)));
                }
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape().to_vec();
                let (outer, total, inner) = kernels::axis_split(&out_shape, *axis);
                let mut off = 0usize;
                for &src_id in inputs {
                    let s = self.nodes[src_id].value.shape().to_vec();
                    let len = s[*axis];
                    if needs(src_id) {
                        let mut dx = vec![T::zero(); outer * len * inner];
                        for o in 0..outer {
                            let src = (o * total + off) * inner;
                            let dst = o * len * inner;
                            dx[dst..dst + len * inner]
                                .copy_from_slice(&g.data()[src..src + len * inner]);
                        }
                        out.push((src_id, Tensor::from_vec(s, dx)));
                    }
                    off += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                if needs(*input) {
                    let s = self.nodes[*input].value.shape().to_vec();
                    let (outer, alen, inner) = kernels::axis_split(&s, *axis);
                    let len = node.value.shape()[*axis];
                    let mut dx = vec![T::zero(); outer * alen * inner];
                    for o in 0..outer {
                        let dst = (o * alen + start) * inner;
                        let src = o * len * inner;
                        dx[dst..dst + len * inner]
                            .copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    out.push((*input, Tensor::from_vec(s, dx)));
                }
            }
            Op::Custom { op, inputs, saved } => {
                let need_flags: Vec<bool> = inputs.iter().map(|&i| needs(i)).collect();
                let gs = op.backward(saved, g, &need_flags);
                for (&src, gt) in inputs.iter().zip(gs) {
                    if let Some(gt) = gt {
                        out.push((src, gt));
                    }
                }
            }
        }
        out
    }
}

fn x_shape<T: Element>(g: &Graph<T>, id: NodeId) -> Vec<usize> {
    g.nodes[id].value.shape().to_vec()
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        None => *slot = Some(g),
        Some(existing) => {
            let data = existing.data_mut();
            for (a, b) in data.iter_mut().zip(g.data()) {
                *a = *a + *b;
            }
        }
    }
}

fn unary_name(kind: UnaryKind) -> &'static str {
    match kind {
        UnaryKind::Neg => "neg",
        UnaryKind::Abs => "abs",
        UnaryKind::Exp => "exp",
        UnaryKind::Ln => "ln",
        UnaryKind::Sqrt => "sqrt",
        UnaryKind::Sigmoid => "sigmoid",
        UnaryKind::Silu => "silu",
        UnaryKind::Selu => "selu",
        UnaryKind::Softplus => "softplus",
    }
}

fn binary_name(kind: BinaryKind) -> &'static str {
    match kind {
        BinaryKind::Add => "add",
        BinaryKind::Sub => "sub",
        BinaryKind::Mul => "mul",
        BinaryKind::Div => "div",
    }
}

fn unary_eval<T: Element>(kind: UnaryKind, x: T) -> T {
    match kind {
        UnaryKind::Neg => -x,
        UnaryKind::Abs => x.abs(),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Ln => x.ln(),
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Silu => x * sigmoid(x),
        UnaryKind::Selu => {
            let (alpha, lambda) = (el::<T>(SELU_ALPHA), el::<T>(SELU_LAMBDA));
            if x > T::zero() {
                lambda * x
            } else {
                lambda * alpha * (x.exp() - T::one())
            }
        }
        UnaryKind::Softplus => {
            // ln(1+e^x) computed stably
            let m = x.max(T::zero());
            m + ((-x.abs()).exp() + T::one()).ln()
        }
    }
}

/// d(op)/dx given input x and output y.
fn unary_deriv<T: Element>(kind: UnaryKind, x: T, y: T) -> T {
    match kind {
        UnaryKind::Neg => -T::one(),
        UnaryKind::Abs => {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        }
        UnaryKind::Exp => y,
        UnaryKind::Ln => T::one() / x,
        UnaryKind::Sqrt => {
            let two = el::<T>(2.0);
            T::one() / (two * y)
        }
        UnaryKind::Sigmoid => y * (T::one() - y),
        UnaryKind::Silu => {
            let s = sigmoid(x);
            s * (T::one() + x * (T::one() - s))
        }
        UnaryKind::Selu => {
            let (alpha, lambda) = (el::<T>(SELU_ALPHA), el::<T>(SELU_LAMBDA));
            if x > T::zero() {
                lambda
            } else {
                lambda * alpha * x.exp()
            }
        }
        UnaryKind::Softplus => sigmoid(x),
    }
}

fn binary_eval<T: Element>(kind: BinaryKind, a: T, b: T) -> T {
    match kind {
        BinaryKind::Add => a + b,
        BinaryKind::Sub => a - b,
        BinaryKind::Mul => a * b,
        BinaryKind::Div => a / b,
    }
}

fn sigmoid<T: Element>(x: T) -> T {
    // evaluate through exp(-|x|) so both tails stay stable
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Gradients of a broadcast binary op, still in output shape.
fn binary_backward<T: Element>(
    kind: BinaryKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    need_a: bool,
    need_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let out_shape = g.shape().to_vec();
    let expand = |t: &Tensor<T>| -> Vec<T> {
        if t.shape() == out_shape.as_slice() {
            return t.data().to_vec();
        }
        let strides = broadcast_strides(t.shape(), &out_shape);
        let n: usize = out_shape.iter().product();
        let mut v = Vec::with_capacity(n);
        let mut idx = vec![0usize; out_shape.len()];
        let mut off = 0usize;
        for _ in 0..n {
            v.push(t.data()[off]);
            for d in (0..out_shape.len()).rev() {
                idx[d] += 1;
                off += strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
                off -= strides[d] * out_shape[d];
            }
        }
        v
    };
    match kind {
        BinaryKind::Add => (
            need_a.then(|| g.clone()),
            need_b.then(|| g.clone()),
        ),
        BinaryKind::Sub => (
            need_a.then(|| g.clone()),
            need_b.then(|| g.map(|v| -v)),
        ),
        BinaryKind::Mul => {
            let da = need_a.then(|| {
                let bx = expand(b);
                Tensor::from_vec(
                    out_shape.clone(),
                    g.data().iter().zip(&bx).map(|(&gv, &bv)| gv * bv).collect(),
                )
            });
            let db = need_b.then(|| {
                let ax = expand(a);
                Tensor::from_vec(
                    out_shape.clone(),
                    g.data().iter().zip(&ax).map(|(&gv, &av)| gv * av).collect(),
                )
            });
            (da, db)
        }
        BinaryKind::Div => {
            let bx = (need_a || need_b).then(|| expand(b));
            let da = need_a.then(|| {
                let bx = bx.as_ref().unwrap();
                Tensor::from_vec(
                    out_shape.clone(),
                    g.data().iter().zip(bx).map(|(&gv, &bv)| gv / bv).collect(),
                )
            });
            let db = need_b.then(|| {
                let ax = expand(a);
                let bx = bx.as_ref().unwrap();
                Tensor::from_vec(
                    out_shape.clone(),
                    g.data()
                        .iter()
                        .zip(ax.iter().zip(bx))
                        .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                        .collect(),
                )
            });
            (da, db)
        }
    }
}

/// Sum a gradient in broadcast-output shape down to the input's shape.
fn reduce_to_shape<T: Element>(g: Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        return g;
    }
    let gs = g.shape().to_vec();
    let offset = gs.len() - target.len();
    let mut data = g.data().to_vec();
    let mut shape = gs.clone();
    // collapse leading extra axes
    for _ in 0..offset {
        data = kernels::sum_axis(&data, &shape, 0);
        shape.remove(0);
    }
    // Sum axes where the target extent is 1. The row-major layout with an
    // extent-1 axis equals the layout with that axis removed, so the summed
    // buffer can be kept as-is.
    for d in 0..target.len() {
        if target[d] == 1 && shape[d] != 1 {
            data = kernels::sum_axis(&data, &shape, d);
            shape[d] = 1;
        }
    }
    Tensor::from_vec(target.to_vec(), data)
}

fn flip_data<T: Element>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let (outer, len, inner) = kernels::axis_split(shape, axis);
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for a in 0..len {
            let src = (o * len + a) * inner;
            let dst = (o * len + (len - 1 - a)) * inner;
            out[dst..dst + inner].copy_from_slice(&x[src..src + inner]);
        }
    }
    out
}
