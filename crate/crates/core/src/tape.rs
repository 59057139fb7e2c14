//! Reverse-mode automatic differentiation over whole-tensor primitives.
//!
//! Every primitive applied to a [`Var`] appends a node to its [`Tape`]; node
//! ids are therefore already in topological order and [`Tape::backward`]
//! walks them in reverse. Values are reference counted, so saving inputs for
//! backward costs nothing beyond the forward buffers themselves.
//!
//! ```
//! use volo::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
//! let loss = x.mul(x).unwrap().sum().scale(0.5);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, -2.0, 0.5]);
//! ```

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::counter::MAddCounter;
use crate::error::{Result, TensorError};
use crate::ops::{self, gemm_nt, gemm_tn};
use crate::param::{Param, ParamKey};
use crate::tensor::{Scalar, Tensor};
use crate::window::{self, WindowGeometry};

type NodeId = usize;

enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    BatchMatMul(NodeId, NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    /// rhs is broadcast over the leading axes of lhs
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    /// one factor per index of the first axis
    ScaleRows(NodeId, Arc<Vec<T>>),
    Softmax {
        x: NodeId,
        axis: usize,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(NodeId),
    Relu(NodeId),
    Reshape(NodeId),
    Permute(NodeId, Vec<usize>),
    Unfold(NodeId, WindowGeometry),
    Fold(NodeId, WindowGeometry),
    AvgPool(NodeId, usize),
    /// masked entries are replaced by a constant and receive no gradient
    MaskFill(NodeId, Arc<Vec<bool>>),
    Sum(NodeId),
    CrossEntropy {
        logits: NodeId,
        probs: Tensor<T>,
        labels: Vec<usize>,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Narrow {
        x: NodeId,
        axis: usize,
        start: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamKey>,
}

/// Record of primitive applications, plus the multiply-add counter for
/// everything evaluated under it.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    counter: MAddCounter,
}

/// Handle to a value recorded on a tape.
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            counter: MAddCounter::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-adds of every matrix product recorded so far.
    pub fn madds(&self) -> u64 {
        self.counter.get()
    }

    pub fn counter(&self) -> &MAddCounter {
        &self.counter
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool, param: Option<ParamKey>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false, None)
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true, None)
    }

    /// Binds a parameter; its gradient is reported under the parameter key.
    pub fn param(&self, p: &Param<T>) -> Var<'_, T> {
        self.push(p.value.clone(), Op::Leaf, true, Some(p.key()))
    }

    fn value(&self, id: NodeId) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn derived(&self, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> Var<'_, T> {
        let rg = inputs.iter().any(|&i| self.requires_grad(i));
        self.push(value, op, rg, None)
    }

    pub fn concat<'t>(&'t self, parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().collect();
        let out = Tensor::concat(&refs, axis)?;
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        Ok(self.derived(out, Op::Concat { parts: ids.clone(), axis }, &ids))
    }

    /// Gradients of the scalar `loss` with respect to every leaf that
    /// requires them.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(TensorError::ForeignVariable);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));
        let mut out = Gradients {
            by_node: HashMap::new(),
            by_param: HashMap::new(),
        };
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if let Some(key) = node.param {
                    match out.by_param.get_mut(&key) {
                        Some(acc) => acc.add_assign(&g)?,
                        None => {
                            out.by_param.insert(key, g.clone());
                        }
                    }
                }
                out.by_node.insert(id, g);
                continue;
            }
            for (input, dg) in local_backward(&nodes, node, &g)? {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&dg)?,
                    slot => *slot = Some(dg),
                }
            }
        }
        Ok(out)
    }
}

/// Gradient map produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    by_node: HashMap<NodeId, Tensor<T>>,
    by_param: HashMap<ParamKey, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf created with [`Tape::leaf`] or [`Tape::param`].
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.by_node.get(&v.id)
    }

    /// Gradient of a parameter, summed over all of its bindings.
    pub fn param(&self, p: &Param<T>) -> Option<&Tensor<T>> {
        self.by_param.get(&p.key())
    }

    pub fn num_params(&self) -> usize {
        self.by_param.len()
    }
}

fn local_backward<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>> {
    let val = |id: NodeId| &nodes[id].value;
    let rg = |id: NodeId| nodes[id].requires_grad;
    let mut out = Vec::with_capacity(2);
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) | Op::BatchMatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let r = av.rank();
            let (m, k, n) = (av.shape()[r - 2], av.shape()[r - 1], bv.shape()[r - 1]);
            let batch: usize = av.shape()[..r - 2].iter().product();
            if rg(*a) {
                let mut da = vec![T::zero(); av.len()];
                for bi in 0..batch {
                    gemm_nt(
                        &g.data()[bi * m * n..][..m * n],
                        &bv.data()[bi * k * n..][..k * n],
                        &mut da[bi * m * k..][..m * k],
                        m,
                        n,
                        k,
                    );
                }
                out.push((*a, Tensor::from_vec(av.shape(), da)?));
            }
            if rg(*b) {
                let mut db = vec![T::zero(); bv.len()];
                for bi in 0..batch {
                    gemm_tn(
                        &av.data()[bi * m * k..][..m * k],
                        &g.data()[bi * m * n..][..m * n],
                        &mut db[bi * k * n..][..k * n],
                        k,
                        m,
                        n,
                    );
                }
                out.push((*b, Tensor::from_vec(bv.shape(), db)?));
            }
        }
        Op::Linear { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let (cin, cout) = (wv.shape()[0], wv.shape()[1]);
            let rows = xv.len() / cin;
            if rg(*x) {
                let mut dx = vec![T::zero(); xv.len()];
                gemm_nt(g.data(), wv.data(), &mut dx, rows, cout, cin);
                out.push((*x, Tensor::from_vec(xv.shape(), dx)?));
            }
            if rg(*w) {
                let mut dw = vec![T::zero(); wv.len()];
                gemm_tn(xv.data(), g.data(), &mut dw, cin, rows, cout);
                out.push((*w, Tensor::from_vec(wv.shape(), dw)?));
            }
            if let Some(b) = b {
                if rg(*b) {
                    out.push((*b, sum_leading(g, cout)?.reshape(&[cout])?));
                }
            }
        }
        Op::Add(a, b) => {
            if rg(*a) {
                out.push((*a, g.clone()));
            }
            if rg(*b) {
                let bs = val(*b).shape();
                out.push((*b, sum_leading(g, val(*b).len())?.reshape(bs)?));
            }
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                out.push((*a, g.zip_map(val(*b), "mul_backward", |x, y| x * y)?));
            }
            if rg(*b) {
                out.push((*b, g.zip_map(val(*a), "mul_backward", |x, y| x * y)?));
            }
        }
        Op::Scale(a, c) => out.push((*a, g.scale(*c))),
        Op::ScaleRows(a, factors) => out.push((*a, scale_rows(g, factors)?)),
        Op::Softmax { x, axis } => {
            out.push((*x, ops::softmax_backward(&node.value, g, *axis)));
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let gv = val(*gamma);
            let c = gv.len();
            let rows = xhat.len() / c;
            let gd = g.data();
            if rg(*x) {
                let mut dx = vec![T::zero(); xhat.len()];
                let n = T::of(c as f64);
                for r in 0..rows {
                    let gr = &gd[r * c..(r + 1) * c];
                    let hr = &xhat[r * c..(r + 1) * c];
                    let mut mean_d = T::zero();
                    let mut mean_dh = T::zero();
                    for j in 0..c {
                        let d = gr[j] * gv.data()[j];
                        mean_d += d;
                        mean_dh += d * hr[j];
                    }
                    mean_d = mean_d / n;
                    mean_dh = mean_dh / n;
                    for j in 0..c {
                        let d = gr[j] * gv.data()[j];
                        dx[r * c + j] = rstd[r] * (d - mean_d - hr[j] * mean_dh);
                    }
                }
                out.push((*x, Tensor::from_vec(val(*x).shape(), dx)?));
            }
            if rg(*gamma) {
                let mut dg = vec![T::zero(); c];
                for r in 0..rows {
                    for j in 0..c {
                        dg[j] += gd[r * c + j] * xhat[r * c + j];
                    }
                }
                out.push((*gamma, Tensor::from_vec(&[c], dg)?));
            }
            if rg(*beta) {
                out.push((*beta, sum_leading(g, c)?.reshape(&[c])?));
            }
        }
        Op::Gelu(x) => {
            let d = g.zip_map(val(*x), "gelu_backward", |gy, xv| {
                gy * T::of(ops::gelu_grad_scalar(xv.as_f64()))
            })?;
            out.push((*x, d));
        }
        Op::Relu(x) => {
            let d = g.zip_map(val(*x), "relu_backward", |gy, xv| {
                if xv > T::zero() {
                    gy
                } else {
                    T::zero()
                }
            })?;
            out.push((*x, d));
        }
        Op::Reshape(x) => out.push((*x, g.reshape(val(*x).shape())?)),
        Op::Permute(x, perm) => {
            let mut inverse = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            out.push((*x, g.permute(&inverse)?));
        }
        Op::Unfold(x, geom) => out.push((*x, window::fold(g, geom)?)),
        Op::Fold(x, geom) => out.push((*x, window::unfold(g, geom)?)),
        Op::AvgPool(x, s) => {
            out.push((*x, window::avg_pool_backward(g, val(*x).shape(), *s)?));
        }
        Op::MaskFill(x, mask) => {
            let mut d = g.clone();
            for (v, &m) in d.data_mut().iter_mut().zip(mask.iter()) {
                if m {
                    *v = T::zero();
                }
            }
            out.push((*x, d));
        }
        Op::Sum(x) => {
            let gy = g.data()[0];
            out.push((*x, Tensor::full(val(*x).shape(), gy)));
        }
        Op::CrossEntropy {
            logits,
            probs,
            labels,
        } => {
            let gy = g.data()[0];
            let classes = probs.shape()[1];
            let scale = gy / T::of(labels.len() as f64);
            let mut d = probs.clone();
            {
                let dd = d.data_mut();
                for (row, &l) in labels.iter().enumerate() {
                    dd[row * classes + l] -= T::one();
                }
                dd.iter_mut().for_each(|v| *v *= scale);
            }
            out.push((*logits, d));
        }
        Op::Concat { parts, axis } => {
            let mut start = 0;
            for &p in parts {
                let len = val(p).shape()[*axis];
                if rg(p) {
                    out.push((p, g.narrow(*axis, start, len)?));
                }
                start += len;
            }
        }
        Op::Narrow { x, axis, start } => {
            let xv = val(*x);
            let (outer, extent, inner) = ops::axis_split(xv.shape(), *axis);
            let len = g.shape()[*axis];
            let mut d = vec![T::zero(); xv.len()];
            for o in 0..outer {
                let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                d[(o * extent + start) * inner..][..len * inner].copy_from_slice(src);
            }
            out.push((*x, Tensor::from_vec(xv.shape(), d)?));
        }
    }
    Ok(out)
}

/// Sums `g` over chunks of `chunk` elements: the adjoint of broadcasting a
/// `chunk`-sized tensor over leading axes.
fn sum_leading<T: Scalar>(g: &Tensor<T>, chunk: usize) -> Result<Tensor<T>> {
    let mut acc = vec![T::zero(); chunk];
    for block in g.data().chunks(chunk) {
        for (a, &v) in acc.iter_mut().zip(block) {
            *a += v;
        }
    }
    Tensor::from_vec(&[chunk], acc)
}

fn scale_rows<T: Scalar>(x: &Tensor<T>, factors: &[T]) -> Result<Tensor<T>> {
    if x.rank() == 0 || x.shape()[0] != factors.len() {
        return Err(TensorError::shape("scale_rows", x.shape(), &[factors.len()]));
    }
    let chunk = x.len() / factors.len();
    let mut out = x.clone();
    for (block, &f) in out.data_mut().chunks_mut(chunk.max(1)).zip(factors) {
        block.iter_mut().for_each(|v| *v *= f);
    }
    Ok(out)
}

/// True when `rhs` (ignoring leading unit axes) is a suffix of `lhs`.
fn broadcastable(lhs: &[usize], rhs: &[usize]) -> bool {
    let first = rhs.iter().position(|&d| d != 1).unwrap_or(rhs.len());
    let core = &rhs[first..];
    core.len() <= lhs.len() && lhs[lhs.len() - core.len()..] == *core
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn same_tape(&self, other: &Self) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::ForeignVariable)
        }
    }

    /// 2-D matrix product; counts `m*k*n` multiply-adds.
    pub fn matmul(self, rhs: Self) -> Result<Self> {
        self.same_tape(&rhs)?;
        let (v, madds) = ops::matmul(&self.value(), &rhs.value())?;
        self.tape.counter.add(madds);
        Ok(self.tape.derived(v, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// Batched matrix product over identical leading axes.
    pub fn bmm(self, rhs: Self) -> Result<Self> {
        self.same_tape(&rhs)?;
        let (v, madds) = ops::batch_matmul(&self.value(), &rhs.value())?;
        self.tape.counter.add(madds);
        Ok(self
            .tape
            .derived(v, Op::BatchMatMul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// `self[..., cin] * w[cin, cout] + b`.
    pub fn linear(self, w: Self, b: Option<Self>) -> Result<Self> {
        self.same_tape(&w)?;
        let bv = b.map(|b| b.value());
        let (v, madds) = ops::linear(&self.value(), &w.value(), bv.as_ref())?;
        self.tape.counter.add(madds);
        let mut inputs = vec![self.id, w.id];
        inputs.extend(b.map(|b| b.id));
        Ok(self.tape.derived(
            v,
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
            &inputs,
        ))
    }

    /// Elementwise sum; `rhs` may omit (or have unit) leading axes.
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Self) -> Result<Self> {
        self.same_tape(&rhs)?;
        let (a, b) = (self.value(), rhs.value());
        if !broadcastable(a.shape(), b.shape()) {
            return Err(TensorError::shape("add", a.shape(), b.shape()));
        }
        let mut out = a.clone();
        if !b.is_empty() {
            for block in out.data_mut().chunks_mut(b.len()) {
                for (o, &v) in block.iter_mut().zip(b.data()) {
                    *o += v;
                }
            }
        }
        Ok(self.tape.derived(out, Op::Add(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// Elementwise product of equally shaped values.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Self) -> Result<Self> {
        self.same_tape(&rhs)?;
        let v = self.value().zip_map(&rhs.value(), "mul", |a, b| a * b)?;
        Ok(self.tape.derived(v, Op::Mul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    pub fn scale(self, c: f64) -> Self {
        let c = T::of(c);
        self.tape
            .derived(self.value().scale(c), Op::Scale(self.id, c), &[self.id])
    }

    /// Multiplies slice `i` of the first axis by `factors[i]`.
    pub fn scale_rows(self, factors: &[T]) -> Result<Self> {
        let v = scale_rows(&self.value(), factors)?;
        Ok(self.tape.derived(
            v,
            Op::ScaleRows(self.id, Arc::new(factors.to_vec())),
            &[self.id],
        ))
    }

    pub fn softmax(self, axis: usize) -> Result<Self> {
        let v = ops::softmax(&self.value(), axis)?;
        Ok(self
            .tape
            .derived(v, Op::Softmax { x: self.id, axis }, &[self.id]))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(self, gamma: Self, beta: Self, eps: f64) -> Result<Self> {
        let (v, saved) = ops::layer_norm_forward(&self.value(), &gamma.value(), &beta.value(), eps)?;
        Ok(self.tape.derived(
            v,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat: saved.xhat,
                rstd: saved.rstd,
            },
            &[self.id, gamma.id, beta.id],
        ))
    }

    pub fn gelu(self) -> Self {
        let v = self.value().map(|x| T::of(ops::gelu_scalar(x.as_f64())));
        self.tape.derived(v, Op::Gelu(self.id), &[self.id])
    }

    pub fn relu(self) -> Self {
        let v = self.value().map(|x| x.max(T::zero()));
        self.tape.derived(v, Op::Relu(self.id), &[self.id])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let v = self.value().reshape(shape)?;
        Ok(self.tape.derived(v, Op::Reshape(self.id), &[self.id]))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Self> {
        let v = self.value().permute(perm)?;
        Ok(self
            .tape
            .derived(v, Op::Permute(self.id, perm.to_vec()), &[self.id]))
    }

    pub fn unfold(self, g: &WindowGeometry) -> Result<Self> {
        let v = window::unfold(&self.value(), g)?;
        Ok(self.tape.derived(v, Op::Unfold(self.id, *g), &[self.id]))
    }

    pub fn fold(self, g: &WindowGeometry) -> Result<Self> {
        let v = window::fold(&self.value(), g)?;
        Ok(self.tape.derived(v, Op::Fold(self.id, *g), &[self.id]))
    }

    /// `s x s` average pooling over `[..., H, W, C]` (ceil mode).
    pub fn avg_pool(self, s: usize) -> Result<Self> {
        let v = window::avg_pool(&self.value(), s)?;
        Ok(self.tape.derived(v, Op::AvgPool(self.id, s), &[self.id]))
    }

    /// Replaces entries where `mask` is true by `fill`.
    pub fn mask_fill(self, mask: Arc<Vec<bool>>, fill: T) -> Result<Self> {
        let mut v = self.value();
        if mask.len() != v.len() {
            return Err(TensorError::shape("mask_fill", v.shape(), &[mask.len()]));
        }
        for (x, &m) in v.data_mut().iter_mut().zip(mask.iter()) {
            if m {
                *x = fill;
            }
        }
        Ok(self.tape.derived(v, Op::MaskFill(self.id, mask), &[self.id]))
    }

    pub fn sum(self) -> Self {
        let v = Tensor::scalar(self.value().sum());
        self.tape.derived(v, Op::Sum(self.id), &[self.id])
    }

    /// Mean cross-entropy of `[batch, classes]` logits against labels.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Self> {
        let logits = self.value();
        if logits.rank() != 2 || logits.shape()[0] != labels.len() {
            return Err(TensorError::shape("cross_entropy", logits.shape(), &[labels.len()]));
        }
        let classes = logits.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let probs = ops::softmax(&logits, 1)?;
        // log-sum-exp form; non-finite logits propagate into the loss
        let mut loss = T::zero();
        for (z, &l) in logits.data().chunks(classes).zip(labels) {
            let m = z.iter().fold(T::neg_infinity(), |a, &b| if b > a { b } else { a });
            let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            loss += lse - z[l];
        }
        loss = loss / T::of(labels.len() as f64);
        Ok(self.tape.derived(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                probs,
                labels: labels.to_vec(),
            },
            &[self.id],
        ))
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let v = self.value().narrow(axis, start, len)?;
        Ok(self.tape.derived(
            v,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
            &[self.id],
        ))
    }
}
