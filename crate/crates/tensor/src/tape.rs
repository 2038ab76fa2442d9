//! Reverse-mode differentiation over an append-only tape.
//!
//! Every operation appends a node holding its computed value; the node
//! order is therefore a topological order and `backward` simply walks it in
//! reverse. Nothing is freed until the tape is dropped.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::conv::{conv_backward, conv_forward};
use crate::tensor::{broadcast_shape, Tensor};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// A trainable tensor. Gradients are keyed by `id`, not stored here.
#[derive(Clone, Debug)]
pub struct Param {
    id: u64,
    pub value: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Self { id: NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed), value }
    }

    pub fn id(&self) -> u64 {
        self.id
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Powf(Var, f64),
    Exp(Var),
    Ln(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MatMul(Var, Var),
    Conv(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    SumTo(Var),
    Expand(Var),
    Concat(Vec<Var>, usize),
    IndexSelect(Var, usize, Vec<usize>),
    AvgPool(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<u64>,
}

/// Records operations for one forward pass.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
    params_trainable: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    vars: HashMap<Var, Tensor>,
    params: HashMap<u64, Tensor>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::leaf`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.vars.get(&v)
    }

    /// Gradient of a parameter, summed over every use on the tape.
    pub fn param(&self, p: &Param) -> Option<&Tensor> {
        self.params.get(&p.id)
    }

    pub fn param_by_id(&self, id: u64) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grad_enabled: true, params_trainable: true }
    }

    /// A tape that never records gradient requirements (pure evaluation).
    pub fn no_grad() -> Self {
        Self { nodes: Vec::new(), grad_enabled: false, params_trainable: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// When false, subsequent [`Tape::param`] calls produce constants, so
    /// gradients still flow through the layer to its inputs but not into
    /// its weights.
    pub fn set_params_trainable(&mut self, on: bool) {
        self.params_trainable = on;
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = self.grad_enabled;
        self.push(t, Op::Leaf, rg)
    }

    pub fn param(&mut self, p: &Param) -> Var {
        let rg = self.grad_enabled && self.params_trainable;
        let v = self.push(p.value.clone(), Op::Leaf, rg);
        self.nodes[v.0].param = Some(p.id);
        v
    }

    /// Copies the value of `v` into a new constant, cutting the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).mul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.unary(a, v, Op::Scale(a, c))
    }

    /// `a + c` for a scalar constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.unary(a, v, Op::Offset(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).map(|x| x.powf(p));
        self.unary(a, v, Op::Powf(a, p))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.unary(a, v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.unary(a, v, Op::Ln(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.unary(a, v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.unary(a, v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.unary(a, v, Op::Tanh(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// Same-padded stride-1 convolution; see [`crate::conv`] for layouts.
    pub fn conv(&mut self, x: Var, w: Var) -> Var {
        let v = conv_forward(self.value(x), self.value(w));
        let rg = self.rg(x) || self.rg(w);
        self.push(v, Op::Conv(x, w), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).clone().reshape(shape);
        self.unary(a, v, Op::Reshape(a))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Var {
        let v = self.value(a).permute(axes);
        self.unary(a, v, Op::Permute(a, axes.to_vec()))
    }

    /// Reduces broadcast dimensions so the result has shape `target`.
    pub fn sum_to(&mut self, a: Var, target: &[usize]) -> Var {
        let v = self.value(a).sum_to(target);
        self.unary(a, v, Op::SumTo(a))
    }

    pub fn sum_axes(&mut self, a: Var, axes: &[usize]) -> Var {
        let mut target = self.shape(a).to_vec();
        for &ax in axes {
            target[ax] = 1;
        }
        self.sum_to(a, &target)
    }

    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Var {
        let n: usize = axes.iter().map(|&ax| self.shape(a)[ax]).product();
        let s = self.sum_axes(a, axes);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let r = self.reshape(a, &[n]);
        self.sum_to(r, &[1])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).expand(shape);
        self.unary(a, v, Op::Expand(a))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        let v = {
            let ts: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            Tensor::concat(&ts, axis)
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(v, Op::Concat(parts.to_vec(), axis), rg)
    }

    pub fn index_select(&mut self, a: Var, axis: usize, indices: &[usize]) -> Var {
        let v = self.value(a).index_select(axis, indices);
        self.unary(a, v, Op::IndexSelect(a, axis, indices.to_vec()))
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let idx: Vec<usize> = (start..start + len).collect();
        self.index_select(a, axis, &idx)
    }

    /// Mean over `k`×`k` blocks of the last two axes.
    pub fn avg_pool(&mut self, a: Var, k: usize) -> Var {
        let v = self.value(a).avg_pool(k);
        self.unary(a, v, Op::AvgPool(a, k))
    }

    /// Gradients of a single-element `loss` with respect to every leaf and
    /// parameter that requires them.
    pub fn backward(&self, loss: Var) -> Gradients {
        let lv = self.value(loss);
        assert_eq!(lv.numel(), 1, "backward needs a scalar loss, got {:?}", lv.shape());
        let mut out = Gradients::default();
        if !self.rg(loss) {
            return out;
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match node.param {
                    Some(id) => match out.params.get_mut(&id) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            out.params.insert(id, g);
                        }
                    },
                    None => {
                        out.vars.insert(Var(i), g);
                    }
                }
                continue;
            }
            for (parent, pg) in self.local_grads(i, &g) {
                if !self.rg(parent) {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        out
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => {
                vec![(*a, g.sum_to(val(*a).shape())), (*b, g.sum_to(val(*b).shape()))]
            }
            Op::Sub(a, b) => {
                vec![(*a, g.sum_to(val(*a).shape())), (*b, g.scale(-1.0).sum_to(val(*b).shape()))]
            }
            Op::Mul(a, b) => {
                let mut r = Vec::with_capacity(2);
                if self.rg(*a) {
                    r.push((*a, g.mul(val(*b)).sum_to(val(*a).shape())));
                }
                if self.rg(*b) {
                    r.push((*b, g.mul(val(*a)).sum_to(val(*b).shape())));
                }
                r
            }
            Op::Scale(a, c) => vec![(*a, g.scale(*c))],
            Op::Offset(a) => vec![(*a, g.clone())],
            Op::Powf(a, p) => {
                let p = *p;
                vec![(*a, g.zip_map(val(*a), |gv, x| gv * p * x.powf(p - 1.0)))]
            }
            Op::Exp(a) => vec![(*a, g.mul(&node.value))],
            Op::Ln(a) => vec![(*a, g.zip_map(val(*a), |gv, x| gv / x))],
            Op::Relu(a) => vec![(*a, g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }))],
            Op::Sigmoid(a) => vec![(*a, g.zip_map(&node.value, |gv, s| gv * s * (1.0 - s)))],
            Op::Tanh(a) => vec![(*a, g.zip_map(&node.value, |gv, t| gv * (1.0 - t * t)))],
            Op::MatMul(a, b) => {
                let mut r = Vec::with_capacity(2);
                if self.rg(*a) {
                    r.push((*a, g.matmul(&val(*b).transpose2())));
                }
                if self.rg(*b) {
                    r.push((*b, val(*a).transpose2().matmul(g)));
                }
                r
            }
            Op::Conv(x, w) => {
                let (gx, gw) = conv_backward(val(*x), val(*w), g, self.rg(*x), self.rg(*w));
                let mut r = Vec::with_capacity(2);
                if let Some(gx) = gx {
                    r.push((*x, gx));
                }
                if let Some(gw) = gw {
                    r.push((*w, gw));
                }
                r
            }
            Op::Reshape(a) => vec![(*a, g.clone().reshape(val(*a).shape()))],
            Op::Permute(a, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inv[ax] = i;
                }
                vec![(*a, g.permute(&inv))]
            }
            Op::SumTo(a) => vec![(*a, g.expand(val(*a).shape()))],
            Op::Expand(a) => vec![(*a, g.sum_to(val(*a).shape()))],
            Op::Concat(parts, axis) => {
                let mut start = 0;
                let mut r = Vec::with_capacity(parts.len());
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    if self.rg(p) {
                        r.push((p, g.narrow(*axis, start, len)));
                    }
                    start += len;
                }
                r
            }
            Op::IndexSelect(a, axis, idx) => {
                vec![(*a, g.index_add(*axis, idx, val(*a).shape()[*axis]))]
            }
            Op::AvgPool(a, k) => vec![(*a, g.avg_pool_backward(*k))],
        }
    }
}

/// Whether `a` and `b` broadcast together.
pub fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    broadcast_shape(a, b).is_some()
}
