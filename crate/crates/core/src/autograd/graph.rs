use std::collections::HashMap;

use super::params::{ParamGrads, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{self, ReduceKind, Scalar, Tensor, Unary};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// A user-defined differentiable operation.
pub trait CustomOp {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Gradients for each input, in order, given the output gradient.
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: Scalar },
    Unary(Var, Unary),
    Reduce { x: Var, mean: bool },
    Reshape(Var),
    MatMul(Var, Var),
    ChannelMix { w: Var, x: Var },
    ZScore { x: Var, inv_std: Tensor },
    L2Normalize { x: Var, norm: Tensor, eps: Scalar },
    Pool(Var),
    DwConv { x: Var, k: Var },
    CircConv { x: Var, k: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::ChannelMix { w, x } => vec![*w, *x],
            Op::DwConv { x, k } | Op::CircConv { x, k } => vec![*x, *k],
            Op::Affine { x, .. }
            | Op::Unary(x, _)
            | Op::Reduce { x, .. }
            | Op::Reshape(x)
            | Op::ZScore { x, .. }
            | Op::L2Normalize { x, .. }
            | Op::Pool(x)
            | Op::Narrow { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    tracked: bool,
}

/// Records tensor operations for reverse-mode differentiation.
///
/// A graph is built fresh for every forward pass. Parameters are pulled in
/// by name from a [`ParamStore`]; [`Graph::backward`] returns gradients for
/// every tracked leaf.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<String>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

/// Gradients of one backward pass, keyed by leaf.
pub struct Gradients {
    leaves: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: HashMap::new(), param_order: Vec::new(), grad_enabled: true }
    }

    /// A graph that records values only; nothing is tracked for backward.
    pub fn no_grad() -> Self {
        Graph { grad_enabled: false, ..Graph::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let tracked = self.grad_enabled && op.inputs().iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { op, value, tracked });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor, tracked: bool) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, tracked: tracked && self.grad_enabled });
        Var(self.nodes.len() - 1)
    }

    /// Untracked input (data, fixed coordinates).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Tracked leaf that is not a stored parameter.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Brings parameter `name` into the graph; repeated requests share a node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let v = self.leaf(p.value.clone(), p.trainable);
        self.params.insert(name.to_string(), v);
        self.param_order.push(name.to_string());
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Parameter names pulled into this graph, in first-use order.
    pub fn param_names(&self) -> &[String] {
        &self.param_order
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    /// Broadcasting elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::ew_mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: Scalar, shift: Scalar) -> Var {
        let v = self.value(x).map(|t| scale * t + shift);
        self.push(Op::Affine { x, scale }, v)
    }

    pub fn scale(&mut self, x: Var, s: Scalar) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let v = tensor::pointwise(self.value(x), f);
        self.push(Op::Unary(x, f), v)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Gelu)
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sin)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    pub fn si_glu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::SiGlu)
    }

    /// Sum over `axes`, keeping them with extent 1.
    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = tensor::reduce(self.value(x), axes, ReduceKind::Sum)?;
        Ok(self.push(Op::Reduce { x, mean: false }, v))
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = tensor::reduce(self.value(x), axes, ReduceKind::Mean)?;
        Ok(self.push(Op::Reduce { x, mean: true }, v))
    }

    /// Sum of all entries as a one-element tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        let s = self.sum(x, &axes).expect("all axes are valid");
        self.reshape(s, &[1]).expect("one element")
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        let s = self.mean(x, &axes).expect("all axes are valid");
        self.reshape(s, &[1]).expect("one element")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(Op::Reshape(x), v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    /// 1×1 channel projection `w: [C_out, C_in]` applied to `x: [B, C_in, ...]`.
    pub fn channel_mix(&mut self, w: Var, x: Var) -> Result<Var> {
        let v = tensor::channel_mix(self.value(w), self.value(x))?;
        Ok(self.push(Op::ChannelMix { w, x }, v))
    }

    /// z-score standardization over `axes`.
    pub fn z_score(&mut self, x: Var, axes: &[usize], eps: Scalar) -> Result<Var> {
        let (v, inv_std) = tensor::z_score(self.value(x), axes, eps)?;
        Ok(self.push(Op::ZScore { x, inv_std }, v))
    }

    /// `x / (‖x‖₂ + eps)` with the norm over `axes`.
    pub fn l2_normalize(&mut self, x: Var, axes: &[usize], eps: Scalar) -> Result<Var> {
        let (v, norm) = tensor::l2_normalize(self.value(x), axes, eps)?;
        Ok(self.push(Op::L2Normalize { x, norm, eps }, v))
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let v = tensor::adaptive_avg_pool(self.value(x), oh, ow)?;
        Ok(self.push(Op::Pool(x), v))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, k: Var) -> Result<Var> {
        let v = tensor::depthwise_conv2d(self.value(x), self.value(k))?;
        Ok(self.push(Op::DwConv { x, k }, v))
    }

    pub fn circular_conv(&mut self, x: Var, k: Var) -> Result<Var> {
        let v = tensor::circular_conv_fft(self.value(x), self.value(k))?;
        Ok(self.push(Op::CircConv { x, k }, v))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let v = {
            let ts: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            Tensor::concat(&ts, axis)?
        };
        Ok(self.push(Op::Concat { parts: parts.to_vec(), axis }, v))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        if start == 0 && self.shape(x).get(axis) == Some(&len) {
            return Ok(x);
        }
        let v = self.value(x).narrow(axis, start, len)?;
        Ok(self.push(Op::Narrow { x, axis, start }, v))
    }

    /// Mean over the batch of `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = crate::losses::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, Tensor::scalar(loss)))
    }

    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp>) -> Result<Var> {
        let v = {
            let ts: Vec<&Tensor> = inputs.iter().map(|&p| self.value(p)).collect();
            op.forward(&ts)?
        };
        Ok(self.push(Op::Custom { inputs: inputs.to_vec(), op }, v))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        let mut leaves = HashMap::new();
        if !self.nodes[loss.0].tracked {
            return Ok(Gradients { leaves });
        }
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                leaves.insert(Var(i), g);
                continue;
            }
            for (input, gi) in self.local_grads(node, g)? {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { leaves })
    }

    /// Backward pass returning dLoss/dParam for every trainable parameter in
    /// `store`; parameters the loss does not reach get zeros.
    pub fn param_grads(&self, loss: Var, store: &ParamStore) -> Result<ParamGrads> {
        let grads = self.backward(loss)?;
        let mut out = ParamGrads::default();
        for p in store.iter().filter(|p| p.trainable) {
            let g = self
                .params
                .get(&p.name)
                .and_then(|v| grads.wrt(*v))
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
            out.insert(p.name.clone(), g);
        }
        Ok(out)
    }

    fn local_grads(&self, node: &Node, g: Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let want = |v: Var| self.nodes[v.0].tracked;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                if want(*b) {
                    let gb = tensor::reduce_to_shape(&g, val(*b).shape())?;
                    let gb = if matches!(node.op, Op::Sub(..)) { gb.scale(-1.0) } else { gb };
                    out.push((*b, gb));
                }
                if want(*a) {
                    let ga = if g.shape() == val(*a).shape() { g } else { tensor::reduce_to_shape(&g, val(*a).shape())? };
                    out.push((*a, ga));
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    let t = tensor::ew_mul(&g, val(*b))?;
                    let t = if t.shape() == val(*a).shape() { t } else { tensor::reduce_to_shape(&t, val(*a).shape())? };
                    out.push((*a, t));
                }
                if want(*b) {
                    let t = tensor::ew_mul(&g, val(*a))?;
                    let t = if t.shape() == val(*b).shape() { t } else { tensor::reduce_to_shape(&t, val(*b).shape())? };
                    out.push((*b, t));
                }
            }
            Op::Affine { x, scale } => out.push((*x, g.scale(*scale))),
            Op::Unary(x, f) => {
                let mut g = g;
                for (gi, &xi) in g.data_mut().iter_mut().zip(val(*x).data()) {
                    *gi *= f.derivative(xi);
                }
                out.push((*x, g));
            }
            Op::Reduce { x, mean } => {
                let xv = val(*x);
                let n = (xv.numel() / g.numel()) as Scalar;
                let s = if *mean { 1.0 / n } else { 1.0 };
                out.push((*x, tensor::zip_with("reduce_backward", xv, &g, |_, gv| gv * s)?));
            }
            Op::Reshape(x) => out.push((*x, g.into_reshaped(val(*x).shape()))),
            Op::MatMul(a, b) => {
                let (ga, gb) = tensor::matmul_backward(val(*a), val(*b), &g);
                if want(*a) {
                    out.push((*a, ga));
                }
                if want(*b) {
                    out.push((*b, gb));
                }
            }
            Op::ChannelMix { w, x } => {
                let (gw, gx) = tensor::channel_mix_backward(val(*w), val(*x), &g, want(*w), want(*x));
                out.extend(gw.map(|t| (*w, t)));
                out.extend(gx.map(|t| (*x, t)));
            }
            Op::ZScore { x, inv_std } => out.push((*x, tensor::z_score_backward(&node.value, inv_std, &g)?)),
            Op::L2Normalize { x, norm, eps } => {
                out.push((*x, tensor::l2_normalize_backward(val(*x), norm, *eps, &g)?))
            }
            Op::Pool(x) => out.push((*x, tensor::adaptive_avg_pool_backward(val(*x).shape(), &g))),
            Op::DwConv { x, k } => {
                let (gx, gk) = tensor::depthwise_conv2d_backward(val(*x), val(*k), &g, want(*x), want(*k));
                out.extend(gx.map(|t| (*x, t)));
                out.extend(gk.map(|t| (*k, t)));
            }
            Op::CircConv { x, k } => {
                if want(*x) {
                    out.push((*x, tensor::circular_corr_fft(&g, val(*k))?));
                }
                if want(*k) {
                    out.push((*k, tensor::circular_corr_fft(&g, val(*x))?));
                }
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    if want(p) {
                        out.push((p, g.narrow(*axis, start, len)?));
                    }
                    start += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                out.push((*x, g.pad_axis(val(*x).shape(), *axis, *start)));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let (b, k) = (probs.shape()[0], probs.shape()[1]);
                let s = g.item() / b as Scalar;
                let mut d = probs.data().to_vec();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= 1.0;
                }
                d.iter_mut().for_each(|v| *v *= s);
                out.push((*logits, Tensor::from_parts(vec![b, k], d)));
            }
            Op::Custom { inputs, op } => {
                let ts: Vec<&Tensor> = inputs.iter().map(|&p| val(p)).collect();
                for (p, gi) in inputs.iter().zip(op.backward(&ts, &node.value, &g)) {
                    if want(*p) {
                        out.push((*p, gi));
                    }
                }
            }
        }
        Ok(out)
    }
}
