//! Reverse-mode automatic differentiation over whole tensors.
//!
//! A [`Tape`] records every kernel executed during a forward pass as a node
//! holding its output value and the references needed by its gradient rule.
//! Nodes are appended in execution order, so the node list is already a
//! topological order and [`Tape::backward`] walks it once in reverse.
//!
//! Trainable tensors live in a [`ParamStore`]; [`Tape::param`] copies a
//! parameter onto the tape and remembers its id so the backward pass can
//! route gradients back to the store.

use alloc::{format, string::String, vec, vec::Vec};

use crate::kernels::activation::{activation_backward, activation_forward, Activation};
use crate::kernels::conv::{
    conv_backward, conv_forward, transpose_conv_backward, transpose_conv_forward,
};
use crate::kernels::dense::{dense_backward, dense_forward};
use crate::kernels::loss::{loss_forward_backward, LossKind};
use crate::kernels::norm::{
    batch_norm_frozen, batch_norm_frozen_backward, norm_backward, norm_forward, NormCache,
};
use crate::kernels::pool::{
    avg_pool, avg_pool_backward, global_avg_pool, global_avg_pool_backward, max_pool,
    max_pool_backward,
};
use crate::kernels::shape::{
    concat_channels, concat_channels_backward, upsample_nearest, upsample_nearest_backward,
};
use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
    /// Buffers such as running statistics are stored but never updated by
    /// the optimizer.
    pub trainable: bool,
}

/// Named parameters with paired gradient and momentum buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        let grad = Tensor::zeros(value.shape());
        let velocity = grad.clone();
        self.entries.push(ParamEntry { name, value, grad, velocity, trainable });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Replace a parameter's value; the shape must match.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::dim(
                0,
                format!("parameter {} has shape {:?}, got {:?}", e.name, e.value.shape(), value.shape()),
            ));
        }
        e.value = value;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|e| e.grad.fill(0.0));
    }

    /// Total scalar count of trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    Conv { x: Var, w: Var, b: Option<Var>, stride: Vec<usize>, pad: Vec<usize> },
    TransposeConv { x: Var, w: Var, b: Option<Var>, stride: Vec<usize> },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, window: Vec<usize>, stride: Vec<usize> },
    GlobalAvgPool { x: Var },
    Act { x: Var, kind: Activation },
    Dense { x: Var, w: Var, b: Var },
    Norm { x: Var, gamma: Var, beta: Var, per_sample: bool, cache: NormCache },
    FrozenBatchNorm { x: Var, gamma: Var, beta: Var, mean: Tensor, var: Tensor },
    Add { a: Var, b: Var },
    Concat { parts: Vec<Var>, channels: Vec<usize> },
    Upsample { x: Var, factor: Vec<usize> },
    Reshape { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Loss { pred: Var, grad: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of the loss w.r.t. every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Add parameter gradients into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, v) in &self.params {
            if let Some(g) = self.get(v) {
                store.entries[id.0].grad.add_assign(g);
            }
        }
    }
}

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = matches!(op, Op::Leaf { param: Some(_) })
            || inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Input tensor; set `requires_grad` to get its gradient back.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf { param: None }, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copy a parameter onto the tape; non-trainable buffers become constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let e = store.entry(id);
        let node = Node {
            value: e.value.clone(),
            op: Op::Leaf { param: Some(id) },
            requires_grad: e.trainable,
        };
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, stride: &[usize], pad: &[usize]) -> Result<Var> {
        let y = conv_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::Conv { x, w, b, stride: stride.to_vec(), pad: pad.to_vec() }, &inputs))
    }

    pub fn transpose_conv(&mut self, x: Var, w: Var, b: Option<Var>, stride: &[usize]) -> Result<Var> {
        let y = transpose_conv_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::TransposeConv { x, w, b, stride: stride.to_vec() }, &inputs))
    }

    pub fn max_pool(&mut self, x: Var, window: &[usize], stride: &[usize]) -> Result<Var> {
        let (y, argmax) = max_pool(self.value(x), window, stride)?;
        Ok(self.push(y, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn avg_pool(&mut self, x: Var, window: &[usize], stride: &[usize]) -> Result<Var> {
        let y = avg_pool(self.value(x), window, stride)?;
        let op = Op::AvgPool { x, window: window.to_vec(), stride: stride.to_vec() };
        Ok(self.push(y, op, &[x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::GlobalAvgPool { x }, &[x]))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let y = activation_forward(self.value(x), kind)?;
        Ok(self.push(y, Op::Act { x, kind }, &[x]))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = dense_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Dense { x, w, b }, &[x, w, b]))
    }

    /// Instance norm (`per_sample`) or training-mode batch norm. Returns the
    /// output and the batch statistics (mean, biased variance) per group.
    pub fn norm(&mut self, x: Var, gamma: Var, beta: Var, per_sample: bool) -> Result<(Var, Vec<Real>, Vec<Real>)> {
        let xv = self.value(x);
        let c = xv.shape().get(1).copied().unwrap_or(0);
        if xv.ndim() < 3 || self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::dim(1, format!("normalisation of {:?} with {} affine terms", xv.shape(), self.value(gamma).len())));
        }
        let (y, cache) = norm_forward(xv, self.value(gamma), self.value(beta), per_sample);
        let (mean, var) = (cache.mean.clone(), cache.var.clone());
        let v = self.push(y, Op::Norm { x, gamma, beta, per_sample, cache }, &[x, gamma, beta]);
        Ok((v, mean, var))
    }

    pub fn frozen_batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mean: &Tensor, var: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() < 3 || xv.shape()[1] != mean.len() {
            return Err(Error::dim(1, format!("batch norm of {:?} with {} channels", xv.shape(), mean.len())));
        }
        let y = batch_norm_frozen(xv, self.value(gamma), self.value(beta), mean, var);
        let op = Op::FrozenBatchNorm { x, gamma, beta, mean: mean.clone(), var: var.clone() };
        Ok(self.push(y, op, &[x, gamma, beta]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            let axis = av.shape().iter().zip(bv.shape()).position(|(p, q)| p != q).unwrap_or(0);
            return Err(Error::dim(axis, format!("add {:?} and {:?}", av.shape(), bv.shape())));
        }
        let mut y = av.clone();
        y.add_assign(bv);
        Ok(self.push(y, Op::Add { a, b }, &[a, b]))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = concat_channels(&vals)?;
        let channels = vals.iter().map(|t| t.shape()[1]).collect();
        Ok(self.push(y, Op::Concat { parts: parts.to_vec(), channels }, parts))
    }

    pub fn upsample(&mut self, x: Var, factor: &[usize]) -> Result<Var> {
        let y = upsample_nearest(self.value(x), factor)?;
        Ok(self.push(y, Op::Upsample { x, factor: factor.to_vec() }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let y = Tensor::scalar(t.sum() / t.len() as Real);
        self.push(y, Op::Mean { x }, &[x])
    }

    /// Scalar loss of `pred` against a constant target.
    pub fn loss(&mut self, pred: Var, target: &Tensor, kind: LossKind) -> Result<Var> {
        let (l, grad) = loss_forward_backward(self.value(pred), target, kind)?;
        Ok(self.push(Tensor::scalar(l), Op::Loss { pred, grad }, &[pred]))
    }

    /// Propagate d loss / d node back to every leaf. A tape supports a single
    /// backward pass; run the forward again for another one.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::contract("stale tape: backward already ran on this forward pass"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), 1.0));
        let mut params = Vec::new();

        let acc = |grads: &mut Vec<Option<Tensor>>, v: Var, g: Tensor| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if let Op::Leaf { param } = node.op {
                if let (Some(id), Some(_)) = (param, grads[i].as_ref()) {
                    params.push((id, Var(i)));
                }
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let val = |v: Var| &nodes[v.0].value;
            let needs = |v: Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf { .. } => unreachable!(),
                Op::Conv { x, w, b, stride, pad } => {
                    let r = conv_backward(val(*x), val(*w), &g, stride, pad, needs(*x))?;
                    if let Some(dx) = r.input {
                        acc(&mut grads, *x, dx);
                    }
                    acc(&mut grads, *w, r.weight);
                    if let Some(b) = b {
                        acc(&mut grads, *b, r.bias);
                    }
                }
                Op::TransposeConv { x, w, b, stride } => {
                    let r = transpose_conv_backward(val(*x), val(*w), &g, stride, needs(*x))?;
                    if let Some(dx) = r.input {
                        acc(&mut grads, *x, dx);
                    }
                    acc(&mut grads, *w, r.weight);
                    if let Some(b) = b {
                        acc(&mut grads, *b, r.bias);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    acc(&mut grads, *x, max_pool_backward(val(*x).shape(), argmax, &g));
                }
                Op::AvgPool { x, window, stride } => {
                    acc(&mut grads, *x, avg_pool_backward(val(*x).shape(), window, stride, &g)?);
                }
                Op::GlobalAvgPool { x } => {
                    acc(&mut grads, *x, global_avg_pool_backward(val(*x).shape(), &g));
                }
                Op::Act { x, kind } => {
                    acc(&mut grads, *x, activation_backward(val(*x), &node.value, &g, *kind));
                }
                Op::Dense { x, w, b } => {
                    let r = dense_backward(val(*x), val(*w), &g);
                    acc(&mut grads, *x, r.input);
                    acc(&mut grads, *w, r.weight);
                    acc(&mut grads, *b, r.bias);
                }
                Op::Norm { x, gamma, beta, per_sample, cache } => {
                    let r = norm_backward(&g, val(*gamma), cache, *per_sample);
                    acc(&mut grads, *x, r.input);
                    acc(&mut grads, *gamma, r.gamma);
                    acc(&mut grads, *beta, r.beta);
                }
                Op::FrozenBatchNorm { x, gamma, beta, mean, var } => {
                    let r = batch_norm_frozen_backward(val(*x), &g, val(*gamma), mean, var);
                    acc(&mut grads, *x, r.input);
                    acc(&mut grads, *gamma, r.gamma);
                    acc(&mut grads, *beta, r.beta);
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Concat { parts, channels } => {
                    for (p, gp) in parts.iter().zip(concat_channels_backward(&g, channels)) {
                        acc(&mut grads, *p, gp);
                    }
                }
                Op::Upsample { x, factor } => {
                    acc(&mut grads, *x, upsample_nearest_backward(val(*x).shape(), factor, &g));
                }
                Op::Reshape { x } => {
                    let shape = val(*x).shape().to_vec();
                    acc(&mut grads, *x, g.reshape(&shape)?);
                }
                Op::Sum { x } => {
                    acc(&mut grads, *x, Tensor::full(val(*x).shape(), g.item()));
                }
                Op::Mean { x } => {
                    let n = val(*x).len() as Real;
                    acc(&mut grads, *x, Tensor::full(val(*x).shape(), g.item() / n));
                }
                Op::Loss { pred, grad } => {
                    acc(&mut grads, *pred, grad.map(|v| v * g.item()));
                }
            }
        }
        Ok(Gradients { grads, params })
    }

    /// Backward pass that also adds parameter gradients into `store`.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(store);
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as Real), true);
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn second_backward_is_stale() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2], 1.0), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2], 1.0), true);
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreached_params_stay_zero() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::full(&[2], 1.0), true).unwrap();
        let b = store.add("b", Tensor::full(&[2], 1.0), true).unwrap();
        let mut tape = Tape::new();
        let av = tape.param(&store, a);
        let _bv = tape.param(&store, b);
        let s = tape.sum(av);
        tape.backward_into(s, &mut store).unwrap();
        assert_eq!(store.grad(a).data(), &[1.0, 1.0]);
        assert_eq!(store.grad(b).data(), &[0.0, 0.0]);
    }

    #[test]
    fn duplicate_param_names() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[1]), true).unwrap();
        assert!(store.add("w", Tensor::zeros(&[1]), true).is_err());
    }
}
