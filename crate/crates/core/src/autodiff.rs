//! Reverse-mode differentiation over the tensor kernels.
//!
//! Model code is written once against [`Graph`]. [`Eager`] evaluates it
//! directly on tensors; [`Tape`] additionally records every operation so that
//! [`Tape::backward`] can return the gradient of a scalar loss with respect to
//! each registered parameter.

use std::collections::BTreeMap;

use crate::tensor::{self, Activation, Padding, Result, Tensor, TensorError};

/// Position of a parameter in a model's canonical parameter order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

pub trait Graph {
    type Value: Clone;

    fn param(&mut self, id: ParamId, value: &Tensor) -> Self::Value;
    fn constant(&mut self, value: Tensor) -> Self::Value;
    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        kernel: &Self::Value,
        bias: Option<&Self::Value>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self::Value>;
    fn depthwise_conv2d(
        &mut self,
        x: &Self::Value,
        kernel: &Self::Value,
        bias: Option<&Self::Value>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn activation(&mut self, op: Activation, x: &Self::Value) -> Result<Self::Value>;
    fn global_average_pool(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn linear(
        &mut self,
        weight: &Self::Value,
        x: &Self::Value,
        bias: Option<&Self::Value>,
    ) -> Result<Self::Value>;
    fn channel_scale(&mut self, x: &Self::Value, s: &Self::Value) -> Result<Self::Value>;
    fn softmax(&mut self, x: &Self::Value) -> Result<Self::Value>;
    /// Elementwise product with a constant tensor (dropout masks).
    fn mask(&mut self, x: &Self::Value, mask: &Tensor) -> Result<Self::Value>;
    /// `-ln(max(p[target], floor))` as a scalar.
    fn nll(&mut self, probs: &Self::Value, target: usize, floor: f64) -> Result<Self::Value>;
    fn sum(&mut self, x: &Self::Value) -> Result<Self::Value>;

    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.activation(Activation::Sigmoid, x)
    }
    fn tanh(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.activation(Activation::Tanh, x)
    }
}

fn nll_value(probs: &Tensor, target: usize, floor: f64) -> Result<Tensor> {
    if target >= probs.len() {
        return Err(TensorError::Contract(format!(
            "class index {target} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(Tensor::scalar(-probs.data()[target].max(floor).ln()))
}

/// Plain evaluation, no recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Graph for Eager {
    type Value = Tensor;

    fn param(&mut self, _id: ParamId, value: &Tensor) -> Tensor {
        value.clone()
    }
    fn constant(&mut self, value: Tensor) -> Tensor {
        value
    }
    fn tensor<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }
    fn conv2d(&mut self, x: &Tensor, k: &Tensor, b: Option<&Tensor>, s: usize, p: Padding) -> Result<Tensor> {
        tensor::conv2d(x, k, b, s, p)?.check_finite("conv2d")
    }
    fn depthwise_conv2d(&mut self, x: &Tensor, k: &Tensor, b: Option<&Tensor>, s: usize, p: Padding) -> Result<Tensor> {
        tensor::depthwise_conv2d(x, k, b, s, p)?.check_finite("depthwise_conv2d")
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)?.check_finite("add")
    }
    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.mul(b)?.check_finite("mul")
    }
    fn activation(&mut self, op: Activation, x: &Tensor) -> Result<Tensor> {
        tensor::elementwise(op, x).check_finite("activation")
    }
    fn global_average_pool(&mut self, x: &Tensor) -> Result<Tensor> {
        tensor::global_average_pool(x)
    }
    fn linear(&mut self, w: &Tensor, x: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
        tensor::linear(w, x, b)?.check_finite("linear")
    }
    fn channel_scale(&mut self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        tensor::channel_scale(x, s)?.check_finite("channel_scale")
    }
    fn softmax(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(tensor::softmax(x))
    }
    fn mask(&mut self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        x.mul(mask)
    }
    fn nll(&mut self, probs: &Tensor, target: usize, floor: f64) -> Result<Tensor> {
        nll_value(probs, target, floor)
    }
    fn sum(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(x.sum()))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, k: Var, b: Option<Var>, stride: usize, padding: Padding },
    Depthwise { x: Var, k: Var, b: Option<Var>, stride: usize, padding: Padding },
    Add(Var, Var),
    Mul(Var, Var),
    Act(Activation, Var),
    Gap(Var),
    Linear { w: Var, x: Var, b: Option<Var> },
    ChannelScale { x: Var, s: Var },
    Softmax(Var),
    Mask(Var, Tensor),
    Nll { p: Var, target: usize, floor: f64 },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for a single training example. Confined to one
/// thread; build a fresh tape per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Gradient of a scalar loss for every parameter registered on the tape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(&k, v)| (k, v))
    }

    /// Gradients in parameter order; panics if an id in `0..n` is missing.
    pub fn into_ordered(self, n: usize) -> Vec<Tensor> {
        let mut map = self.by_param;
        (0..n)
            .map(|i| map.remove(&ParamId(i)).expect("gradient for every parameter"))
            .collect()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        let value = value.check_finite(name)?;
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg_opt(&self, v: Option<Var>) -> bool {
        v.is_some_and(|v| self.rg(v))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(root.value.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let mut contributions: Vec<(Var, Tensor)> = Vec::with_capacity(3);
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d { x, k, b, stride, padding } | Op::Depthwise { x, k, b, stride, padding } => {
                    let xin = self.value(*x);
                    let kin = self.value(*k);
                    let (gx, gk, gb) = if matches!(node.op, Op::Conv2d { .. }) {
                        tensor::conv2d_backward(xin, kin, &g, *stride, *padding)?
                    } else {
                        tensor::depthwise_conv2d_backward(xin, kin, &g, *stride, *padding)?
                    };
                    contributions.push((*x, gx));
                    contributions.push((*k, gk));
                    if let Some(b) = b {
                        contributions.push((*b, gb));
                    }
                }
                Op::Add(a, b) => {
                    contributions.push((*a, g.clone()));
                    contributions.push((*b, g));
                }
                Op::Mul(a, b) => {
                    contributions.push((*a, g.mul(self.value(*b))?));
                    contributions.push((*b, g.mul(self.value(*a))?));
                }
                Op::Act(op, x) => {
                    let gx = tensor::elementwise_backward(*op, self.value(*x), &node.value, &g)?;
                    contributions.push((*x, gx));
                }
                Op::Gap(x) => {
                    let gx = tensor::global_average_pool_backward(self.value(*x).shape(), &g)?;
                    contributions.push((*x, gx));
                }
                Op::Linear { w, x, b } => {
                    let (gw, gx, gb) = tensor::linear_backward(self.value(*w), self.value(*x), &g)?;
                    contributions.push((*w, gw));
                    contributions.push((*x, gx));
                    if let Some(b) = b {
                        contributions.push((*b, gb));
                    }
                }
                Op::ChannelScale { x, s } => {
                    let (gx, gs) = tensor::channel_scale_backward(self.value(*x), self.value(*s), &g)?;
                    contributions.push((*x, gx));
                    contributions.push((*s, gs));
                }
                Op::Softmax(x) => {
                    contributions.push((*x, tensor::softmax_backward(&node.value, &g)?));
                }
                Op::Mask(x, m) => {
                    contributions.push((*x, g.mul(m)?));
                }
                Op::Nll { p, target, floor } => {
                    let probs = self.value(*p);
                    let pv = probs.data()[*target];
                    let mut gp = Tensor::zeros(probs.shape());
                    if pv > *floor {
                        gp.data_mut()[*target] = -g.item() / pv;
                    }
                    contributions.push((*p, gp));
                }
                Op::Sum(x) => {
                    contributions.push((*x, Tensor::full(self.value(*x).shape(), g.item())));
                }
            }
            for (var, contrib) in contributions {
                if !self.rg(var) {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let mut by_param = BTreeMap::new();
        for &(id, var) in &self.params {
            let g = if var.0 <= loss.0 {
                grads[var.0].take()
            } else {
                None
            };
            let g = g.unwrap_or_else(|| Tensor::zeros(self.value(var).shape()));
            match by_param.get_mut(&id) {
                Some(acc) => Tensor::add_assign(acc, &g)?,
                None => {
                    by_param.insert(id, g);
                }
            }
        }
        Ok(Gradients { by_param })
    }
}

impl Graph for Tape {
    type Value = Var;

    fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        self.nodes.push(Node {
            value: value.clone(),
            op: Op::Leaf,
            requires_grad: true,
        });
        let var = Var(self.nodes.len() - 1);
        self.params.push((id, var));
        var
    }

    fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn tensor<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.value(*v)
    }

    fn conv2d(&mut self, x: &Var, k: &Var, b: Option<&Var>, stride: usize, padding: Padding) -> Result<Var> {
        let value = tensor::conv2d(self.value(*x), self.value(*k), b.map(|b| self.value(*b)), stride, padding)?;
        let rg = self.rg(*x) || self.rg(*k) || self.rg_opt(b.copied());
        self.push(value, Op::Conv2d { x: *x, k: *k, b: b.copied(), stride, padding }, rg, "conv2d")
    }

    fn depthwise_conv2d(&mut self, x: &Var, k: &Var, b: Option<&Var>, stride: usize, padding: Padding) -> Result<Var> {
        let value =
            tensor::depthwise_conv2d(self.value(*x), self.value(*k), b.map(|b| self.value(*b)), stride, padding)?;
        let rg = self.rg(*x) || self.rg(*k) || self.rg_opt(b.copied());
        self.push(value, Op::Depthwise { x: *x, k: *k, b: b.copied(), stride, padding }, rg, "depthwise_conv2d")
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.value(*a).add(self.value(*b))?;
        let rg = self.rg(*a) || self.rg(*b);
        self.push(value, Op::Add(*a, *b), rg, "add")
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.value(*a).mul(self.value(*b))?;
        let rg = self.rg(*a) || self.rg(*b);
        self.push(value, Op::Mul(*a, *b), rg, "mul")
    }

    fn activation(&mut self, op: Activation, x: &Var) -> Result<Var> {
        let value = tensor::elementwise(op, self.value(*x));
        let rg = self.rg(*x);
        self.push(value, Op::Act(op, *x), rg, "activation")
    }

    fn global_average_pool(&mut self, x: &Var) -> Result<Var> {
        let value = tensor::global_average_pool(self.value(*x))?;
        let rg = self.rg(*x);
        self.push(value, Op::Gap(*x), rg, "global_average_pool")
    }

    fn linear(&mut self, w: &Var, x: &Var, b: Option<&Var>) -> Result<Var> {
        let value = tensor::linear(self.value(*w), self.value(*x), b.map(|b| self.value(*b)))?;
        let rg = self.rg(*w) || self.rg(*x) || self.rg_opt(b.copied());
        self.push(value, Op::Linear { w: *w, x: *x, b: b.copied() }, rg, "linear")
    }

    fn channel_scale(&mut self, x: &Var, s: &Var) -> Result<Var> {
        let value = tensor::channel_scale(self.value(*x), self.value(*s))?;
        let rg = self.rg(*x) || self.rg(*s);
        self.push(value, Op::ChannelScale { x: *x, s: *s }, rg, "channel_scale")
    }

    fn softmax(&mut self, x: &Var) -> Result<Var> {
        let value = tensor::softmax(self.value(*x));
        let rg = self.rg(*x);
        self.push(value, Op::Softmax(*x), rg, "softmax")
    }

    fn mask(&mut self, x: &Var, mask: &Tensor) -> Result<Var> {
        let value = self.value(*x).mul(mask)?;
        let rg = self.rg(*x);
        self.push(value, Op::Mask(*x, mask.clone()), rg, "mask")
    }

    fn nll(&mut self, probs: &Var, target: usize, floor: f64) -> Result<Var> {
        let value = nll_value(self.value(*probs), target, floor)?;
        let rg = self.rg(*probs);
        self.push(value, Op::Nll { p: *probs, target, floor }, rg, "nll")
    }

    fn sum(&mut self, x: &Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(*x).sum());
        let rg = self.rg(*x);
        self.push(value, Op::Sum(*x), rg, "sum")
    }
}
