//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive application appends one node holding the output value, the
//! primitive and its input node ids. Inputs always precede outputs, so a single
//! reverse sweep over the node list visits every node after all of its
//! consumers. Parameters enter the tape as cached leaves and their gradients are
//! scattered back into a [`ParamStore`] after the sweep.

use std::collections::HashMap;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable primitives the engine supports.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[m, k] x [k, n] -> [m, n]`
    MatMul,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    Concat { axis: usize },
    Sigmoid,
    Tanh,
    Softmax { axis: usize },
    /// Inverted dropout with a pre-drawn mask (entries are 0 or 1/(1-rate)).
    Dropout { mask: Vec<f64> },
    Sum,
    Mean,
    Log,
    /// Softmax cross-entropy of a logit vector against a class index.
    CrossEntropy { target: usize },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Concat { .. } => "concat",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Softmax { .. } => "softmax",
            Primitive::Dropout { .. } => "dropout",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Log => "log",
            Primitive::CrossEntropy { .. } => "cross_entropy",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul => Some(2),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }

    fn shape_error(&self, inputs: &[&Tensor], why: &str) -> Error {
        let shapes: Vec<_> = inputs.iter().map(|t| t.shape().to_vec()).collect();
        Error::Shape(format!("{}: {} (input shapes {:?})", self.name(), why, shapes))
    }

    /// Computes the primitive's output from its input values.
    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if let Some(n) = self.arity() {
            if inputs.len() != n {
                return Err(self.shape_error(inputs, &format!("expects {n} inputs")));
            }
        }
        match self {
            Primitive::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(self.shape_error(inputs, "operands are not conformable"));
                }
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                Tensor::new(vec![m, n], matmul(a.data(), b.data(), m, k, n))
            }
            Primitive::Add | Primitive::Sub | Primitive::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                if a.shape() != b.shape() {
                    return Err(self.shape_error(inputs, "shapes differ"));
                }
                let f: fn(f64, f64) -> f64 = match self {
                    Primitive::Add => |x, y| x + y,
                    Primitive::Sub => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            Primitive::Concat { axis } => concat(self, inputs, *axis),
            Primitive::Sigmoid => Ok(inputs[0].map(sigmoid)),
            Primitive::Tanh => Ok(inputs[0].map(f64::tanh)),
            Primitive::Softmax { axis } => {
                let x = inputs[0];
                if *axis >= x.shape().len() {
                    return Err(self.shape_error(inputs, &format!("axis {axis} out of range")));
                }
                Ok(softmax(x, *axis))
            }
            Primitive::Dropout { mask } => {
                let x = inputs[0];
                if mask.len() != x.numel() {
                    return Err(self.shape_error(inputs, "mask length differs from input"));
                }
                let data = x.data().iter().zip(mask).map(|(v, m)| v * m).collect();
                Tensor::new(x.shape().to_vec(), data)
            }
            Primitive::Sum => Ok(Tensor::scalar(inputs[0].data().iter().sum())),
            Primitive::Mean => {
                let x = inputs[0];
                if x.numel() == 0 {
                    return Err(self.shape_error(inputs, "mean of empty tensor"));
                }
                Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64))
            }
            Primitive::Log => Ok(inputs[0].map(f64::ln)),
            Primitive::CrossEntropy { target } => {
                let x = inputs[0];
                let is_vector = x.shape().len() == 1 || (x.shape().len() == 2 && x.shape()[0] == 1);
                if !is_vector || *target >= x.numel() {
                    return Err(self.shape_error(
                        inputs,
                        &format!("needs a logit vector containing class {target}"),
                    ));
                }
                let lse = log_sum_exp(x.data());
                Ok(Tensor::scalar(lse - x.data()[*target]))
            }
        }
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

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

// (outer, axis length, inner) strides of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn concat(prim: &Primitive, inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| prim.shape_error(inputs, "needs at least one input"))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(prim.shape_error(inputs, &format!("axis {axis} out of range")));
    }
    for t in inputs {
        let s = t.shape();
        let compatible = s.len() == rank
            && s.iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (x, y))| d == axis || x == y);
        if !compatible {
            return Err(prim.shape_error(inputs, "inputs disagree off the concat axis"));
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = inputs.iter().map(|t| t.shape()[axis]).sum();
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for t in inputs {
            let chunk = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::new(shape, data)
}

fn softmax(x: &Tensor, axis: usize) -> Tensor {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| o * len * inner + a * inner + i;
            let max = (0..len).map(|a| src[at(a)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for a in 0..len {
                let e = (src[at(a)] - max).exp();
                out[at(a)] = e;
                total += e;
            }
            for a in 0..len {
                out[at(a)] /= total;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("softmax preserves shape")
}

#[derive(Clone, Debug)]
enum Origin {
    Leaf,
    Param(ParamId),
    Op { prim: Primitive, inputs: Vec<Var> },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    origin: Origin,
}

/// A borrowed view of one primitive application on the tape.
#[derive(Clone, Copy, Debug)]
pub struct Record<'a> {
    pub output: Var,
    pub prim: &'a Primitive,
    pub inputs: &'a [Var],
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the differentiated output.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_cache: HashMap<ParamId, Var>,
    #[cfg(test)]
    pub(crate) corrupt_tanh_backward: bool,
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

    fn push(&mut self, value: Tensor, origin: Origin) -> Var {
        self.nodes.push(Node { value, origin });
        Var(self.nodes.len() - 1)
    }

    /// A constant or input leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Origin::Leaf)
    }

    /// A leaf bound to parameter `id`. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_cache.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Origin::Param(id));
        self.param_cache.insert(id, v);
        v
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// The parameter a leaf was created from, if any.
    pub fn param_id(&self, var: Var) -> Option<ParamId> {
        match self.nodes[var.0].origin {
            Origin::Param(id) => Some(id),
            _ => None,
        }
    }

    /// Applies `prim` to `inputs` and records the application.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = prim.forward(&values)?;
        Ok(self.push(
            out,
            Origin::Op {
                prim,
                inputs: inputs.to_vec(),
            },
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat { axis }, parts)
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let rank = parts
            .first()
            .map(|v| self.value(*v).shape().len())
            .unwrap_or(1);
        self.concat(parts, rank.saturating_sub(1))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Softmax { axis }, &[a])
    }

    /// Inverted dropout. At rate 0 the mask is all ones and no randomness is drawn.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} not in [0, 1)")));
        }
        let n = self.value(a).numel();
        let mask = if rate == 0.0 {
            vec![1.0; n]
        } else {
            let keep = 1.0 / (1.0 - rate);
            (0..n)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect()
        };
        self.apply(Primitive::Dropout { mask }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        self.apply(Primitive::CrossEntropy { target }, &[logits])
    }

    /// The recorded primitive applications, in recording order.
    pub fn records(&self) -> impl Iterator<Item = Record<'_>> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match &n.origin {
            Origin::Op { prim, inputs } => Some(Record {
                output: Var(i),
                prim,
                inputs,
            }),
            _ => None,
        })
    }

    /// Re-evaluates every recorded primitive from the leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.origin {
                Origin::Leaf | Origin::Param(_) => node.value.clone(),
                Origin::Op { prim, inputs } => {
                    let args: Vec<&Tensor> = inputs.iter().map(|v| &values[v.0]).collect();
                    prim.forward(&args)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let out = self.value(loss);
        if !out.is_scalar() {
            return Err(Error::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(out.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Origin::Op { prim, inputs } = &self.nodes[idx].origin else {
                continue;
            };
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let input_grads = self.vjp(prim, inputs, &self.nodes[idx].value, &g);
            for (input, ig) in inputs.iter().zip(input_grads) {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Tape::backward`] and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        for (&id, &var) in &self.param_cache {
            if let Some(g) = grads.get(var) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(grads)
    }

    // Vector-Jacobian product of one record.
    fn vjp(&self, prim: &Primitive, inputs: &[Var], out: &Tensor, g: &Tensor) -> Vec<Tensor> {
        let x = |i: usize| &self.nodes[inputs[i].0].value;
        let like = |t: &Tensor, data: Vec<f64>| Tensor::new(t.shape().to_vec(), data).unwrap();
        match prim {
            Primitive::MatMul => {
                let (a, b) = (x(0), x(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let (gd, ad, bd) = (g.data(), a.data(), b.data());
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += gd[i * n + j] * bd[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        for j in 0..n {
                            db[p * n + j] += aip * gd[i * n + j];
                        }
                    }
                }
                vec![like(a, da), like(b, db)]
            }
            Primitive::Add => vec![g.clone(), g.clone()],
            Primitive::Sub => vec![g.clone(), g.map(|v| -v)],
            Primitive::Mul => {
                let (a, b) = (x(0), x(1));
                let da = g.data().iter().zip(b.data()).map(|(g, b)| g * b).collect();
                let db = g.data().iter().zip(a.data()).map(|(g, a)| g * a).collect();
                vec![like(a, da), like(b, db)]
            }
            Primitive::Concat { axis } => {
                let (outer, _, inner) = split_axis(out.shape(), *axis);
                let total = out.shape()[*axis] * inner;
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|v| {
                        let t = &self.nodes[v.0].value;
                        let chunk = t.shape()[*axis] * inner;
                        let mut data = Vec::with_capacity(t.numel());
                        for o in 0..outer {
                            let start = o * total + offset;
                            data.extend_from_slice(&g.data()[start..start + chunk]);
                        }
                        offset += chunk;
                        like(t, data)
                    })
                    .collect()
            }
            Primitive::Sigmoid => {
                let d = g.data().iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                vec![like(out, d)]
            }
            Primitive::Tanh => {
                #[cfg(test)]
                let scale = if self.corrupt_tanh_backward { 1.5 } else { 1.0 };
                #[cfg(not(test))]
                let scale = 1.0;
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| scale * g * (1.0 - y * y))
                    .collect();
                vec![like(out, d)]
            }
            Primitive::Softmax { axis } => {
                let (outer, len, inner) = split_axis(out.shape(), *axis);
                let (y, gd) = (out.data(), g.data());
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| o * len * inner + a * inner + i;
                        let dot: f64 = (0..len).map(|a| gd[at(a)] * y[at(a)]).sum();
                        for a in 0..len {
                            d[at(a)] = y[at(a)] * (gd[at(a)] - dot);
                        }
                    }
                }
                vec![like(out, d)]
            }
            Primitive::Dropout { mask } => {
                let d = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                vec![like(out, d)]
            }
            Primitive::Sum => {
                let a = x(0);
                vec![Tensor::filled(a.shape(), g.item())]
            }
            Primitive::Mean => {
                let a = x(0);
                vec![Tensor::filled(a.shape(), g.item() / a.numel() as f64)]
            }
            Primitive::Log => {
                let a = x(0);
                let d = g.data().iter().zip(a.data()).map(|(g, a)| g / a).collect();
                vec![like(a, d)]
            }
            Primitive::CrossEntropy { target } => {
                let a = x(0);
                let lse = log_sum_exp(a.data());
                let gv = g.item();
                let d = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(c, v)| {
                        let p = (v - lse).exp();
                        gv * (p - if c == *target { 1.0 } else { 0.0 })
                    })
                    .collect();
                vec![like(a, d)]
            }
        }
    }
}
