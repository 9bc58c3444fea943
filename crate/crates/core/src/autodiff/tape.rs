//! Reverse-mode tape over whole tensors.
//!
//! Each operation appends a node holding its forward value and whatever it
//! needs for the backward rule. Nodes only reference earlier nodes, so the
//! insertion order is a topological order and `backward` is a single
//! reverse sweep.

use std::collections::BTreeMap;

use crate::ail::{self, Incorporation};
use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{config, contract, Result};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::{activation, concat_channels, linear, norm, pool, split_channels};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Incorporate {
        content: Var,
        attention: Var,
        spec: Incorporation,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: norm::BnStats<T>,
        batch_mode: bool,
    },
    Concat {
        parts: Vec<Var>,
        widths: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Reshape(Var),
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    Mul(Var, Var),
    Sum(Var),
    WeightedSum {
        x: Var,
        weights: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Conv { .. } => "conv",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::MaxPool { .. } => "maxpool",
            Op::Incorporate { .. } => "incorporate",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Concat { .. } => "concat",
            Op::Linear { .. } => "linear",
            Op::Reshape(_) => "reshape",
            Op::SoftmaxCe { .. } => "softmax_ce",
            Op::Mul(..) => "mul",
            Op::Sum(_) => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn op_kind(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.kind()
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let y = conv::conv2d_forward(self.value(x), self.value(w), self.value(b), geom)?;
        Ok(self.push(y, Op::Conv { x, w, b, geom }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = activation::relu(self.value(x));
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = activation::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid(x))
    }

    pub fn maxpool(&mut self, x: Var, geom: ConvGeom) -> Result<Var> {
        let (y, argmax) = pool::maxpool_forward(self.value(x), geom)?;
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    /// Attention-weighted window average of `content` gated by `attention`.
    pub fn incorporate(&mut self, content: Var, attention: Var, spec: Incorporation) -> Result<Var> {
        let y = ail::incorporate_map(self.value(content), self.value(attention), &spec)?;
        Ok(self.push(
            y,
            Op::Incorporate {
                content,
                attention,
                spec,
            },
        ))
    }

    /// Batch norm with batch statistics when `batch_mode`, else with the given running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&Tensor<T>, &Tensor<T>),
        batch_mode: bool,
    ) -> Result<(Var, norm::BnStats<T>)> {
        let c = self.value(gamma).len();
        if *self.value(x).shape().last().unwrap() != c {
            return Err(config(format!(
                "batch norm over {c} channels given {:?}",
                self.value(x).shape()
            )));
        }
        let stats = if batch_mode {
            norm::batch_stats(self.value(x))
        } else {
            norm::running_stats(running.0, running.1)
        };
        let y = norm::bn_forward(self.value(x), self.value(gamma), self.value(beta), &stats);
        let v = self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                stats: stats.clone(),
                batch_mode,
            },
        );
        Ok((v, stats))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let widths = values.iter().map(|t| *t.shape().last().unwrap()).collect();
        let y = concat_channels(&values)?;
        Ok(self.push(
            y,
            Op::Concat {
                parts: parts.to_vec(),
                widths,
            },
        ))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = linear::linear_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x)))
    }

    /// Summed (not averaged) cross-entropy of a `(B, K)` logit batch.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = linear::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Elementwise product of two equally shaped nodes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// `Σ weights ⊙ x` for a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        weights.expect_shape(self.value(x).shape())?;
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }))
    }

    /// Reverse sweep from a scalar root. Gradients are kept for leaves
    /// (inputs and parameters) only.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        self.sweep(root, false)
    }

    /// Like [`Tape::backward`] but keeps the gradient of every node.
    pub fn backward_retain_all(&self, root: Var) -> Result<Gradients<T>> {
        self.sweep(root, true)
    }

    fn sweep(&self, root: Var, retain_all: bool) -> Result<Gradients<T>> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(contract(format!(
                "backward needs a scalar root, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape(), T::one()));

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g).expect("gradient shape"),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv { x, w, b, geom } => {
                    let (dx, dw, db) = conv::conv2d_backward(self.value(*x), self.value(*w), *geom, &g)?;
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, db);
                }
                Op::Relu(x) => {
                    let dx = activation::relu_backward(self.value(*x), &g);
                    acc(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let dx = activation::sigmoid_backward(&node.value, &g);
                    acc(&mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let dx = pool::maxpool_backward(self.value(*x).shape(), argmax, &g);
                    acc(&mut grads, *x, dx);
                }
                Op::Incorporate {
                    content,
                    attention,
                    spec,
                } => {
                    let (xv, wv) = (self.value(*content), self.value(*attention));
                    let dx = ail::ail_backward_content(&g, wv, spec)?;
                    let dw = ail::ail_backward_attention(&g, xv, wv, spec)?;
                    acc(&mut grads, *content, dx);
                    acc(&mut grads, *attention, dw);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    stats,
                    batch_mode,
                } => {
                    let (dx, dg, db) = norm::bn_backward(self.value(*x), self.value(*gamma), stats, &g, *batch_mode);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dg);
                    acc(&mut grads, *beta, db);
                }
                Op::Concat { parts, widths } => {
                    for (p, d) in parts.iter().zip(split_channels(&g, widths)) {
                        acc(&mut grads, *p, d);
                    }
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = linear::linear_backward(self.value(*x), self.value(*w), &g);
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                    acc(&mut grads, *b, db);
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    acc(&mut grads, *x, g.clone().reshape(&shape)?);
                }
                Op::SoftmaxCe { logits, labels, probs } => {
                    let scale = g.data()[0];
                    let k = probs.shape()[1];
                    let mut d = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        d.data_mut()[r * k + l] -= T::one();
                    }
                    acc(&mut grads, *logits, d.scale(scale));
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |g, v| g * v)?;
                    let db = g.zip_map(self.value(*a), |g, v| g * v)?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Sum(x) => {
                    let s = self.value(*x).shape().to_vec();
                    acc(&mut grads, *x, Tensor::full(&s, g.data()[0]));
                }
                Op::WeightedSum { x, weights } => {
                    acc(&mut grads, *x, weights.scale(g.data()[0]));
                }
            }
            if retain_all {
                grads[i] = Some(g);
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .take(root.0 + 1)
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((Var(i), id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(Var, ParamId)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a node, if it was reached (and retained).
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient per parameter, summed over every use on the tape.
    pub fn by_param(&self) -> BTreeMap<ParamId, Tensor<T>> {
        let mut out: BTreeMap<ParamId, Tensor<T>> = BTreeMap::new();
        for &(v, id) in &self.params {
            if let Some(g) = self.wrt(v) {
                match out.get_mut(&id) {
                    Some(e) => e.add_assign(g).expect("param grad shape"),
                    None => {
                        out.insert(id, g.clone());
                    }
                }
            }
        }
        out
    }

    /// Add every parameter gradient into the store's `grad` fields.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(v, id) in &self.params {
            if let Some(g) = self.wrt(v) {
                store.get_mut(id).grad.add_assign(g).expect("param grad shape");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: Tensor<f64>) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", value).unwrap();
        (s, id)
    }

    #[test]
    fn sum_gives_ones() {
        let (mut s, id) = store_with(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0));
        let mut t = Tape::new();
        let p = t.param(&s, id);
        let l = t.sum(p);
        t.backward(l).unwrap().accumulate_into(&mut s);
        assert!(s.get(id).grad.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn dead_relu_gives_zero() {
        let (mut s, id) = store_with(Tensor::full(&[4], -0.5));
        let mut t = Tape::new();
        let p = t.param(&s, id);
        let r = t.relu(p);
        let l = t.sum(r);
        t.backward(l).unwrap().accumulate_into(&mut s);
        assert!(s.get(id).grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let (mut s, id) = store_with(Tensor::zeros(&[3]));
        let mut t = Tape::new();
        let p = t.param(&s, id);
        let r = t.sigmoid(p);
        let l = t.sum(r);
        t.backward(l).unwrap().accumulate_into(&mut s);
        assert!(s.get(id).grad.data().iter().all(|&g| (g - 0.25).abs() < 1e-15));
    }

    #[test]
    fn accumulation_contract() {
        let (mut s, id) = store_with(Tensor::full(&[2], 3.0));
        let run = |s: &mut ParamStore<f64>| {
            let mut t = Tape::new();
            let p = t.param(s, id);
            let l = t.sum(p);
            t.backward(l).unwrap().accumulate_into(s);
        };
        run(&mut s);
        run(&mut s);
        assert_eq!(s.get(id).grad.data(), &[2.0, 2.0]);
        s.zero_grad();
        assert_eq!(s.get(id).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn shared_parameter_sums_consumers() {
        let (s, id) = store_with(Tensor::full(&[2], 1.0));
        let mut t = Tape::new();
        let a = t.param(&s, id);
        let b = t.param(&s, id);
        let c = t.concat(&[a, b]).unwrap();
        let l = t
            .weighted_sum(c, Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let g = t.backward(l).unwrap().by_param();
        assert_eq!(g[&id].data(), &[4.0, 6.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut t = Tape::<f32>::new();
        let x = t.input(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(x), Err(crate::Error::Contract(_))));
    }
}
