//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation in execution order, so the tape is
//! topologically sorted by construction. Parameters are read by reference
//! from a [`ParamStore`]; [`Graph::backward`] returns owned [`Gradients`]
//! that the caller folds back into the store once the graph is dropped.
//!
//! ```
//! use vibed_core::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.leaf(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
//! let loss = g.sum(g.softmax_rows(x).unwrap());
//! let grads = g.backward(loss).unwrap();
//! assert!(grads.get(x).unwrap().data().iter().all(|d| d.abs() < 1e-12));
//! ```

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops::Deref;

use rand::Rng;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::{matmul_nt_acc, matmul_tn_acc, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Deref for Value<'_> {
    type Target = Tensor;

    fn deref(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Mask(Var, Tensor),
    SliceCols {
        x: Var,
        start: usize,
        end: usize,
    },
    ConcatCols(Vec<Var>),
    Row(Var, usize),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Average(Vec<Var>),
    Reshape(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Tensor,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddBias(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::SoftmaxRows(a)
            | Op::Mask(a, _)
            | Op::Row(a, _)
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::Reshape(a) => vec![*a],
            Op::SliceCols { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) | Op::Average(vs) => vs.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated.
pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: RefCell<Vec<Node<'p>>>,
    param_vars: RefCell<HashMap<ParamId, Var>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self {
            store: None,
            nodes: RefCell::new(Vec::new()),
            param_vars: RefCell::new(HashMap::new()),
        }
    }
}

impl<'p> Graph<'p> {
    /// A graph with no parameter store; only leaves and constants.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// Every node in creation order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.len()).map(Var)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Inputs of the operation that produced `v`.
    pub fn op_inputs(&self, v: Var) -> Vec<Var> {
        self.nodes.borrow()[v.0].op.inputs()
    }

    pub fn value(&self, v: Var) -> Tensor {
        (*self.nodes.borrow()[v.0].value).clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn push_node(&self, value: Value<'p>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|v| nodes[v.0].requires_grad)
        };
        self.push_node(Value::Owned(value), op, requires_grad)
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push_node(Value::Owned(value), Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_node(Value::Owned(value), Op::Constant, false)
    }

    /// Reads a parameter. Repeated reads of the same id share one node.
    ///
    /// # Panics
    /// If the graph was built without a store.
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.borrow().get(&id) {
            return v;
        }
        let store = self
            .store
            .expect("Graph::param requires a graph built with_params");
        let p = store.get(id);
        let v = self.push_node(Value::Borrowed(&p.value), Op::Param(id), p.trainable);
        self.param_vars.borrow_mut().insert(id, v);
        v
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.matmul(&nodes[b.0].value)?
        };
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let out = self.nodes.borrow()[a.0].value.transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.shape() != y.shape() {
                return Err(Error::dim("add", x.shape(), y.shape()));
            }
            x.zip_map(y, |p, q| p + q)
        };
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a length-`n` bias to every row of an `m × n` input.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (xv, bv) = (&nodes[x.0].value, &nodes[bias.0].value);
            let (_, n) = xv.matrix_dims();
            if bv.len() != n {
                return Err(Error::dim("add_bias", xv.shape(), bv.shape()));
            }
            let mut data = xv.data().to_vec();
            for row in data.chunks_mut(n) {
                for (o, b) in row.iter_mut().zip(bv.data()) {
                    *o += b;
                }
            }
            Tensor::from_parts(xv.shape().to_vec(), data)
        };
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.shape() != y.shape() {
                return Err(Error::dim("mul", x.shape(), y.shape()));
            }
            x.zip_map(y, |p, q| p * q)
        };
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        let out = self.nodes.borrow()[a.0].value.map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn relu(&self, a: Var) -> Var {
        let out = self.nodes.borrow()[a.0].value.map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.nodes.borrow()[a.0].value.map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.nodes.borrow()[a.0].value.map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// Softmax over the last axis, stabilized by subtracting each row's max.
    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if !x.all_finite() {
                return Err(Error::Numeric {
                    op: "softmax_rows",
                    message: "input contains non-finite values".into(),
                });
            }
            let (_, n) = x.matrix_dims();
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(n) {
                softmax_in_place(row);
            }
            Tensor::from_parts(x.shape().to_vec(), data)
        };
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    /// Normalizes over the last axis to zero mean and unit (population)
    /// variance, then applies `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (out, xhat, inv_std) = {
            let nodes = self.nodes.borrow();
            let (xv, gv, bv) = (&nodes[x.0].value, &nodes[gain.0].value, &nodes[bias.0].value);
            let (rows, d) = xv.matrix_dims();
            if gv.len() != d || bv.len() != d {
                return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
            }
            let mut xhat = Vec::with_capacity(rows * d);
            let mut out = Vec::with_capacity(rows * d);
            let mut inv_std = Vec::with_capacity(rows);
            for row in xv.data().chunks(d) {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                let s = 1.0 / (var + eps).sqrt();
                inv_std.push(s);
                for (j, v) in row.iter().enumerate() {
                    let h = (v - mean) * s;
                    xhat.push(h);
                    out.push(h * gv.data()[j] + bv.data()[j]);
                }
            }
            let shape = xv.shape().to_vec();
            (
                Tensor::from_parts(shape.clone(), out),
                Tensor::from_parts(shape, xhat),
                inv_std,
            )
        };
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Inverted dropout. In eval mode, or with `rate == 0`, returns `x`
    /// itself.
    pub fn dropout(&self, x: Var, rate: f64, training: bool, rng: &mut SeededRng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let (out, mask) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let draws: Vec<f64> = (0..xv.len())
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            let mask = Tensor::from_parts(xv.shape().to_vec(), draws);
            (xv.zip_map(&mask, |a, m| a * m), mask)
        };
        Ok(self.push(out, Op::Mask(x, mask)))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let (rows, n) = xv.matrix_dims();
            if start >= end || end > n {
                return Err(Error::shape(
                    "slice_cols",
                    format!("range {start}..{end} invalid for width {n}"),
                ));
            }
            let w = end - start;
            let mut data = Vec::with_capacity(rows * w);
            for row in xv.data().chunks(n) {
                data.extend_from_slice(&row[start..end]);
            }
            let mut shape = xv.shape().to_vec();
            *shape.last_mut().unwrap() = w;
            Tensor::from_parts(shape, data)
        };
        Ok(self.push(out, Op::SliceCols { x, start, end }))
    }

    /// Joins inputs with equal leading size along the last axis.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let first = parts
                .first()
                .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
            let fv = &nodes[first.0].value;
            let (rows, _) = fv.matrix_dims();
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let pv = &nodes[p.0].value;
                if pv.rank() != fv.rank() || pv.matrix_dims().0 != rows {
                    return Err(Error::dim("concat_cols", fv.shape(), pv.shape()));
                }
                widths.push(pv.matrix_dims().1);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (p, &w) in parts.iter().zip(&widths) {
                    data.extend_from_slice(&nodes[p.0].value.data()[r * w..(r + 1) * w]);
                }
            }
            let mut shape = fv.shape().to_vec();
            *shape.last_mut().unwrap() = total;
            Tensor::from_parts(shape, data)
        };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Row `i` of a matrix as a `1 × n` matrix.
    pub fn row(&self, x: Var, i: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let (rows, n) = xv.matrix_dims();
            if i >= rows {
                return Err(Error::shape("row", format!("row {i} out of range for {rows} rows")));
            }
            Tensor::from_parts(vec![1, n], xv.row(i).to_vec())
        };
        Ok(self.push(out, Op::Row(x, i)))
    }

    /// Stacks matrices with equal width vertically.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let first = parts
                .first()
                .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
            let n = nodes[first.0].value.matrix_dims().1;
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let pv = &nodes[p.0].value;
                let (r, w) = pv.matrix_dims();
                if w != n {
                    return Err(Error::dim("concat_rows", nodes[first.0].value.shape(), pv.shape()));
                }
                rows += r;
                data.extend_from_slice(pv.data());
            }
            Tensor::from_parts(vec![rows, n], data)
        };
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Mean over rows of an `m × n` matrix, giving `1 × n`.
    pub fn mean_rows(&self, x: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let (rows, n) = xv.matrix_dims();
            let mut acc = vec![0.0; n];
            for row in xv.data().chunks(n) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= rows as f64);
            Tensor::from_parts(vec![1, n], acc)
        };
        self.push(out, Op::MeanRows(x))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&self, x: Var) -> Var {
        let s = self.nodes.borrow()[x.0].value.sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Elementwise mean of same-shaped inputs.
    pub fn average(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let first = parts
                .first()
                .ok_or_else(|| Error::Contract("average of zero values".into()))?;
            let mut acc = (*nodes[first.0].value).clone();
            for p in &parts[1..] {
                let pv = &nodes[p.0].value;
                if pv.shape() != acc.shape() {
                    return Err(Error::dim("average", acc.shape(), pv.shape()));
                }
                acc.add_assign(pv);
            }
            let n = parts.len() as f64;
            acc.map(|x| x / n)
        };
        Ok(self.push(out, Op::Average(parts.to_vec())))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.nodes.borrow()[x.0].value.reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Views a vector as a `1 × n` row; matrices pass through untouched.
    pub fn as_row(&self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() == 2 && shape[0] == 1 {
            return Ok(x);
        }
        if shape.len() != 1 {
            return Err(Error::shape("as_row", format!("expected a vector, got {shape:?}")));
        }
        self.reshape(x, &[1, shape[0]])
    }

    /// Negative log-likelihood of `label` under `softmax(logits)`, via
    /// log-sum-exp.
    pub fn cross_entropy(&self, logits: Var, label: usize) -> Result<Var> {
        let (loss, probs) = {
            let nodes = self.nodes.borrow();
            let lv = &nodes[logits.0].value;
            if label >= lv.len() {
                return Err(Error::Contract(format!(
                    "label {label} out of range for {} classes",
                    lv.len()
                )));
            }
            if !lv.all_finite() {
                return Err(Error::Numeric {
                    op: "cross_entropy",
                    message: "logits contain non-finite values".into(),
                });
            }
            let max = lv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = lv.data().iter().map(|z| (z - max).exp()).sum();
            let lse = max + sum_exp.ln();
            let probs = lv.map(|z| (z - max).exp() / sum_exp);
            (lse - lv.data()[label], probs)
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
        ))
    }

    /// Propagates `∂loss/∂·` to every recorded value that requires a
    /// gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = nodes
            .get(loss.0)
            .ok_or_else(|| Error::Contract(format!("{loss:?} is not on this graph")))?;
        if !root.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));
        }

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            propagate(&nodes, &mut grads, i, &dy);
            grads[i] = Some(dy);
        }

        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, i)| self.grads[i].as_ref())
    }

    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, i)| self.grads[i].as_ref().map(|g| (id, g)))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn grad_buf<'a>(nodes: &[Node<'_>], grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut Tensor> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape())))
}

fn propagate(nodes: &[Node<'_>], grads: &mut [Option<Tensor>], i: usize, dy: &Tensor) {
    let node = &nodes[i];
    let out = &*node.value;
    match &node.op {
        Op::Leaf | Op::Constant | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&*nodes[a.0].value, &*nodes[b.0].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if let Some(da) = grad_buf(nodes, grads, *a) {
                matmul_nt_acc(dy.data(), bv.data(), da.data_mut(), m, n, k);
            }
            if let Some(db) = grad_buf(nodes, grads, *b) {
                matmul_tn_acc(av.data(), dy.data(), db.data_mut(), m, k, n);
            }
        }
        Op::Transpose(a) => {
            if let Some(da) = grad_buf(nodes, grads, *a) {
                da.add_assign(&dy.transpose().expect("transpose of a matrix gradient"));
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(d) = grad_buf(nodes, grads, *v) {
                    d.add_assign(dy);
                }
            }
        }
        Op::AddBias(x, b) => {
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                dx.add_assign(dy);
            }
            if let Some(db) = grad_buf(nodes, grads, *b) {
                let n = db.len();
                for row in dy.data().chunks(n) {
                    for (g, d) in db.data_mut().iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&*nodes[a.0].value, &*nodes[b.0].value);
            if let Some(da) = grad_buf(nodes, grads, *a) {
                for ((g, d), y) in da.data_mut().iter_mut().zip(dy.data()).zip(bv.data()) {
                    *g += d * y;
                }
            }
            if let Some(db) = grad_buf(nodes, grads, *b) {
                for ((g, d), x) in db.data_mut().iter_mut().zip(dy.data()).zip(av.data()) {
                    *g += d * x;
                }
            }
        }
        Op::Scale(a, k) => {
            if let Some(da) = grad_buf(nodes, grads, *a) {
                for (g, d) in da.data_mut().iter_mut().zip(dy.data()) {
                    *g += k * d;
                }
            }
        }
        Op::Relu(a) => {
            let xv = &*nodes[a.0].value;
            if let Some(da) = grad_buf(nodes, grads, *a) {
                for ((g, d), x) in da.data_mut().iter_mut().zip(dy.data()).zip(xv.data()) {
                    if *x > 0.0 {
                        *g += d;
                    }
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(da) = grad_buf(nodes, grads, *a) {
                for ((g, d), y) in da.data_mut().iter_mut().zip(dy.data()).zip(out.data()) {
                    *g += d * y * (1.0 - y);
                }
            }
        }
        Op::Tanh(a) => {
            if let Some(da) = grad_buf(nodes, grads, *a) {
                for ((g, d), y) in da.data_mut().iter_mut().zip(dy.data()).zip(out.data()) {
                    *g += d * (1.0 - y * y);
                }
            }
        }
        Op::SoftmaxRows(a) => {
            if let Some(da) = grad_buf(nodes, grads, *a) {
                let n = out.len_last();
                for ((g, d), y) in da
                    .data_mut()
                    .chunks_mut(n)
                    .zip(dy.data().chunks(n))
                    .zip(out.data().chunks(n))
                {
                    let s: f64 = d.iter().zip(y).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        g[j] += y[j] * (d[j] - s);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let gv = &*nodes[gain.0].value;
            let d = gv.len();
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                let mut dxhat = vec![0.0; d];
                for (r, ((g, dyr), xh)) in dx
                    .data_mut()
                    .chunks_mut(d)
                    .zip(dy.data().chunks(d))
                    .zip(xhat.data().chunks(d))
                    .enumerate()
                {
                    for j in 0..d {
                        dxhat[j] = dyr[j] * gv.data()[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        g[j] += inv_std[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                    }
                }
            }
            if let Some(dg) = grad_buf(nodes, grads, *gain) {
                for (dyr, xh) in dy.data().chunks(d).zip(xhat.data().chunks(d)) {
                    for j in 0..d {
                        dg.data_mut()[j] += dyr[j] * xh[j];
                    }
                }
            }
            if let Some(db) = grad_buf(nodes, grads, *bias) {
                for dyr in dy.data().chunks(d) {
                    for j in 0..d {
                        db.data_mut()[j] += dyr[j];
                    }
                }
            }
        }
        Op::Mask(a, mask) => {
            if let Some(da) = grad_buf(nodes, grads, *a) {
                for ((g, d), m) in da.data_mut().iter_mut().zip(dy.data()).zip(mask.data()) {
                    *g += d * m;
                }
            }
        }
        Op::SliceCols { x, start, end } => {
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                let n = dx.len_last();
                let w = end - start;
                for (g, d) in dx.data_mut().chunks_mut(n).zip(dy.data().chunks(w)) {
                    for j in 0..w {
                        g[start + j] += d[j];
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = dy.len_last();
            let mut offset = 0;
            for p in parts {
                let w = nodes[p.0].value.len_last();
                if let Some(dp) = grad_buf(nodes, grads, *p) {
                    for (g, d) in dp.data_mut().chunks_mut(w).zip(dy.data().chunks(total)) {
                        for j in 0..w {
                            g[j] += d[offset + j];
                        }
                    }
                }
                offset += w;
            }
        }
        Op::Row(x, r) => {
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                let n = dx.len_last();
                for (g, d) in dx.data_mut()[r * n..(r + 1) * n].iter_mut().zip(dy.data()) {
                    *g += d;
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = nodes[p.0].value.len();
                if let Some(dp) = grad_buf(nodes, grads, *p) {
                    for (g, d) in dp.data_mut().iter_mut().zip(&dy.data()[offset..offset + len]) {
                        *g += d;
                    }
                }
                offset += len;
            }
        }
        Op::MeanRows(x) => {
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                let (rows, n) = dx.matrix_dims();
                let inv = 1.0 / rows as f64;
                for g in dx.data_mut().chunks_mut(n) {
                    for j in 0..n {
                        g[j] += dy.data()[j] * inv;
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                let d = dy.item();
                dx.data_mut().iter_mut().for_each(|g| *g += d);
            }
        }
        Op::Average(parts) => {
            let inv = 1.0 / parts.len() as f64;
            for p in parts {
                if let Some(dp) = grad_buf(nodes, grads, *p) {
                    for (g, d) in dp.data_mut().iter_mut().zip(dy.data()) {
                        *g += d * inv;
                    }
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(dx) = grad_buf(nodes, grads, *x) {
                for (g, d) in dx.data_mut().iter_mut().zip(dy.data()) {
                    *g += d;
                }
            }
        }
        Op::CrossEntropy {
            logits,
            label,
            probs,
        } => {
            if let Some(dl) = grad_buf(nodes, grads, *logits) {
                let d = dy.item();
                for (j, (g, p)) in dl.data_mut().iter_mut().zip(probs.data()).enumerate() {
                    let onehot = if j == *label { 1.0 } else { 0.0 };
                    *g += d * (p - onehot);
                }
            }
        }
    }
}
