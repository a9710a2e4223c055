//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] records operations as they execute (define-by-run); a fresh
//! graph is built for every minibatch. Tensors are immutable value holders;
//! a tensor may additionally be bound to a node of one graph, in which case
//! operations on it are recorded and [`Graph::backward`] can later return
//! `d(loss)/d(tensor)` for it. Operations on unbound tensors just compute
//! values, which is what inference paths use.
//!
//! Shapes are row-major with rank 0 (scalar), 1, or 2; sequences are stored
//! as `T x D` matrices, one frame per row.

mod gradcheck;

pub use gradcheck::{central_difference, check_gradients, CheckReport};

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    /// Tracked input (parameter or data); gradients accumulate here.
    Leaf,
    /// Untracked value lifted into the graph; gradients stop here.
    Constant,
    Add,
    Sub,
    Mul,
    Matmul,
    Concat { axis: usize },
    Slice { axis: usize, start: usize },
    Sum,
    Mean,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Square,
    SoftmaxLastDim,
    Scale(f64),
    Clamp { lo: f64, hi: f64 },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    data: Arc<Vec<f64>>,
    shape: Vec<usize>,
}

#[derive(Default)]
struct GraphInner {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// A dynamically built computation graph. Nodes are appended in execution
/// order, so the node list is topologically sorted by construction.
#[derive(Clone, Default)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn same_as(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn push(&self, op: Op, inputs: Vec<NodeId>, data: Vec<f64>, shape: Vec<usize>) -> Tensor {
        let data = Arc::new(data);
        let id = {
            let mut g = self.inner.borrow_mut();
            g.nodes.push(Node {
                op,
                inputs,
                data: Arc::clone(&data),
                shape: shape.clone(),
            });
            g.nodes.len() - 1
        };
        Tensor {
            shape,
            data,
            node: Some((self.clone(), id)),
        }
    }

    /// Register `t`'s value as a tracked input of this graph.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        self.push(
            Op::Leaf,
            Vec::new(),
            t.data.as_ref().clone(),
            t.shape.clone(),
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Reverse sweep from a scalar loss. Every node reachable from `loss`
    /// receives `d(loss)/d(node)`; unreachable nodes keep a zero gradient.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let (graph, loss_id) = match &loss.node {
            Some((g, id)) if g.same_as(self) => (g.clone(), *id),
            Some(_) | None => return Err(Error::ForeignTensor),
        };
        if loss.numel() != 1 {
            return Err(Error::NotScalar {
                shape: loss.shape.clone(),
            });
        }
        let mut inner = self.inner.borrow_mut();
        if inner.backward_done {
            return Err(Error::BackwardTwice);
        }
        inner.backward_done = true;

        let n = inner.nodes.len();
        let mut slots: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        slots[loss_id] = Some(vec![1.0]);

        // Nodes after the loss cannot feed it; construction order is topological.
        for id in (0..=loss_id).rev() {
            let Some(grad) = slots[id].take() else {
                continue;
            };
            let node = &inner.nodes[id];
            accumulate_inputs(&inner.nodes, node, &grad, &mut slots);
            slots[id] = Some(grad);
        }

        drop(inner);
        Ok(Gradients {
            graph,
            slots,
        })
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, len: usize, contribution: impl Fn(&mut [f64])) {
    let acc = slot.get_or_insert_with(|| vec![0.0; len]);
    contribution(acc.as_mut_slice());
}

/// Distribute `grad` (gradient of the loss wrt `node`'s output) to the
/// node's inputs.
fn accumulate_inputs(nodes: &[Node], node: &Node, grad: &[f64], slots: &mut [Option<Vec<f64>>]) {
    let input_data = |k: usize| -> &Arc<Vec<f64>> { &nodes[node.inputs[k]].data };
    let input_len = |k: usize| -> usize { nodes[node.inputs[k]].data.len() };

    match node.op {
        Op::Leaf | Op::Constant => {}
        Op::Add => {
            for k in 0..2 {
                add_into(&mut slots[node.inputs[k]], input_len(k), |acc| {
                    for (a, g) in acc.iter_mut().zip(grad) {
                        *a += g;
                    }
                });
            }
        }
        Op::Sub => {
            add_into(&mut slots[node.inputs[0]], input_len(0), |acc| {
                for (a, g) in acc.iter_mut().zip(grad) {
                    *a += g;
                }
            });
            add_into(&mut slots[node.inputs[1]], input_len(1), |acc| {
                for (a, g) in acc.iter_mut().zip(grad) {
                    *a -= g;
                }
            });
        }
        Op::Mul => {
            let (x, y) = (input_data(0).clone(), input_data(1).clone());
            add_into(&mut slots[node.inputs[0]], x.len(), |acc| {
                for i in 0..acc.len() {
                    acc[i] += grad[i] * y[i];
                }
            });
            add_into(&mut slots[node.inputs[1]], y.len(), |acc| {
                for i in 0..acc.len() {
                    acc[i] += grad[i] * x[i];
                }
            });
        }
        Op::Matmul => {
            let a = input_data(0).clone();
            let b = input_data(1).clone();
            let m = nodes[node.inputs[0]].shape[0];
            let k = nodes[node.inputs[0]].shape[1];
            let n = nodes[node.inputs[1]].shape[1];
            // dA = G . B^T
            add_into(&mut slots[node.inputs[0]], m * k, |acc| {
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += grad[i * n + j] * b[p * n + j];
                        }
                        acc[i * k + p] += s;
                    }
                }
            });
            // dB = A^T . G
            add_into(&mut slots[node.inputs[1]], k * n, |acc| {
                for i in 0..m {
                    for p in 0..k {
                        let av = a[i * k + p];
                        for j in 0..n {
                            acc[p * n + j] += av * grad[i * n + j];
                        }
                    }
                }
            });
        }
        Op::Concat { axis } => {
            let (outer, _, inner) = decompose(&node.shape, axis);
            let out_extent = node.shape[axis];
            let mut offset = 0;
            for k in 0..node.inputs.len() {
                let extent = nodes[node.inputs[k]].shape[axis];
                let start = offset;
                add_into(&mut slots[node.inputs[k]], input_len(k), |acc| {
                    for o in 0..outer {
                        for e in 0..extent {
                            let src = (o * out_extent + start + e) * inner;
                            let dst = (o * extent + e) * inner;
                            for i in 0..inner {
                                acc[dst + i] += grad[src + i];
                            }
                        }
                    }
                });
                offset += extent;
            }
        }
        Op::Slice { axis, start } => {
            let in_shape = &nodes[node.inputs[0]].shape;
            let (outer, in_extent, inner) = decompose(in_shape, axis);
            let extent = node.shape[axis];
            add_into(&mut slots[node.inputs[0]], input_len(0), |acc| {
                for o in 0..outer {
                    for e in 0..extent {
                        let dst = (o * in_extent + start + e) * inner;
                        let src = (o * extent + e) * inner;
                        for i in 0..inner {
                            acc[dst + i] += grad[src + i];
                        }
                    }
                }
            });
        }
        Op::Sum => {
            add_into(&mut slots[node.inputs[0]], input_len(0), |acc| {
                for a in acc.iter_mut() {
                    *a += grad[0];
                }
            });
        }
        Op::Mean => {
            let n = input_len(0) as f64;
            add_into(&mut slots[node.inputs[0]], input_len(0), |acc| {
                for a in acc.iter_mut() {
                    *a += grad[0] / n;
                }
            });
        }
        Op::Exp => {
            let out = &node.data;
            add_into(&mut slots[node.inputs[0]], input_len(0), |acc| {
                for i in 0..acc.len() {
                    acc[i] += grad[i] * out[i];
                }
            });
        }
        Op::Log => {
            let x = input_data(0).clone();
            add_into(&mut slots[node.inputs[0]], x.len(), |acc| {
                for i in 0..acc.len() {
                    acc[i] += grad[i] / x[i];
                }
            });
        }
        Op::Tanh => {
            let out = &node.data;
            add_into(&mut slots[node.inputs[0]], input_len(0), |acc| {
                for i in 0..acc.len() {
                    acc[i] += grad[i] * (1.0 - out[i] * out[i]);
                }
            });
        }
        Op::Sigmoid => {
            let out = &node.data;
            add_into(&mut slots[node.inputs[0]], input_len(0), |acc| {
                for i in 0..acc.len() {
                    acc[i] += grad[i] * out[i] * (1.0 - out[i]);
                }
            });
        }
        Op::Square => {
            let x = input_data(0).clone();
            add_into(&mut slots[node.inputs[0]], x.len(), |acc| {
                for i in 0..acc.len() {
                    acc[i] += grad[i] * 2.0 * x[i];
                }
            });
        }
        Op::SoftmaxLastDim => {
            let out = node.data.clone();
            let width = *node.shape.last().unwrap();
            add_into(&mut slots[node.inputs[0]], out.len(), |acc| {
                for row in 0..out.len() / width {
                    let base = row * width;
                    let mut dot = 0.0;
                    for j in 0..width {
                        dot += grad[base + j] * out[base + j];
                    }
                    for j in 0..width {
                        acc[base + j] += out[base + j] * (grad[base + j] - dot);
                    }
                }
            });
        }
        Op::Scale(c) => {
            add_into(&mut slots[node.inputs[0]], input_len(0), |acc| {
                for (a, g) in acc.iter_mut().zip(grad) {
                    *a += c * g;
                }
            });
        }
        Op::Clamp { lo, hi } => {
            let x = input_data(0).clone();
            add_into(&mut slots[node.inputs[0]], x.len(), |acc| {
                for i in 0..acc.len() {
                    if x[i] >= lo && x[i] <= hi {
                        acc[i] += grad[i];
                    }
                }
            });
        }
    }
}

/// Split `shape` around `axis` into (outer, extent, inner) strides.
fn decompose(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Per-node gradient accumulators produced by [`Graph::backward`].
pub struct Gradients {
    graph: Graph,
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `t`. Returns `None` for tensors
    /// not bound to the graph that produced these gradients; nodes the loss
    /// never reached get an all-zero gradient.
    pub fn wrt(&self, t: &Tensor) -> Option<Tensor> {
        let (g, id) = t.node.as_ref()?;
        if !g.same_as(&self.graph) {
            return None;
        }
        let data = match &self.slots[*id] {
            Some(v) => v.clone(),
            None => vec![0.0; t.numel()],
        };
        Some(Tensor {
            shape: t.shape.clone(),
            data: Arc::new(data),
            node: None,
        })
    }
}

/// An immutable f64 array with shape, optionally bound to a graph node.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    node: Option<(Graph, NodeId)>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("bound", &self.node.is_some())
            .finish()
    }
}

impl Tensor {
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "from_vec",
                message: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidShape {
                    op: "from_rows",
                    message: format!("row {} has length {}, expected {}", i, row.len(), width),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            shape: vec![rows.len(), width],
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: Vec::new(),
            data: Arc::new(vec![v]),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], v: f64) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![v; shape.iter().product()]),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Rows of a rank-2 tensor (a rank-1 tensor is a single row).
    pub fn num_rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let width = *self.shape.last().unwrap_or(&1);
        &self.data[t * width..(t + 1) * width]
    }

    pub fn is_bound(&self) -> bool {
        self.node.is_some()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    /// Value-identical tensor with no graph binding.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Mutate the underlying data; clones of this tensor keep the old
    /// values (copy-on-write). Used by the optimizer between steps.
    pub(crate) fn update_data(&mut self, f: impl FnOnce(&mut [f64])) {
        debug_assert!(self.node.is_none());
        f(Arc::make_mut(&mut self.data).as_mut_slice());
    }

    fn graph_of(op: &'static str, parts: &[&Tensor]) -> Result<Option<Graph>> {
        let mut found: Option<Graph> = None;
        for t in parts {
            if let Some((g, _)) = &t.node {
                match &found {
                    None => found = Some(g.clone()),
                    Some(existing) if existing.same_as(g) => {}
                    Some(_) => return Err(Error::GraphMismatch { op }),
                }
            }
        }
        Ok(found)
    }

    fn id_in(&self, graph: &Graph) -> NodeId {
        match &self.node {
            Some((g, id)) if g.same_as(graph) => *id,
            // Lift untracked values as constants.
            _ => {
                let t = graph.push(
                    Op::Constant,
                    Vec::new(),
                    self.data.as_ref().clone(),
                    self.shape.clone(),
                );
                t.node.unwrap().1
            }
        }
    }

    fn finish(
        op: Op,
        op_name: &'static str,
        parts: &[&Tensor],
        data: Vec<f64>,
        shape: Vec<usize>,
    ) -> Result<Tensor> {
        match Tensor::graph_of(op_name, parts)? {
            Some(graph) => {
                let inputs: Vec<NodeId> = parts.iter().map(|t| t.id_in(&graph)).collect();
                Ok(graph.push(op, inputs, data, shape))
            }
            None => Ok(Tensor {
                shape,
                data: Arc::new(data),
                node: None,
            }),
        }
    }

    fn zip_same_shape(
        &self,
        other: &Tensor,
        op_name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let data = self.zip_same_shape(other, "add", |a, b| a + b)?;
        Tensor::finish(Op::Add, "add", &[self, other], data, self.shape.clone())
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let data = self.zip_same_shape(other, "sub", |a, b| a - b)?;
        Tensor::finish(Op::Sub, "sub", &[self, other], data, self.shape.clone())
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let data = self.zip_same_shape(other, "mul", |a, b| a * b)?;
        Tensor::finish(Op::Mul, "mul", &[self, other], data, self.shape.clone())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "matmul",
                message: format!(
                    "expected two rank-2 tensors, got {:?} and {:?}",
                    self.shape, other.shape
                ),
            });
        }
        if self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut data[i * n..(i + 1) * n];
            for (p, &av) in a_row.iter().enumerate() {
                let b_row = &other.data[p * n..(p + 1) * n];
                for j in 0..n {
                    out_row[j] += av * b_row[j];
                }
            }
        }
        Tensor::finish(Op::Matmul, "matmul", &[self, other], data, vec![m, n])
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape {
            op: "concat",
            message: "no operands".to_string(),
        })?;
        let rank = first.shape.len();
        if axis >= rank {
            return Err(Error::InvalidShape {
                op: "concat",
                message: format!("axis {} out of range for rank {}", axis, rank),
            });
        }
        let mut out_shape = first.shape.clone();
        for t in &parts[1..] {
            let compatible = t.shape.len() == rank
                && t.shape
                    .iter()
                    .enumerate()
                    .all(|(d, &e)| d == axis || e == first.shape[d]);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            out_shape[axis] += t.shape[axis];
        }
        let (outer, out_extent, inner) = decompose(&out_shape, axis);
        let mut data = vec![0.0; outer * out_extent * inner];
        let mut offset = 0;
        for t in parts {
            let extent = t.shape[axis];
            for o in 0..outer {
                for e in 0..extent {
                    let dst = (o * out_extent + offset + e) * inner;
                    let src = (o * extent + e) * inner;
                    data[dst..dst + inner].copy_from_slice(&t.data[src..src + inner]);
                }
            }
            offset += extent;
        }
        Tensor::finish(Op::Concat { axis }, "concat", parts, data, out_shape)
    }

    /// Contiguous sub-range `start..start+len` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.shape.len() || start + len > self.shape[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                message: format!(
                    "range {}..{} on axis {} of shape {:?}",
                    start,
                    start + len,
                    axis,
                    self.shape
                ),
            });
        }
        let (outer, in_extent, inner) = decompose(&self.shape, axis);
        let mut out_shape = self.shape.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            for e in 0..len {
                let src = (o * in_extent + start + e) * inner;
                let dst = (o * len + e) * inner;
                data[dst..dst + inner].copy_from_slice(&self.data[src..src + inner]);
            }
        }
        Tensor::finish(Op::Slice { axis, start }, "slice", &[self], data, out_shape)
    }

    /// Sum of all elements (rank-0 result).
    pub fn sum(&self) -> Result<Tensor> {
        let total: f64 = self.data.iter().sum();
        Tensor::finish(Op::Sum, "sum", &[self], vec![total], Vec::new())
    }

    /// Mean of all elements (rank-0 result).
    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::InvalidShape {
                op: "mean",
                message: "empty tensor".to_string(),
            });
        }
        let total: f64 = self.data.iter().sum();
        let v = total / self.numel() as f64;
        Tensor::finish(Op::Mean, "mean", &[self], vec![v], Vec::new())
    }

    fn map_unary(&self, op: Op, op_name: &'static str, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data.iter().map(|&x| f(x)).collect();
        Tensor::finish(op, op_name, &[self], data, self.shape.clone())
            .expect("unary op cannot fail")
    }

    pub fn exp(&self) -> Tensor {
        self.map_unary(Op::Exp, "exp", f64::exp)
    }

    pub fn log(&self) -> Tensor {
        self.map_unary(Op::Log, "log", f64::ln)
    }

    pub fn tanh(&self) -> Tensor {
        self.map_unary(Op::Tanh, "tanh", f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map_unary(Op::Sigmoid, "sigmoid", |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn square(&self) -> Tensor {
        self.map_unary(Op::Square, "square", |x| x * x)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map_unary(Op::Scale(c), "scale", |x| c * x)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map_unary(Op::Clamp { lo, hi }, "clamp", |x| x.clamp(lo, hi))
    }

    /// Row-wise softmax over the last dimension (max-shifted).
    pub fn softmax_lastdim(&self) -> Result<Tensor> {
        let width = match self.shape.last() {
            Some(&w) if w > 0 => w,
            _ => {
                return Err(Error::InvalidShape {
                    op: "softmax_lastdim",
                    message: format!("need a non-empty last dimension, got {:?}", self.shape),
                })
            }
        };
        let mut data = vec![0.0; self.numel()];
        for row in 0..self.numel() / width {
            let base = row * width;
            let src = &self.data[base..base + width];
            let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..width {
                let e = (src[j] - max).exp();
                data[base + j] = e;
                sum += e;
            }
            for j in 0..width {
                data[base + j] /= sum;
            }
        }
        Tensor::finish(
            Op::SoftmaxLastDim,
            "softmax_lastdim",
            &[self],
            data,
            self.shape.clone(),
        )
    }
}
