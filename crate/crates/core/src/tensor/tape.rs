use super::shape::{
    broadcast_or_err, broadcast_strides, check_axis, for_each_broadcast, split_axis,
};
use super::{sigmoid, softplus, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    #[cfg(test)]
    pub(crate) fn from_index(index: usize) -> Self {
        Self(index)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Neg,
    Add,
    Sub,
    Mul,
    Sigmoid,
    Abs,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Max,
    Min,
    Sum,
}

#[derive(Debug, Clone, Copy)]
enum UnaryOp {
    Neg,
    Sigmoid,
    Abs,
    Relu,
    Exp,
    Ln,
    Softplus,
    Scale(f64),
    Shift(f64),
}

#[derive(Debug, Clone, Copy)]
enum BinaryOp {
    Add,
    Sub,
    Mul,
    Min,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(UnaryOp, NodeId),
    Binary(BinaryOp, NodeId, NodeId),
    /// `winners[o]` is the flat input index that produced output `o`
    /// (empty for sums).
    Reduce {
        input: NodeId,
        axis: usize,
        winners: Vec<usize>,
    },
    Softmax(NodeId, usize),
    LogSoftmax(NodeId, usize),
    MatMul(NodeId, NodeId),
    Reshape(NodeId),
    Permute(NodeId, Vec<usize>),
    Stack(Vec<NodeId>),
    Select {
        input: NodeId,
        axis: usize,
        index: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations in creation order so that a reverse sweep is a valid
/// topological order for backpropagation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a node, or `None` if the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn reached(&self, id: NodeId) -> bool {
        self.get(id).is_some()
    }

    /// Gradient of a node, zero-filled when unreached.
    pub fn get_or_zero(&self, id: NodeId, shape: &[usize]) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Records a constant or parameter.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.leaf(Tensor::scalar(value))
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<NodeId, TensorError> {
        if value.data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn elementwise(
        &mut self,
        op: Elementwise,
        a: NodeId,
        b: Option<NodeId>,
    ) -> Result<NodeId, TensorError> {
        let rhs = |b: Option<NodeId>| {
            b.ok_or(TensorError::ShapeMismatch {
                op: "elementwise",
                lhs: vec![],
                rhs: vec![],
            })
        };
        match op {
            Elementwise::Neg => self.neg(a),
            Elementwise::Sigmoid => self.sigmoid(a),
            Elementwise::Abs => self.abs(a),
            Elementwise::Add => self.add(a, rhs(b)?),
            Elementwise::Sub => self.sub(a, rhs(b)?),
            Elementwise::Mul => self.mul(a, rhs(b)?),
            Elementwise::Min => self.min(a, rhs(b)?),
            Elementwise::Max => self.max(a, rhs(b)?),
        }
    }

    fn unary(&mut self, op: UnaryOp, a: NodeId) -> Result<NodeId, TensorError> {
        let input = self.value(a);
        let f: fn(f64, f64) -> f64 = match op {
            UnaryOp::Neg => |x, _| -x,
            UnaryOp::Sigmoid => |x, _| sigmoid(x),
            UnaryOp::Abs => |x, _| x.abs(),
            UnaryOp::Relu => |x, _| x.max(0.0),
            UnaryOp::Exp => |x, _| x.exp(),
            UnaryOp::Ln => |x, _| x.ln(),
            UnaryOp::Softplus => |x, _| softplus(x),
            UnaryOp::Scale(_) => |x, c| x * c,
            UnaryOp::Shift(_) => |x, c| x + c,
        };
        let c = match op {
            UnaryOp::Scale(c) | UnaryOp::Shift(c) => c,
            _ => 0.0,
        };
        let data = input.data.iter().map(|&x| f(x, c)).collect();
        let value = Tensor::from_parts(input.shape.clone(), data);
        self.push("unary", value, Op::Unary(op, a))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(UnaryOp::Abs, a)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(UnaryOp::Ln, a)
    }

    /// `ln(1 + e^x)`; its derivative is the sigmoid.
    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        self.unary(UnaryOp::Softplus, a)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, TensorError> {
        self.unary(UnaryOp::Scale(c), a)
    }

    pub fn shift(&mut self, a: NodeId, c: f64) -> Result<NodeId, TensorError> {
        self.unary(UnaryOp::Shift(c), a)
    }

    fn binary(&mut self, op: BinaryOp, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let name = match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Min => "min",
            BinaryOp::Max => "max",
        };
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
            // ties resolve to the left operand
            BinaryOp::Min => |x, y| if y < x { y } else { x },
            BinaryOp::Max => |x, y| if y > x { y } else { x },
        };
        let value = if ta.shape == tb.shape {
            let data = ta
                .data
                .iter()
                .zip(&tb.data)
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::from_parts(ta.shape.clone(), data)
        } else {
            let out = broadcast_or_err(name, &ta.shape, &tb.shape)?;
            let sa = broadcast_strides(&ta.shape, &out);
            let sb = broadcast_strides(&tb.shape, &out);
            let mut data = vec![0.0; out.iter().product()];
            for_each_broadcast(&out, &sa, &sb, |o, i, j| {
                data[o] = f(ta.data[i], tb.data[j])
            });
            Tensor::from_parts(out, data)
        };
        self.push(name, value, Op::Binary(op, a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// Elementwise minimum; the gradient follows the smaller operand, or
    /// the left one on ties.
    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary(BinaryOp::Min, a, b)
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary(BinaryOp::Max, a, b)
    }

    /// Reduces `axis` away. For max/min the gradient goes to the first
    /// attaining index.
    pub fn reduce(&mut self, op: Reduction, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let input = self.value(a);
        check_axis(&input.shape, axis)?;
        let (outer, extent, inner) = split_axis(&input.shape, axis);
        let mut out_shape = input.shape.clone();
        out_shape.remove(axis);
        let mut data = vec![0.0; outer * inner];
        let mut winners = Vec::new();
        if op != Reduction::Sum {
            winners = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let slot = o * inner + i;
                match op {
                    Reduction::Sum => {
                        data[slot] = (0..extent).map(|k| input.data[base + k * inner]).sum();
                    }
                    Reduction::Max | Reduction::Min => {
                        let mut best = base;
                        for k in 1..extent {
                            let idx = base + k * inner;
                            let better = match op {
                                Reduction::Max => input.data[idx] > input.data[best],
                                _ => input.data[idx] < input.data[best],
                            };
                            if better {
                                best = idx;
                            }
                        }
                        data[slot] = input.data[best];
                        winners[slot] = best;
                    }
                }
            }
        }
        let value = Tensor::from_parts(out_shape, data);
        self.push(
            "reduce",
            value,
            Op::Reduce {
                input: a,
                axis,
                winners,
            },
        )
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let mut node = a;
        while self.shape(node).len() > 0 {
            node = self.reduce(Reduction::Sum, node, 0)?;
        }
        Ok(node)
    }

    fn softmax_impl(&mut self, a: NodeId, axis: usize, log: bool) -> Result<NodeId, TensorError> {
        let input = self.value(a);
        check_axis(&input.shape, axis)?;
        let (outer, extent, inner) = split_axis(&input.shape, axis);
        let mut data = vec![0.0; input.data.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let at = |k: usize| base + k * inner;
                let peak = (0..extent)
                    .map(|k| input.data[at(k)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = (0..extent).map(|k| (input.data[at(k)] - peak).exp()).sum();
                for k in 0..extent {
                    let shifted = input.data[at(k)] - peak;
                    data[at(k)] = if log {
                        shifted - total.ln()
                    } else {
                        shifted.exp() / total
                    };
                }
            }
        }
        let value = Tensor::from_parts(input.shape.clone(), data);
        if log {
            self.push("log_softmax", value, Op::LogSoftmax(a, axis))
        } else {
            self.push("softmax", value, Op::Softmax(a, axis))
        }
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        self.softmax_impl(a, axis, false)
    }

    pub fn log_softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        self.softmax_impl(a, axis, true)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let data = matmul_raw(&ta.data, &tb.data, m, k, n);
        let value = Tensor::from_parts(vec![m, n], data);
        self.push("matmul", value, Op::MatMul(a, b))
    }

    /// `x W + b` for `x: [m, k]`, `W: [k, n]`, `b: [n]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let n = self.shape(w).get(1).copied();
        if self.shape(b).len() != 1 || Some(self.shape(b)[0]) != n {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                lhs: self.shape(w).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let input = self.value(a);
        if shape.iter().product::<usize>() != input.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: input.shape.clone(),
                rhs: shape,
            });
        }
        let value = Tensor::from_parts(shape, input.data.clone());
        self.push("reshape", value, Op::Reshape(a))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: NodeId, perm: Vec<usize>) -> Result<NodeId, TensorError> {
        let input = self.value(a);
        let rank = input.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank
            || perm
                .iter()
                .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
        {
            return Err(TensorError::ShapeMismatch {
                op: "permute",
                lhs: input.shape.clone(),
                rhs: perm,
            });
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            let value = input.clone();
            return self.push("permute", value, Op::Reshape(a));
        }
        let value = permute_raw(input, &perm);
        self.push("permute", value, Op::Permute(a, perm))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, items: &[NodeId]) -> Result<NodeId, TensorError> {
        let Some(&first) = items.first() else {
            return Err(TensorError::ShapeMismatch {
                op: "stack",
                lhs: vec![],
                rhs: vec![],
            });
        };
        let inner = self.shape(first).to_vec();
        let mut data = Vec::with_capacity(items.len() * self.value(first).numel());
        for &id in items {
            let t = self.value(id);
            if t.shape != inner {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    lhs: inner,
                    rhs: t.shape.clone(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        let value = Tensor::from_parts(shape, data);
        self.push("stack", value, Op::Stack(items.to_vec()))
    }

    /// Picks one slice along `axis`, dropping that axis.
    pub fn select(&mut self, a: NodeId, axis: usize, index: usize) -> Result<NodeId, TensorError> {
        let input = self.value(a);
        check_axis(&input.shape, axis)?;
        let (outer, extent, inner) = split_axis(&input.shape, axis);
        if index >= extent {
            return Err(TensorError::BadAxis {
                axis: index,
                rank: extent,
            });
        }
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = o * extent * inner + index * inner;
            data.extend_from_slice(&input.data[base..base + inner]);
        }
        let mut shape = input.shape.clone();
        shape.remove(axis);
        let value = Tensor::from_parts(shape, data);
        self.push(
            "select",
            value,
            Op::Select {
                input: a,
                axis,
                index,
            },
        )
    }

    /// Reverse sweep from a scalar node. Nodes the scalar does not depend
    /// on get no entry.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let root = self.value(loss);
        if root.numel() != 1 || root.rank() != 0 {
            return Err(TensorError::NotScalar(root.shape.clone()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Unary(op, a) => {
                let x = &self.value(*a).data;
                let y = &out.data;
                let d: Vec<f64> = (0..x.len())
                    .map(|i| {
                        let local = match op {
                            UnaryOp::Neg => -1.0,
                            UnaryOp::Sigmoid => y[i] * (1.0 - y[i]),
                            UnaryOp::Abs => {
                                if x[i] >= 0.0 {
                                    1.0
                                } else {
                                    -1.0
                                }
                            }
                            UnaryOp::Relu => {
                                if x[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Exp => y[i],
                            UnaryOp::Ln => 1.0 / x[i],
                            UnaryOp::Softplus => sigmoid(x[i]),
                            UnaryOp::Scale(c) => *c,
                            UnaryOp::Shift(_) => 1.0,
                        };
                        g.data[i] * local
                    })
                    .collect();
                accumulate(grads, *a, Tensor::from_parts(out.shape.clone(), d));
            }
            Op::Binary(op, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let sa = broadcast_strides(&ta.shape, &out.shape);
                let sb = broadcast_strides(&tb.shape, &out.shape);
                let mut ga = vec![0.0; ta.numel()];
                let mut gb = vec![0.0; tb.numel()];
                for_each_broadcast(&out.shape, &sa, &sb, |o, i, j| {
                    let (x, y, go) = (ta.data[i], tb.data[j], g.data[o]);
                    match op {
                        BinaryOp::Add => {
                            ga[i] += go;
                            gb[j] += go;
                        }
                        BinaryOp::Sub => {
                            ga[i] += go;
                            gb[j] -= go;
                        }
                        BinaryOp::Mul => {
                            ga[i] += go * y;
                            gb[j] += go * x;
                        }
                        BinaryOp::Min => {
                            if y < x {
                                gb[j] += go;
                            } else {
                                ga[i] += go;
                            }
                        }
                        BinaryOp::Max => {
                            if y > x {
                                gb[j] += go;
                            } else {
                                ga[i] += go;
                            }
                        }
                    }
                });
                accumulate(grads, *a, Tensor::from_parts(ta.shape.clone(), ga));
                accumulate(grads, *b, Tensor::from_parts(tb.shape.clone(), gb));
            }
            Op::Reduce {
                input,
                axis,
                winners,
            } => {
                let ti = self.value(*input);
                let mut gi = vec![0.0; ti.numel()];
                if winners.is_empty() {
                    let (outer, extent, inner) = split_axis(&ti.shape, *axis);
                    for o in 0..outer {
                        for k in 0..extent {
                            for i in 0..inner {
                                gi[o * extent * inner + k * inner + i] = g.data[o * inner + i];
                            }
                        }
                    }
                } else {
                    for (slot, &w) in winners.iter().enumerate() {
                        gi[w] += g.data[slot];
                    }
                }
                accumulate(grads, *input, Tensor::from_parts(ti.shape.clone(), gi));
            }
            Op::Softmax(a, axis) | Op::LogSoftmax(a, axis) => {
                let log = matches!(node.op, Op::LogSoftmax(..));
                let (outer, extent, inner) = split_axis(&out.shape, *axis);
                let mut gi = vec![0.0; out.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * extent * inner + i;
                        let at = |k: usize| base + k * inner;
                        if log {
                            let total: f64 = (0..extent).map(|k| g.data[at(k)]).sum();
                            for k in 0..extent {
                                gi[at(k)] = g.data[at(k)] - out.data[at(k)].exp() * total;
                            }
                        } else {
                            let dot: f64 =
                                (0..extent).map(|k| g.data[at(k)] * out.data[at(k)]).sum();
                            for k in 0..extent {
                                gi[at(k)] = out.data[at(k)] * (g.data[at(k)] - dot);
                            }
                        }
                    }
                }
                accumulate(grads, *a, Tensor::from_parts(out.shape.clone(), gi));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
                // dA = G B^T, dB = A^T G
                let bt = transpose_raw(&tb.data, k, n);
                let ga = matmul_raw(&g.data, &bt, m, n, k);
                let at = transpose_raw(&ta.data, m, k);
                let gb = matmul_raw(&at, &g.data, k, m, n);
                accumulate(grads, *a, Tensor::from_parts(vec![m, k], ga));
                accumulate(grads, *b, Tensor::from_parts(vec![k, n], gb));
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape.clone();
                accumulate(grads, *a, Tensor::from_parts(shape, g.data.clone()));
            }
            Op::Permute(a, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                accumulate(grads, *a, permute_raw(g, &inverse));
            }
            Op::Stack(items) => {
                let chunk = g.numel() / items.len();
                for (i, &item) in items.iter().enumerate() {
                    let shape = self.value(item).shape.clone();
                    let slice = g.data[i * chunk..(i + 1) * chunk].to_vec();
                    accumulate(grads, item, Tensor::from_parts(shape, slice));
                }
            }
            Op::Select { input, axis, index } => {
                let ti = self.value(*input);
                let (outer, extent, inner) = split_axis(&ti.shape, *axis);
                let mut gi = vec![0.0; ti.numel()];
                for o in 0..outer {
                    let base = o * extent * inner + index * inner;
                    gi[base..base + inner].copy_from_slice(&g.data[o * inner..(o + 1) * inner]);
                }
                accumulate(grads, *input, Tensor::from_parts(ti.shape.clone(), gi));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.data.iter_mut().zip(g.data) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn permute_raw(input: &Tensor, perm: &[usize]) -> Tensor {
    let rank = input.rank();
    let shape: Vec<usize> = perm.iter().map(|&p| input.shape[p]).collect();
    let mut in_strides = vec![1; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * input.shape[d + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut data = Vec::with_capacity(input.numel());
    for_each_broadcast(&shape, &strides, &vec![0; rank], |_, i, _| {
        data.push(input.data[i])
    });
    Tensor::from_parts(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(tape: &mut Tape, v: &[f64]) -> NodeId {
        tape.leaf(Tensor::vector(v.to_vec()))
    }

    #[test]
    fn elementwise_min_picks_smaller() {
        let mut t = Tape::new();
        let a = vec_leaf(&mut t, &[1.2, -0.5]);
        let b = vec_leaf(&mut t, &[0.0, 3.0]);
        let m = t.elementwise(Elementwise::Min, a, Some(b)).unwrap();
        assert_eq!(t.value(m).data(), &[0.0, -0.5]);
    }

    #[test]
    fn sigmoid_values() {
        let mut t = Tape::new();
        let a = vec_leaf(&mut t, &[0.0, 2.0]);
        let s = t.sigmoid(a).unwrap();
        assert_eq!(t.value(s).data()[0], 0.5);
        assert!((t.value(s).data()[1] - 0.880797).abs() < 1e-6);
    }

    #[test]
    fn reduce_max_and_sum() {
        let mut t = Tape::new();
        let a = vec_leaf(&mut t, &[1.2, -0.5, 3.0]);
        let m = t.reduce(Reduction::Max, a, 0).unwrap();
        assert_eq!(t.value(m).item().unwrap(), 3.0);
        let z = vec_leaf(&mut t, &[0.0; 6]);
        let s = t.reduce(Reduction::Sum, z, 0).unwrap();
        assert_eq!(t.value(s).item().unwrap(), 0.0);
        assert_eq!(
            t.reduce(Reduction::Sum, z, 1),
            Err(TensorError::BadAxis { axis: 1, rank: 1 })
        );
    }

    #[test]
    fn max_gradient_goes_to_first_winner() {
        let mut t = Tape::new();
        let a = vec_leaf(&mut t, &[2.0, 5.0, 5.0, 1.0]);
        let m = t.reduce(Reduction::Max, a, 0).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn min_gradient_flows_to_smaller_operand() {
        let mut t = Tape::new();
        let a = vec_leaf(&mut t, &[1.0, 4.0, 2.0]);
        let b = vec_leaf(&mut t, &[3.0, 0.0, 2.0]);
        let m = t.min(a, b).unwrap();
        let s = t.sum_all(m).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 0.0, 1.0]);
        assert_eq!(g.get(b).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_cases() {
        let mut t = Tape::new();
        let a = vec_leaf(&mut t, &[0.0, 0.0, 0.0]);
        let s = t.softmax(a, 0).unwrap();
        for &p in t.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let b = vec_leaf(&mut t, &[10.0, 0.0, 0.0]);
        let s = t.softmax(b, 0).unwrap();
        let expect = [0.99990920, 4.539580e-5, 4.539580e-5];
        for (p, e) in t.value(s).data().iter().zip(expect) {
            assert!((p - e).abs() < 1e-5);
        }
    }

    #[test]
    fn backward_of_sum_is_ones_and_sigmoid_slope() {
        let mut t = Tape::new();
        let x = vec_leaf(&mut t, &[1.0, -2.0, 0.5]);
        let s = t.sum_all(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = t.scalar(0.0);
        let y = t.sigmoid(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 0.25);
    }

    #[test]
    fn backward_requires_scalar_and_zero_fills_unreached() {
        let mut t = Tape::new();
        let x = vec_leaf(&mut t, &[1.0, 2.0]);
        let unused = vec_leaf(&mut t, &[3.0]);
        assert!(matches!(t.backward(x), Err(TensorError::NotScalar(_))));
        let s = t.sum_all(x).unwrap();
        let g = t.backward(s).unwrap();
        assert!(!g.reached(unused));
        assert_eq!(g.get_or_zero(unused, &[1]).data(), &[0.0]);
    }

    #[test]
    fn affine_identity_and_relu() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap());
        let w = t.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = t.leaf(Tensor::zeros(&[2]));
        let y = t.affine(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), t.value(x).data());
        let r = t.relu(y).unwrap();
        assert_eq!(t.value(r).data(), &[1.0, 0.0, 3.0, 4.0]);
        let bad = t.leaf(Tensor::zeros(&[3, 2]));
        assert!(matches!(
            t.matmul(x, bad),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_results_are_rejected() {
        let mut t = Tape::new();
        let z = t.scalar(0.0);
        assert_eq!(t.ln(z), Err(TensorError::NonFinite("unary")));
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn permute_and_select() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap());
        let p = t.permute(a, vec![1, 0]).unwrap();
        assert_eq!(t.shape(p), &[3, 2]);
        assert_eq!(t.value(p).data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let col = t.select(a, 1, 2).unwrap();
        assert_eq!(t.value(col).data(), &[2.0, 5.0]);
    }
}
