use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;
use crate::error::{bail, Error, Result};
use crate::math;

/// Index of a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-major attention-style mask: `true` entries take part in the softmax.
pub type Mask = Vec<bool>;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    DivScalar(NodeId, f64),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softmax(NodeId, Option<Mask>),
    LogSoftmax(NodeId, Option<Mask>),
    Sum(NodeId),
    Mean(NodeId),
    MeanRows(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize, usize),
    L2Normalize(NodeId),
    Embedding(NodeId, Vec<usize>),
    Transpose(NodeId),
    Gather(NodeId, Vec<(usize, usize)>),
    Reshape(NodeId),
    GradReverse(NodeId, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::DivScalar(..) => "div_scalar",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MeanRows(_) => "mean_rows",
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
            Op::L2Normalize(_) => "l2norm",
            Op::Embedding(..) => "embedding_lookup",
            Op::Transpose(_) => "transpose",
            Op::Gather(..) => "gather",
            Op::Reshape(_) => "reshape",
            Op::GradReverse(..) => "grad_reverse",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Dynamic computation graph. Nodes are appended in evaluation order, so the
/// node list is always a valid topological order.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` when the node does not influence the loss.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn tensor(&self, id: NodeId) -> Option<Tensor> {
        let data = self.get(id)?.to_vec();
        Tensor::new(self.shapes[id.0].clone(), data).ok()
    }

    /// Gradient for `id`, zeros when it did not receive any.
    pub fn get_or_zeros(&self, id: NodeId) -> Vec<f64> {
        match self.get(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.shapes[id.0].iter().product()],
        }
    }
}

fn softmax_rows(x: &[f64], rows: usize, cols: usize, mask: Option<&Mask>, log: bool) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let allowed = |c: usize| mask.is_none_or(|m| m[r * cols + c]);
        let mut max = f64::NEG_INFINITY;
        for (c, v) in row.iter().enumerate() {
            if allowed(c) && *v > max {
                max = *v;
            }
        }
        if max == f64::NEG_INFINITY {
            // Fully masked row: all zeros (log-softmax leaves zeros too).
            continue;
        }
        let mut denom = 0.0;
        for (c, v) in row.iter().enumerate() {
            if allowed(c) {
                denom += math::exp(v - max);
            }
        }
        let log_denom = math::ln(denom);
        for (c, v) in row.iter().enumerate() {
            if allowed(c) {
                out[r * cols + c] = if log {
                    v - max - log_denom
                } else {
                    math::exp(v - max) / denom
                };
            }
        }
    }
    out
}

fn broadcast_ok(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() || (b.rank() == 1 && a.rank() >= 1 && a.shape().last() == b.shape().first())
}

impl Graph {
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

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Name of the op that produced `id`.
    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    /// Input ids of `id`, in argument order.
    pub fn inputs(&self, id: NodeId) -> Vec<NodeId> {
        match &self.nodes[id.0].op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Concat(xs) => xs.clone(),
            Op::Embedding(t, _) => vec![*t],
            Op::Scale(a, _)
            | Op::DivScalar(a, _)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softmax(a, _)
            | Op::LogSoftmax(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::Slice(a, ..)
            | Op::L2Normalize(a)
            | Op::Transpose(a)
            | Op::Gather(a, _)
            | Op::Reshape(a)
            | Op::GradReverse(a, _) => vec![*a],
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(String::from(op.name())));
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn check(&self, id: NodeId) -> Result<&Tensor> {
        match self.nodes.get(id.0) {
            Some(n) => Ok(&n.value),
            None => bail!(Contract, "node {} does not belong to this graph", id.0),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            bail!(Shape, "matmul {} x {}", av.describe(), bv.describe());
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let (ad, bd) = (av.data(), bv.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aik = ad[i * k + p];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMul(a, b), t, &[a, b])
    }

    fn elementwise2(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<NodeId> {
        let (av, bv) = (self.check(a)?, self.check(b)?);
        if !broadcast_ok(av, bv) {
            bail!(Shape, "{} {} with {}", op.name(), av.describe(), bv.describe());
        }
        let bd = bv.data();
        let bn = bd.len();
        let data = av.data().iter().enumerate().map(|(i, x)| f(*x, bd[i % bn])).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(op, t, &[a, b])
    }

    /// Elementwise sum; `b` may be a vector broadcast over the rows of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise2(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise2(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product; `b` may be a vector broadcast over the rows of `a`.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise2(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let av = self.check(a)?;
        let data = av.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(op, t, &[a])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    /// `a / c` computed by true division (not multiplication by `1/c`).
    pub fn div_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        if c == 0.0 {
            bail!(Domain, "division by zero");
        }
        self.unary(a, Op::DivScalar(a, c), |x| x / c)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Tanh(a), math::tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Exp(a), math::exp)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(x) = self.check(a)?.data().iter().find(|x| **x <= 0.0) {
            bail!(Domain, "log of non-positive value {}", x);
        }
        self.unary(a, Op::Log(a), math::ln)
    }

    fn check_mask(&self, a: NodeId, mask: &Option<Mask>) -> Result<(usize, usize)> {
        let av = self.check(a)?;
        if av.rank() > 2 {
            bail!(Shape, "softmax over rank-{} tensor", av.rank());
        }
        let (r, c) = av.as_2d();
        if let Some(m) = mask {
            if m.len() != r * c {
                bail!(Shape, "mask of length {} for {}", m.len(), av.describe());
            }
        }
        Ok((r, c))
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.softmax_masked(a, None)
    }

    /// Softmax over the last axis restricted to `mask`; masked entries are 0.
    pub fn softmax_masked(&mut self, a: NodeId, mask: Option<Mask>) -> Result<NodeId> {
        let (r, c) = self.check_mask(a, &mask)?;
        let av = self.value(a);
        let data = softmax_rows(av.data(), r, c, mask.as_ref(), false);
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(Op::Softmax(a, mask), t, &[a])
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.log_softmax_masked(a, None)
    }

    /// Log-softmax over the last axis restricted to `mask`; masked entries are 0.
    pub fn log_softmax_masked(&mut self, a: NodeId, mask: Option<Mask>) -> Result<NodeId> {
        let (r, c) = self.check_mask(a, &mask)?;
        let av = self.value(a);
        let data = softmax_rows(av.data(), r, c, mask.as_ref(), true);
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(Op::LogSoftmax(a, mask), t, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.check(a)?.data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.check(a)?;
        if av.is_empty() {
            bail!(Shape, "mean of empty tensor");
        }
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s), &[a])
    }

    /// Mean over rows of a matrix, giving a vector of column means.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.check(a)?;
        if av.rank() != 2 || av.shape()[0] == 0 {
            bail!(Shape, "mean_rows of {}", av.describe());
        }
        let (r, c) = av.as_2d();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        for o in out.iter_mut() {
            *o /= r as f64;
        }
        self.push(Op::MeanRows(a), Tensor::vector(out), &[a])
    }

    /// Concatenation along the first axis. All-vector inputs give a vector;
    /// otherwise vectors are treated as single rows and a matrix is produced.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            bail!(Shape, "concat of nothing");
        }
        for i in inputs {
            self.check(*i)?;
        }
        let all_vectors = inputs.iter().all(|i| self.value(*i).rank() == 1);
        let mut data = Vec::new();
        let shape = if all_vectors {
            for i in inputs {
                data.extend_from_slice(self.value(*i).data());
            }
            vec![data.len()]
        } else {
            let cols = self.value(inputs[0]).as_2d().1;
            let mut rows = 0;
            for i in inputs {
                let v = self.value(*i);
                if v.rank() > 2 || v.as_2d().1 != cols {
                    bail!(Shape, "concat column mismatch: {} vs {} cols", v.describe(), cols);
                }
                rows += v.as_2d().0;
                data.extend_from_slice(v.data());
            }
            vec![rows, cols]
        };
        let t = Tensor::new(shape, data)?;
        self.push(Op::Concat(inputs.to_vec()), t, inputs)
    }

    /// Rows `[start, end)` of a matrix or elements of a vector.
    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let av = self.check(a)?;
        let (r, c) = av.as_2d();
        let (limit, width) = if av.rank() == 1 { (c, 1) } else { (r, c) };
        if av.rank() == 0 || av.rank() > 2 || start > end || end > limit {
            bail!(Shape, "slice {}..{} of {}", start, end, av.describe());
        }
        let data = av.data()[start * width..end * width].to_vec();
        let shape = if av.rank() == 1 {
            vec![end - start]
        } else {
            vec![end - start, c]
        };
        let t = Tensor::new(shape, data)?;
        self.push(Op::Slice(a, start, end), t, &[a])
    }

    /// L2 normalization of a vector, or of each row of a matrix.
    pub fn l2norm(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.check(a)?;
        if av.rank() == 0 || av.rank() > 2 {
            bail!(Shape, "l2norm of {}", av.describe());
        }
        let (r, c) = av.as_2d();
        let mut out = av.data().to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let n = math::norm(row);
            if n == 0.0 {
                bail!(Domain, "l2norm of zero vector");
            }
            for x in row.iter_mut() {
                *x /= n;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), out)?;
        self.push(Op::L2Normalize(a), t, &[a])
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = self.check(table)?;
        if tv.rank() != 2 {
            bail!(Shape, "embedding table must be a matrix, got {}", tv.describe());
        }
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                bail!(Shape, "token id {} outside table of {} rows", id, v);
            }
            data.extend_from_slice(tv.row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        self.push(Op::Embedding(table, ids.to_vec()), t, &[table])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.check(a)?;
        if av.rank() != 2 {
            bail!(Shape, "transpose of {}", av.describe());
        }
        let (r, c) = (av.shape()[0], av.shape()[1]);
        let mut out = vec![0.0; r * c];
        let d = av.data();
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let t = Tensor::new(vec![c, r], out)?;
        self.push(Op::Transpose(a), t, &[a])
    }

    /// Picks `a[r, c]` for every `(r, c)` pair into a vector.
    pub fn gather(&mut self, a: NodeId, index: &[(usize, usize)]) -> Result<NodeId> {
        let av = self.check(a)?;
        if av.rank() > 2 {
            bail!(Shape, "gather from {}", av.describe());
        }
        let (rows, cols) = av.as_2d();
        let mut out = Vec::with_capacity(index.len());
        for &(r, c) in index {
            if r >= rows || c >= cols {
                bail!(Shape, "gather index ({}, {}) outside {}", r, c, av.describe());
            }
            out.push(av.data()[r * cols + c]);
        }
        self.push(Op::Gather(a, index.to_vec()), Tensor::vector(out), &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.check(a)?.clone().reshape(shape.to_vec())?;
        self.push(Op::Reshape(a), t, &[a])
    }

    /// Identity on the forward pass; multiplies the gradient by `-scale` on
    /// the way back.
    pub fn grad_reverse(&mut self, a: NodeId, scale: f64) -> Result<NodeId> {
        let t = self.check(a)?.clone();
        self.push(Op::GradReverse(a, scale), t, &[a])
    }

    /// Dot product of two equal-length vectors as a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.check(a)?.shape() != self.check(b)?.shape() {
            bail!(
                Shape,
                "dot of {} and {}",
                self.value(a).describe(),
                self.value(b).describe()
            );
        }
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.check(loss)?;
        if lv.len() != 1 {
            bail!(Contract, "backward needs a scalar loss, got shape {:?}", lv.shape());
        }
        self.backward_from(loss, &Tensor::scalar(1.0))
    }

    /// Reverse pass seeded with an upstream gradient for `node`.
    pub fn backward_from(&self, node: NodeId, seed: &Tensor) -> Result<Gradients> {
        let nv = self.check(node)?;
        if nv.len() != seed.len() {
            bail!(Shape, "seed {} for node {}", seed.describe(), nv.describe());
        }
        let n = node.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[node.0] = Some(seed.data().to_vec());
        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let nd = &self.nodes[idx];
            if nd.requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let val = |id: NodeId| self.nodes[id.0].value.data();
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, nn) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let (ad, bd) = (av.data(), bv.data());
                if wants(*a) {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * nn..(i + 1) * nn];
                        for p in 0..k {
                            let brow = &bd[p * nn..(p + 1) * nn];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    accumulate(grads, *a, da);
                }
                if wants(*b) {
                    let mut db = vec![0.0; k * nn];
                    for i in 0..m {
                        let grow = &g[i * nn..(i + 1) * nn];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let drow = &mut db[p * nn..(p + 1) * nn];
                            for (d, x) in drow.iter_mut().zip(grow) {
                                *d += aip * x;
                            }
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    let bn = val(*b).len();
                    let mut db = vec![0.0; bn];
                    for (i, x) in g.iter().enumerate() {
                        db[i % bn] += sign * x;
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                let bn = bd.len();
                if wants(*a) {
                    let da = g.iter().enumerate().map(|(i, x)| x * bd[i % bn]).collect();
                    accumulate(grads, *a, da);
                }
                if wants(*b) {
                    let mut db = vec![0.0; bn];
                    for (i, x) in g.iter().enumerate() {
                        db[i % bn] += x * ad[i];
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.iter().map(|x| x * c).collect()),
            Op::DivScalar(a, c) => accumulate(grads, *a, g.iter().map(|x| x / c).collect()),
            Op::GradReverse(a, c) => accumulate(grads, *a, g.iter().map(|x| -x * c).collect()),
            Op::Tanh(a) => {
                let da = g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect();
                accumulate(grads, *a, da);
            }
            Op::Relu(a) => {
                let ad = val(*a);
                let da = g.iter().zip(ad).map(|(x, v)| if *v > 0.0 { *x } else { 0.0 }).collect();
                accumulate(grads, *a, da);
            }
            Op::Exp(a) => accumulate(grads, *a, g.iter().zip(out).map(|(x, y)| x * y).collect()),
            Op::Log(a) => {
                let ad = val(*a);
                accumulate(grads, *a, g.iter().zip(ad).map(|(x, v)| x / v).collect());
            }
            Op::Softmax(a, mask) => {
                let (r, c) = self.nodes[a.0].value.as_2d();
                let mut da = vec![0.0; g.len()];
                for i in 0..r {
                    let (gs, ys) = (&g[i * c..(i + 1) * c], &out[i * c..(i + 1) * c]);
                    let inner: f64 = gs.iter().zip(ys).map(|(x, y)| x * y).sum();
                    for j in 0..c {
                        if mask.as_ref().is_none_or(|m| m[i * c + j]) {
                            da[i * c + j] = ys[j] * (gs[j] - inner);
                        }
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::LogSoftmax(a, mask) => {
                let (r, c) = self.nodes[a.0].value.as_2d();
                let mut da = vec![0.0; g.len()];
                for i in 0..r {
                    let allowed = |j: usize| mask.as_ref().is_none_or(|m| m[i * c + j]);
                    let gs = &g[i * c..(i + 1) * c];
                    let total: f64 = (0..c).filter(|j| allowed(*j)).map(|j| gs[j]).sum();
                    for j in 0..c {
                        if allowed(j) {
                            let p = math::exp(out[i * c + j]);
                            da[i * c + j] = gs[j] - p * total;
                        }
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Sum(a) => accumulate(grads, *a, vec![g[0]; val(*a).len()]),
            Op::Mean(a) => {
                let n = val(*a).len();
                accumulate(grads, *a, vec![g[0] / n as f64; n]);
            }
            Op::MeanRows(a) => {
                let (r, c) = self.nodes[a.0].value.as_2d();
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j] / r as f64;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for x in xs {
                    let n = val(*x).len();
                    if wants(*x) {
                        accumulate(grads, *x, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Slice(a, start, end) => {
                let av = &self.nodes[a.0].value;
                let width = if av.rank() == 1 { 1 } else { av.as_2d().1 };
                let mut da = vec![0.0; av.len()];
                da[start * width..end * width].copy_from_slice(g);
                accumulate(grads, *a, da);
            }
            Op::L2Normalize(a) => {
                let av = &self.nodes[a.0].value;
                let (r, c) = av.as_2d();
                let mut da = vec![0.0; av.len()];
                for i in 0..r {
                    let n = math::norm(av.row(i));
                    let ys = &out[i * c..(i + 1) * c];
                    let gs = &g[i * c..(i + 1) * c];
                    let inner: f64 = gs.iter().zip(ys).map(|(x, y)| x * y).sum();
                    for j in 0..c {
                        da[i * c + j] = (gs[j] - ys[j] * inner) / n;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Embedding(table, ids) => {
                let tv = &self.nodes[table.0].value;
                let d = tv.shape()[1];
                let mut dt = vec![0.0; tv.len()];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[row * d + j];
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::Transpose(a) => {
                let av = &self.nodes[a.0].value;
                let (r, c) = (av.shape()[0], av.shape()[1]);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j * r + i];
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Gather(a, index) => {
                let av = &self.nodes[a.0].value;
                let cols = av.as_2d().1;
                let mut da = vec![0.0; av.len()];
                for (k, &(r, c)) in index.iter().enumerate() {
                    da[r * cols + c] += g[k];
                }
                accumulate(grads, *a, da);
            }
            Op::Reshape(a) => accumulate(grads, *a, g.to_vec()),
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, delta: Vec<f64>) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}
