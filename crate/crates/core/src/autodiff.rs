//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is built eagerly: every operation is evaluated as soon as it
//! is recorded, and nodes are stored in creation order, which is also a valid
//! topological order. The recorded graph can be re-executed with fresh input
//! bindings via [`Graph::forward`], and [`Graph::backward`] propagates the
//! gradient of a scalar node to every node that depends on a differentiable
//! leaf.
//!
//! The operation set is intentionally closed:
//! add, sub, mul (all with 2-D broadcasting), matmul, sum, mean, grouped row
//! mean, column concat, row gather, segment-max gather, row-mask select,
//! softmax, sigmoid, relu, row-wise KL divergence, stop-gradient, scale and
//! reshape. Model code composes everything else from these.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

/// Lower clamp applied to the second argument of [`Graph::kl_rows`] before
/// taking its logarithm.
pub const KL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("loss node {node} is not a scalar (shape {shape:?})")]
    NonScalarLoss { node: usize, shape: Vec<usize> },
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { name: Option<String> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    MeanRows { x: NodeId, groups: Vec<Vec<usize>> },
    ConcatCols(NodeId, NodeId),
    GatherRows { x: NodeId, index: Vec<usize> },
    // Gather whose flat source indices are the per-column argmax of each
    // row segment; `argmax` is refreshed on every evaluation.
    GatherMax {
        x: NodeId,
        segments: Vec<Vec<usize>>,
        argmax: Vec<usize>,
    },
    MaskSelect { mask: Vec<bool>, on: NodeId, off: NodeId },
    Softmax(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    KlRows { q: NodeId, p: NodeId },
    StopGrad(NodeId),
    Scale(NodeId, f64),
    Reshape(NodeId, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanRows { .. } => "mean_rows",
            Op::ConcatCols(..) => "concat",
            Op::GatherRows { .. } => "gather",
            Op::GatherMax { .. } => "gather_max",
            Op::MaskSelect { .. } => "mask_select",
            Op::Softmax(..) => "softmax",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::KlRows { .. } => "kl",
            Op::StopGrad(..) => "stop_gradient",
            Op::Scale(..) => "scale",
            Op::Reshape(..) => "reshape",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::ConcatCols(a, b) => vec![*a, *b],
            Op::MaskSelect { on, off, .. } => vec![*on, *off],
            Op::KlRows { q, p } => vec![*q, *p],
            Op::Sum(x)
            | Op::Mean(x)
            | Op::Softmax(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::StopGrad(x)
            | Op::Scale(x, _)
            | Op::Reshape(x, _) => vec![*x],
            Op::MeanRows { x, .. } | Op::GatherRows { x, .. } | Op::GatherMax { x, .. } => {
                vec![*x]
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// A recorded computation.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    outputs: BTreeMap<String, NodeId>,
}

/// Gradients of a scalar with respect to every node of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `id`, `None` when no
    /// differentiable path reaches the loss through it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn mismatch(node: usize, op: &'static str, detail: String) -> GraphError {
    GraphError::ShapeMismatch { node, op, detail }
}

/// Resolves a two-dimensional broadcast between matrix views.
fn broadcast(a: &Tensor, b: &Tensor) -> Option<(usize, usize, Vec<usize>)> {
    let (ra, ca, rb, cb) = (a.rows(), a.cols(), b.rows(), b.cols());
    let r = if ra == rb || rb == 1 {
        ra
    } else if ra == 1 {
        rb
    } else {
        return None;
    };
    let c = if ca == cb || cb == 1 {
        ca
    } else if ca == 1 {
        cb
    } else {
        return None;
    };
    let shape = if (ra, ca) == (r, c) {
        a.shape().to_vec()
    } else if (rb, cb) == (r, c) {
        b.shape().to_vec()
    } else {
        vec![r, c]
    };
    Some((r, c, shape))
}

fn bcast_index(rows: usize, cols: usize, r: usize, c: usize) -> usize {
    (if rows == 1 { 0 } else { r }) * cols + if cols == 1 { 0 } else { c }
}

fn elementwise(
    node: usize,
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, GraphError> {
    let (r, c, shape) = broadcast(a, b).ok_or_else(|| {
        mismatch(
            node,
            op,
            format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()),
        )
    })?;
    let (ra, ca, rb, cb) = (a.rows(), a.cols(), b.rows(), b.cols());
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(r * c);
    if (ra, ca) == (rb, cb) {
        out.extend(ad.iter().zip(bd).map(|(x, y)| f(*x, *y)));
    } else {
        for i in 0..r {
            for j in 0..c {
                out.push(f(
                    ad[bcast_index(ra, ca, i, j)],
                    bd[bcast_index(rb, cb, i, j)],
                ));
            }
        }
    }
    Ok(Tensor::new(shape, out)?)
}

/// Sums a full-size gradient back down to an operand's broadcast shape.
fn reduce_to(grad: &[f64], r: usize, c: usize, target: &Tensor) -> Vec<f64> {
    let (tr, tc) = (target.rows(), target.cols());
    if (tr, tc) == (r, c) {
        return grad.to_vec();
    }
    let mut out = vec![0.0; target.len()];
    for i in 0..r {
        for j in 0..c {
            out[bcast_index(tr, tc, i, j)] += grad[i * c + j];
        }
    }
    out
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn eval(node: usize, op: &mut Op, prev: &[Node]) -> Result<Tensor, GraphError> {
    let name = op.name();
    let v = |id: &NodeId| &prev[id.0].value;
    let out = match op {
        Op::Leaf { .. } => unreachable!("leaves are bound, not evaluated"),
        Op::Add(a, b) => elementwise(node, name, v(a), v(b), |x, y| x + y)?,
        Op::Sub(a, b) => elementwise(node, name, v(a), v(b), |x, y| x - y)?,
        Op::Mul(a, b) => elementwise(node, name, v(a), v(b), |x, y| x * y)?,
        Op::MatMul(a, b) => {
            let (a, b) = (v(a), v(b));
            if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
                return Err(mismatch(
                    node,
                    name,
                    format!("{:?} x {:?}", a.shape(), b.shape()),
                ));
            }
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))?
        }
        Op::Sum(x) => Tensor::scalar(v(x).sum()),
        Op::Mean(x) => {
            let x = v(x);
            if x.is_empty() {
                return Err(mismatch(node, name, "mean of an empty tensor".into()));
            }
            Tensor::scalar(x.sum() / x.len() as f64)
        }
        Op::MeanRows { x, groups } => {
            let x = v(x);
            let c = x.cols();
            let mut out = vec![0.0; groups.len() * c];
            for (g, rows) in groups.iter().enumerate() {
                if rows.is_empty() {
                    return Err(mismatch(node, name, format!("group {g} is empty")));
                }
                let o = &mut out[g * c..(g + 1) * c];
                for &r in rows.iter() {
                    if r >= x.rows() {
                        return Err(mismatch(node, name, format!("row {r} out of range")));
                    }
                    for (acc, xv) in o.iter_mut().zip(x.row(r)) {
                        *acc += xv;
                    }
                }
                let inv = rows.len() as f64;
                o.iter_mut().for_each(|a| *a /= inv);
            }
            Tensor::new(vec![groups.len(), c], out)?
        }
        Op::ConcatCols(a, b) => {
            let (a, b) = (v(a), v(b));
            if a.rows() != b.rows() {
                return Err(mismatch(
                    node,
                    name,
                    format!("{:?} beside {:?}", a.shape(), b.shape()),
                ));
            }
            let (ca, cb) = (a.cols(), b.cols());
            let mut out = Vec::with_capacity(a.len() + b.len());
            for r in 0..a.rows() {
                out.extend_from_slice(a.row(r));
                out.extend_from_slice(b.row(r));
            }
            Tensor::new(vec![a.rows(), ca + cb], out)?
        }
        Op::GatherRows { x, index } => {
            let x = v(x);
            let c = x.cols();
            let mut out = Vec::with_capacity(index.len() * c);
            for &r in index.iter() {
                if r >= x.rows() {
                    return Err(mismatch(node, name, format!("row {r} out of range")));
                }
                out.extend_from_slice(x.row(r));
            }
            Tensor::new(vec![index.len(), c], out)?
        }
        Op::GatherMax {
            x,
            segments,
            argmax,
        } => {
            let x = v(x);
            let c = x.cols();
            let mut out = Vec::with_capacity(segments.len() * c);
            argmax.clear();
            for (s, rows) in segments.iter().enumerate() {
                if rows.is_empty() {
                    return Err(mismatch(node, name, format!("segment {s} is empty")));
                }
                for j in 0..c {
                    let mut best = rows[0] * c + j;
                    for &r in rows.iter() {
                        if r >= x.rows() {
                            return Err(mismatch(node, name, format!("row {r} out of range")));
                        }
                        let idx = r * c + j;
                        if x.data()[idx] > x.data()[best] {
                            best = idx;
                        }
                    }
                    argmax.push(best);
                    out.push(x.data()[best]);
                }
            }
            Tensor::new(vec![segments.len(), c], out)?
        }
        Op::MaskSelect { mask, on, off } => {
            let (a, b) = (v(on), v(off));
            if a.shape() != b.shape() || mask.len() != a.rows() {
                return Err(mismatch(
                    node,
                    name,
                    format!(
                        "{:?} / {:?} with {} mask rows",
                        a.shape(),
                        b.shape(),
                        mask.len()
                    ),
                ));
            }
            let mut out = Vec::with_capacity(a.len());
            for (r, &m) in mask.iter().enumerate() {
                out.extend_from_slice(if m { a.row(r) } else { b.row(r) });
            }
            Tensor::new(a.shape().to_vec(), out)?
        }
        Op::Softmax(x) => {
            let x = v(x);
            let c = x.cols();
            let mut out = Vec::with_capacity(x.len());
            for r in 0..x.rows() {
                let row = x.row(r);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let start = out.len();
                let mut z = 0.0;
                for &xv in row {
                    let e = libm::exp(xv - m);
                    z += e;
                    out.push(e);
                }
                out[start..start + c].iter_mut().for_each(|e| *e /= z);
            }
            Tensor::new(x.shape().to_vec(), out)?
        }
        Op::Sigmoid(x) => {
            let x = v(x);
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|&t| sigmoid(t)).collect())?
        }
        Op::Relu(x) => {
            let x = v(x);
            Tensor::new(
                x.shape().to_vec(),
                x.data()
                    .iter()
                    .map(|&t| if t > 0.0 { t } else { 0.0 })
                    .collect(),
            )?
        }
        Op::KlRows { q, p } => {
            let (q, p) = (v(q), v(p));
            if q.shape() != p.shape() {
                return Err(mismatch(
                    node,
                    name,
                    format!("{:?} against {:?}", q.shape(), p.shape()),
                ));
            }
            let mut out = Vec::with_capacity(q.rows());
            for r in 0..q.rows() {
                let mut acc = 0.0;
                for (&qi, &pi) in q.row(r).iter().zip(p.row(r)) {
                    if qi > 0.0 {
                        acc += qi * (libm::log(qi) - libm::log(pi.max(KL_EPS)));
                    }
                }
                out.push(acc);
            }
            Tensor::new(vec![q.rows(), 1], out)?
        }
        Op::StopGrad(x) => {
            let mut t = v(x).clone();
            t.set_requires_grad(false);
            t
        }
        Op::Scale(x, s) => {
            let x = v(x);
            let s = *s;
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|t| t * s).collect())?
        }
        Op::Reshape(x, shape) => {
            let x = v(x).clone();
            let mut t = x.reshape(shape)?;
            t.set_requires_grad(false);
            t
        }
    };
    Ok(out)
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

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Whether any differentiable leaf reaches `id` without crossing a
    /// stop-gradient.
    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Records a leaf. Its `requires_grad` flag decides whether it is a
    /// differentiable parameter.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push_leaf(None, t)
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let mut t = t;
        t.set_requires_grad(false);
        self.push_leaf(None, t)
    }

    /// Records a named leaf that can later be rebound by [`Graph::forward`].
    pub fn input(&mut self, name: &str, t: Tensor) -> NodeId {
        self.push_leaf(Some(name.into()), t)
    }

    fn push_leaf(&mut self, name: Option<String>, t: Tensor) -> NodeId {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            op: Op::Leaf { name },
            value: t,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Names a node so that [`Graph::forward`] reports it.
    pub fn mark_output(&mut self, name: &str, id: NodeId) {
        self.outputs.insert(name.into(), id);
    }

    fn push(&mut self, mut op: Op) -> Result<NodeId, GraphError> {
        let idx = self.nodes.len();
        let value = eval(idx, &mut op, &self.nodes)?;
        let needs_grad = match op {
            Op::StopGrad(_) => false,
            _ => op.inputs().iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(NodeId(idx))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::MatMul(a, b))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Mean(x))
    }

    /// Row `g` of the result is the mean of the rows of `x` listed in
    /// `groups[g]`.
    pub fn mean_rows(&mut self, x: NodeId, groups: Vec<Vec<usize>>) -> Result<NodeId, GraphError> {
        self.push(Op::MeanRows { x, groups })
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::ConcatCols(a, b))
    }

    pub fn gather_rows(&mut self, x: NodeId, index: Vec<usize>) -> Result<NodeId, GraphError> {
        self.push(Op::GatherRows { x, index })
    }

    /// Per-column maximum over each segment of rows. The gradient flows to
    /// the first row attaining the maximum.
    pub fn gather_max(
        &mut self,
        x: NodeId,
        segments: Vec<Vec<usize>>,
    ) -> Result<NodeId, GraphError> {
        self.push(Op::GatherMax {
            x,
            segments,
            argmax: Vec::new(),
        })
    }

    /// Row `r` of the result is row `r` of `on` where `mask[r]` holds and of
    /// `off` elsewhere. Rows are copied verbatim.
    pub fn mask_select(
        &mut self,
        mask: Vec<bool>,
        on: NodeId,
        off: NodeId,
    ) -> Result<NodeId, GraphError> {
        self.push(Op::MaskSelect { mask, on, off })
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Softmax(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::Relu(x))
    }

    /// Row-wise `KL(q || p)` as a `[rows, 1]` column, with `0 log 0 = 0` and
    /// `p` clamped below by [`KL_EPS`].
    pub fn kl_rows(&mut self, q: NodeId, p: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::KlRows { q, p })
    }

    pub fn stop_gradient(&mut self, x: NodeId) -> Result<NodeId, GraphError> {
        self.push(Op::StopGrad(x))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId, GraphError> {
        self.push(Op::Scale(x, s))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, GraphError> {
        self.push(Op::Reshape(x, shape.to_vec()))
    }

    /// `a @ w + b`, the affine map every layer is built from.
    pub fn linear(&mut self, a: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let y = self.matmul(a, w)?;
        self.add(y, b)
    }

    /// Rebinds named inputs and re-executes every node in order.
    ///
    /// Inputs absent from `bindings` keep their current value. Returns the
    /// values of the nodes named via [`Graph::mark_output`].
    pub fn forward(
        &mut self,
        bindings: &BTreeMap<String, Tensor>,
    ) -> Result<BTreeMap<String, Tensor>, GraphError> {
        for (name, _) in bindings.iter() {
            let bound = self
                .nodes
                .iter()
                .any(|n| matches!(&n.op, Op::Leaf { name: Some(k) } if k == name));
            if !bound {
                return Err(GraphError::UnboundInput(name.clone()));
            }
        }
        for i in 0..self.nodes.len() {
            let (prev, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if let Op::Leaf { name } = &node.op {
                if let Some(t) = name.as_ref().and_then(|k| bindings.get(k)) {
                    let keep = node.value.requires_grad();
                    let mut t = t.clone();
                    t.set_requires_grad(keep);
                    node.value = t;
                }
                continue;
            }
            node.value = eval(i, &mut node.op, prev)?;
        }
        Ok(self
            .outputs
            .iter()
            .map(|(k, id)| (k.clone(), self.nodes[id.0].value.clone()))
            .collect())
    }

    /// Overwrites a leaf value in place (used by finite-difference probes).
    pub fn set_leaf(&mut self, id: NodeId, t: Tensor) {
        let node = &mut self.nodes[id.0];
        assert!(matches!(node.op, Op::Leaf { .. }), "node is not a leaf");
        let keep = node.value.requires_grad();
        node.value = t;
        node.value.set_requires_grad(keep);
    }

    /// Re-evaluates every non-leaf node against the current leaf values.
    pub fn recompute(&mut self) -> Result<(), GraphError> {
        self.forward(&BTreeMap::new()).map(|_| ())
    }

    /// Ids of the differentiable leaves, in creation order.
    pub fn parameters(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf { .. }) && n.value.requires_grad())
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    /// Every data-dependent branch taken on the last evaluation: relu signs,
    /// max-gather winners, row masks and KL clamps. Two evaluations with
    /// equal signatures lie on the same smooth piece of the function.
    pub fn branch_signature(&self) -> Vec<u64> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => sig.extend(
                    self.nodes[x.0]
                        .value
                        .data()
                        .iter()
                        .map(|&t| u64::from(t > 0.0)),
                ),
                Op::GatherMax { argmax, .. } => sig.extend(argmax.iter().map(|&i| i as u64)),
                Op::MaskSelect { mask, .. } => sig.extend(mask.iter().map(|&m| u64::from(m))),
                Op::KlRows { p, .. } => sig.extend(
                    self.nodes[p.0]
                        .value
                        .data()
                        .iter()
                        .map(|&t| u64::from(t < KL_EPS)),
                ),
                _ => {}
            }
        }
        sig
    }

    /// Checks that every recorded value is finite.
    pub fn check_finite(&self) -> Result<(), GraphError> {
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.value.is_finite() {
                return Err(GraphError::NonFinite {
                    node: i,
                    op: n.op.name(),
                });
            }
        }
        Ok(())
    }

    /// Reverse-mode sweep from a scalar node.
    ///
    /// Every differentiable leaf receives a gradient (zero when unreachable).
    /// Nothing propagates through stop-gradient nodes.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GraphError> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(GraphError::NonScalarLoss {
                node: loss.0,
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &node.op, &g, &mut grads);
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                match g {
                    Some(g) if node.needs_grad => {
                        Some(Tensor::new(node.value.shape().to_vec(), g).expect("gradient shape"))
                    }
                    _ if matches!(node.op, Op::Leaf { .. }) && node.value.requires_grad() => {
                        Some(Tensor::zeros(node.value.shape()))
                    }
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let wants = |id: NodeId| self.nodes[id.0].needs_grad;
        let out = &self.nodes[idx].value;
        match op {
            Op::Leaf { .. } | Op::StopGrad(_) => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (r, c) = (out.rows(), out.cols());
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(*a) {
                    accumulate(grads, *a, &reduce_to(g, r, c, val(*a)));
                }
                if wants(*b) {
                    let mut gb = reduce_to(g, r, c, val(*b));
                    if sign < 0.0 {
                        gb.iter_mut().for_each(|v| *v = -*v);
                    }
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Mul(a, b) => {
                let (r, c) = (out.rows(), out.cols());
                let (av, bv) = (val(*a), val(*b));
                let expand = |t: &Tensor| -> Vec<f64> {
                    let (tr, tc) = (t.rows(), t.cols());
                    if (tr, tc) == (r, c) {
                        return t.data().to_vec();
                    }
                    let mut e = Vec::with_capacity(r * c);
                    for i in 0..r {
                        for j in 0..c {
                            e.push(t.data()[bcast_index(tr, tc, i, j)]);
                        }
                    }
                    e
                };
                if wants(*a) {
                    let be = expand(bv);
                    let full: Vec<f64> = g.iter().zip(&be).map(|(x, y)| x * y).collect();
                    accumulate(grads, *a, &reduce_to(&full, r, c, av));
                }
                if wants(*b) {
                    let ae = expand(av);
                    let full: Vec<f64> = g.iter().zip(&ae).map(|(x, y)| x * y).collect();
                    accumulate(grads, *b, &reduce_to(&full, r, c, bv));
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if wants(*a) {
                    // dA = G · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    accumulate(grads, *a, &ga);
                }
                if wants(*b) {
                    // dB = Aᵀ · G
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aval = av.data()[i * k + p];
                            if aval == 0.0 {
                                continue;
                            }
                            let dst = &mut gb[p * n..(p + 1) * n];
                            for (d, x) in dst.iter_mut().zip(grow) {
                                *d += aval * x;
                            }
                        }
                    }
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    accumulate(grads, *x, &vec![g[0]; val(*x).len()]);
                }
            }
            Op::Mean(x) => {
                if wants(*x) {
                    let n = val(*x).len() as f64;
                    accumulate(grads, *x, &vec![g[0] / n; val(*x).len()]);
                }
            }
            Op::MeanRows { x, groups } => {
                if wants(*x) {
                    let xv = val(*x);
                    let c = xv.cols();
                    let mut gx = vec![0.0; xv.len()];
                    for (gi, rows) in groups.iter().enumerate() {
                        let inv = 1.0 / rows.len() as f64;
                        for &r in rows {
                            for j in 0..c {
                                gx[r * c + j] += g[gi * c + j] * inv;
                            }
                        }
                    }
                    accumulate(grads, *x, &gx);
                }
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (val(*a).cols(), val(*b).cols());
                let rows = out.rows();
                if wants(*a) {
                    let mut ga = Vec::with_capacity(rows * ca);
                    for r in 0..rows {
                        ga.extend_from_slice(&g[r * (ca + cb)..r * (ca + cb) + ca]);
                    }
                    accumulate(grads, *a, &ga);
                }
                if wants(*b) {
                    let mut gb = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        gb.extend_from_slice(&g[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                    }
                    accumulate(grads, *b, &gb);
                }
            }
            Op::GatherRows { x, index } => {
                if wants(*x) {
                    let xv = val(*x);
                    let c = xv.cols();
                    let mut gx = vec![0.0; xv.len()];
                    for (o, &r) in index.iter().enumerate() {
                        for j in 0..c {
                            gx[r * c + j] += g[o * c + j];
                        }
                    }
                    accumulate(grads, *x, &gx);
                }
            }
            Op::GatherMax { x, argmax, .. } => {
                if wants(*x) {
                    let mut gx = vec![0.0; val(*x).len()];
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += g[o];
                    }
                    accumulate(grads, *x, &gx);
                }
            }
            Op::MaskSelect { mask, on, off } => {
                let c = out.cols();
                for (target, pick) in [(*on, true), (*off, false)] {
                    if !wants(target) {
                        continue;
                    }
                    let mut gt = vec![0.0; out.len()];
                    for (r, &m) in mask.iter().enumerate() {
                        if m == pick {
                            gt[r * c..(r + 1) * c].copy_from_slice(&g[r * c..(r + 1) * c]);
                        }
                    }
                    accumulate(grads, target, &gt);
                }
            }
            Op::Softmax(x) => {
                if wants(*x) {
                    let c = out.cols();
                    let mut gx = vec![0.0; out.len()];
                    for r in 0..out.rows() {
                        let s = out.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] = s[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(grads, *x, &gx);
                }
            }
            Op::Sigmoid(x) => {
                if wants(*x) {
                    let gx: Vec<f64> = out
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(s, gv)| gv * s * (1.0 - s))
                        .collect();
                    accumulate(grads, *x, &gx);
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let gx: Vec<f64> = val(*x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&t, &gv)| if t > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(grads, *x, &gx);
                }
            }
            Op::KlRows { q, p } => {
                let (qv, pv) = (val(*q), val(*p));
                let c = qv.cols();
                if wants(*q) {
                    let mut gq = vec![0.0; qv.len()];
                    for (i, (&qi, &pi)) in qv.data().iter().zip(pv.data()).enumerate() {
                        if qi > 0.0 {
                            gq[i] = g[i / c] * (libm::log(qi) - libm::log(pi.max(KL_EPS)) + 1.0);
                        }
                    }
                    accumulate(grads, *q, &gq);
                }
                if wants(*p) {
                    let mut gp = vec![0.0; pv.len()];
                    for (i, (&qi, &pi)) in qv.data().iter().zip(pv.data()).enumerate() {
                        if pi >= KL_EPS {
                            gp[i] = -g[i / c] * qi / pi;
                        }
                    }
                    accumulate(grads, *p, &gp);
                }
            }
            Op::Scale(x, s) => {
                if wants(*x) {
                    let gx: Vec<f64> = g.iter().map(|v| v * s).collect();
                    accumulate(grads, *x, &gx);
                }
            }
            Op::Reshape(x, _) => {
                if wants(*x) {
                    accumulate(grads, *x, g);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    match &mut grads[id.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}
