use super::tensor::{Shape, Tensor};
use super::AutodiffError;

/// Handle to a node in a [`Graph`]. Handles are dense indices; a node's
/// parents always carry smaller indices than the node itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    Input,
    Parameter,
    Constant,
}

/// Primitive tags. Each primitive has a forward rule (`eval`) and a reverse
/// rule expressed in terms of other primitives (see `reverse.rs`), which is
/// what makes gradients differentiable again.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf(LeafKind),
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    Neg,
    /// `scalar * array`, the only broadcast the engine allows.
    Scale,
    /// Multiplication by a literal.
    ScaleBy(f64),
    /// Sum of all entries, producing a scalar.
    Sum,
    /// Inner product of two same-shaped arrays, producing a scalar.
    Dot,
    Square,
    Exp,
    Ln,
    Recip,
    Softplus,
    Sigmoid,
    /// `A x` for `A: [r x c]`, `x: [c]`.
    MatVec,
    /// `Aᵀ x` for `A: [r x c]`, `x: [r]`.
    MatTVec,
    /// `u vᵀ`.
    Outer,
    MatMul,
    Transpose,
    /// Contiguous sub-vector.
    Slice {
        start: usize,
        len: usize,
    },
    /// Embed a vector into zeros of length `total` at offset `start`.
    Pad {
        start: usize,
        total: usize,
    },
    Reshape(Shape),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Add => "add",
            Op::Sub => "subtract",
            Op::Mul => "multiply",
            Op::Neg => "negate",
            Op::Scale => "scale",
            Op::ScaleBy(_) => "scale_by",
            Op::Sum => "sum",
            Op::Dot => "dot",
            Op::Square => "square",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Recip => "recip",
            Op::Softplus => "softplus",
            Op::Sigmoid => "sigmoid",
            Op::MatVec => "matvec",
            Op::MatTVec => "mattvec",
            Op::Outer => "outer",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Slice { .. } => "slice",
            Op::Pad { .. } => "pad",
            Op::Reshape(_) => "reshape",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Leaf(_) => 0,
            Op::Add | Op::Sub | Op::Mul | Op::Scale | Op::Dot | Op::MatVec | Op::MatTVec | Op::Outer | Op::MatMul => 2,
            _ => 1,
        }
    }

    /// Output shape for the given parent shapes, or `None` if they do not
    /// conform to the primitive's signature.
    fn output_shape(&self, p: &[Shape]) -> Option<Shape> {
        use Shape::*;
        match (self, p) {
            (Op::Add | Op::Sub | Op::Mul, [a, b]) if a == b => Some(*a),
            (Op::Neg | Op::ScaleBy(_) | Op::Square | Op::Exp | Op::Ln, [a]) => Some(*a),
            (Op::Recip | Op::Softplus | Op::Sigmoid, [a]) => Some(*a),
            (Op::Scale, [Scalar, a]) => Some(*a),
            (Op::Sum, [_]) => Some(Scalar),
            (Op::Dot, [a, b]) if a == b => Some(Scalar),
            (Op::MatVec, [Matrix(r, c), Vector(n)]) if c == n => Some(Vector(*r)),
            (Op::MatTVec, [Matrix(r, c), Vector(n)]) if r == n => Some(Vector(*c)),
            (Op::Outer, [Vector(r), Vector(c)]) => Some(Matrix(*r, *c)),
            (Op::MatMul, [Matrix(r, k1), Matrix(k2, c)]) if k1 == k2 => Some(Matrix(*r, *c)),
            (Op::Transpose, [Matrix(r, c)]) => Some(Matrix(*c, *r)),
            (Op::Slice { start, len }, [Vector(n)]) if start + len <= *n && *len > 0 => Some(Vector(*len)),
            (Op::Pad { start, total }, [Vector(n)]) if start + n <= *total => Some(Vector(*total)),
            (Op::Reshape(to), [from]) if to.len() == from.len() => Some(*to),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub(crate) op: Op,
    pub(crate) parents: Vec<NodeId>,
    pub(crate) value: Tensor,
}

impl Node {
    pub fn op(&self) -> &Op {
        &self.op
    }

    pub fn parents(&self) -> &[NodeId] {
        &self.parents
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

/// Append-only computation record with eager forward evaluation.
///
/// Values are computed when a node is created. Leaf values may later be
/// overwritten with [`Graph::set_value`] and the whole graph re-evaluated with
/// [`Graph::recompute`]; the node structure never changes, so a graph built
/// once (including its gradient nodes) can be reused for many inputs.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
    parameters: Vec<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn parameters(&self) -> &[NodeId] {
        &self.parameters
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    /// Scalar value of `id` (first entry for non-scalars).
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    fn push_leaf(&mut self, kind: LeafKind, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op: Op::Leaf(kind), parents: Vec::new(), value });
        match kind {
            LeafKind::Input => self.inputs.push(id),
            LeafKind::Parameter => self.parameters.push(id),
            LeafKind::Constant => {}
        }
        id
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(LeafKind::Input, value)
    }

    pub fn parameter(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(LeafKind::Parameter, value)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(LeafKind::Constant, value)
    }

    /// Overwrite the value of a leaf. Call [`Graph::recompute`] afterwards to
    /// refresh dependent nodes.
    pub fn set_value(&mut self, id: NodeId, data: &[f64]) -> Result<(), AutodiffError> {
        let node = self.nodes.get_mut(id.0).ok_or(AutodiffError::UnknownNode(id.0))?;
        if !matches!(node.op, Op::Leaf(_)) {
            return Err(AutodiffError::NotALeaf(id.0));
        }
        let shape = node.value.shape();
        if data.len() != shape.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "set_value",
                shapes: vec![shape, Shape::Vector(data.len())],
            });
        }
        node.value.data_mut().copy_from_slice(data);
        Ok(())
    }

    /// Re-evaluate every non-leaf node in creation (topological) order.
    pub fn recompute(&mut self) {
        self.recompute_from(0);
    }

    /// Re-evaluate non-leaf nodes with index `>= start`. Nodes below `start`
    /// are assumed current.
    pub fn recompute_from(&mut self, start: usize) {
        for i in start..self.nodes.len() {
            let (done, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            match node.parents.len() {
                0 => {}
                1 => eval(&node.op, &done[node.parents[0].0].value, None, &mut node.value),
                _ => eval(
                    &node.op,
                    &done[node.parents[0].0].value,
                    Some(&done[node.parents[1].0].value),
                    &mut node.value,
                ),
            }
        }
    }

    /// Record a primitive application and evaluate it.
    pub fn apply(&mut self, op: Op, parents: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if matches!(op, Op::Leaf(_)) || parents.len() != op.arity() {
            return Err(AutodiffError::Arity { op: op.name(), got: parents.len() });
        }
        let mut shapes = Vec::with_capacity(parents.len());
        for p in parents {
            let node = self.nodes.get(p.0).ok_or(AutodiffError::UnknownNode(p.0))?;
            shapes.push(node.value.shape());
        }
        let out_shape =
            op.output_shape(&shapes).ok_or(AutodiffError::ShapeMismatch { op: op.name(), shapes: shapes.clone() })?;
        let mut value = Tensor::zeros(out_shape);
        {
            let a = &self.nodes[parents[0].0].value;
            let b = parents.get(1).map(|p| &self.nodes[p.0].value);
            eval(&op, a, b, &mut value);
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, parents: parents.to_vec(), value });
        Ok(id)
    }

    /// Lowest-indexed node in `0..=upto` holding a non-finite value.
    pub fn first_non_finite(&self, upto: NodeId) -> Option<NodeId> {
        self.nodes[..=upto.0].iter().position(|n| !n.value.is_finite()).map(NodeId)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Neg, &[a])
    }

    pub fn scale(&mut self, s: NodeId, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Scale, &[s, a])
    }

    pub fn scale_by(&mut self, a: NodeId, c: f64) -> Result<NodeId, AutodiffError> {
        self.apply(Op::ScaleBy(c), &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sum, &[a])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Dot, &[a, b])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Square, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Exp, &[a])
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Ln, &[a])
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Recip, &[a])
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Softplus, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::MatVec, &[m, x])
    }

    pub fn mattvec(&mut self, m: NodeId, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::MatTVec, &[m, x])
    }

    pub fn outer(&mut self, u: NodeId, v: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Outer, &[u, v])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Slice { start, len }, &[a])
    }

    pub fn pad(&mut self, a: NodeId, start: usize, total: usize) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Pad { start, total }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, to: Shape) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Reshape(to), &[a])
    }

    /// Scalar entry `i` of a vector, as `sum(slice(a, i, 1))`.
    pub fn index(&mut self, a: NodeId, i: usize) -> Result<NodeId, AutodiffError> {
        let s = self.slice(a, i, 1)?;
        self.sum(s)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

fn map_into(a: &Tensor, out: &mut Tensor, f: impl Fn(f64) -> f64) {
    for (o, &x) in out.data_mut().iter_mut().zip(a.data()) {
        *o = f(x);
    }
}

fn zip_into(a: &Tensor, b: &Tensor, out: &mut Tensor, f: impl Fn(f64, f64) -> f64) {
    for ((o, &x), &y) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        *o = f(x, y);
    }
}

/// Forward rule. Shapes were validated when the node was created.
fn eval(op: &Op, a: &Tensor, b: Option<&Tensor>, out: &mut Tensor) {
    match op {
        Op::Leaf(_) => {}
        Op::Add => zip_into(a, b.unwrap(), out, |x, y| x + y),
        Op::Sub => zip_into(a, b.unwrap(), out, |x, y| x - y),
        Op::Mul => zip_into(a, b.unwrap(), out, |x, y| x * y),
        Op::Neg => map_into(a, out, |x| -x),
        Op::Scale => {
            let s = a.item();
            map_into(b.unwrap(), out, |x| s * x);
        }
        Op::ScaleBy(c) => {
            let c = *c;
            map_into(a, out, |x| c * x);
        }
        Op::Sum => out.data_mut()[0] = a.data().iter().sum(),
        Op::Dot => out.data_mut()[0] = a.data().iter().zip(b.unwrap().data()).map(|(x, y)| x * y).sum(),
        Op::Square => map_into(a, out, |x| x * x),
        Op::Exp => map_into(a, out, f64::exp),
        Op::Ln => map_into(a, out, f64::ln),
        Op::Recip => map_into(a, out, |x| 1.0 / x),
        Op::Softplus => map_into(a, out, softplus),
        Op::Sigmoid => map_into(a, out, sigmoid),
        Op::MatVec => {
            let Shape::Matrix(_, c) = a.shape() else { unreachable!() };
            let x = b.unwrap().data();
            for (o, row) in out.data_mut().iter_mut().zip(a.data().chunks_exact(c)) {
                *o = row.iter().zip(x).map(|(w, v)| w * v).sum();
            }
        }
        Op::MatTVec => {
            let Shape::Matrix(_, c) = a.shape() else { unreachable!() };
            let x = b.unwrap().data();
            let o = out.data_mut();
            o.fill(0.0);
            for (row, &xi) in a.data().chunks_exact(c).zip(x) {
                for (oj, w) in o.iter_mut().zip(row) {
                    *oj += w * xi;
                }
            }
        }
        Op::Outer => {
            let v = b.unwrap().data();
            let c = v.len();
            for (row, &ui) in out.data_mut().chunks_exact_mut(c).zip(a.data()) {
                for (o, vj) in row.iter_mut().zip(v) {
                    *o = ui * vj;
                }
            }
        }
        Op::MatMul => {
            let b = b.unwrap();
            let Shape::Matrix(_, k) = a.shape() else { unreachable!() };
            let Shape::Matrix(_, c) = b.shape() else { unreachable!() };
            let o = out.data_mut();
            o.fill(0.0);
            for (orow, arow) in o.chunks_exact_mut(c).zip(a.data().chunks_exact(k)) {
                for (aik, brow) in arow.iter().zip(b.data().chunks_exact(c)) {
                    for (oj, bkj) in orow.iter_mut().zip(brow) {
                        *oj += aik * bkj;
                    }
                }
            }
        }
        Op::Transpose => {
            let Shape::Matrix(r, c) = a.shape() else { unreachable!() };
            let o = out.data_mut();
            for i in 0..r {
                for j in 0..c {
                    o[j * r + i] = a.data()[i * c + j];
                }
            }
        }
        Op::Slice { start, len } => {
            out.data_mut().copy_from_slice(&a.data()[*start..start + len]);
        }
        Op::Pad { start, .. } => {
            let o = out.data_mut();
            o.fill(0.0);
            o[*start..start + a.data().len()].copy_from_slice(a.data());
        }
        Op::Reshape(_) => out.data_mut().copy_from_slice(a.data()),
    }
}
