use std::collections::HashMap;

use super::graph::{Graph, NodeId, Op};
use super::tensor::{Shape, Tensor};
use super::AutodiffError;

impl Graph {
    /// Build nodes holding `∂scalar/∂leaf` for every handle in `wrt`.
    ///
    /// The adjoints are ordinary graph nodes, so any function of the returned
    /// handles can itself be differentiated. Handles in `wrt` that `scalar`
    /// does not depend on get a zero constant of matching shape.
    ///
    /// Fan-in contributions are summed in ascending order of the contributing
    /// node, which makes the emitted structure a pure function of the graph.
    pub fn gradient(&mut self, scalar: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>, AutodiffError> {
        if scalar.0 >= self.len() {
            return Err(AutodiffError::UnknownNode(scalar.0));
        }
        let out_shape = self.shape(scalar);
        if out_shape != Shape::Scalar {
            return Err(AutodiffError::NotScalar(out_shape));
        }
        for w in wrt {
            if w.0 >= self.len() {
                return Err(AutodiffError::UnknownNode(w.0));
            }
        }

        let top = scalar.0;
        // needs[i]: node i depends on at least one wrt handle.
        let mut needs = vec![false; top + 1];
        for w in wrt {
            if w.0 <= top {
                needs[w.0] = true;
            }
        }
        for i in 0..=top {
            if !needs[i] {
                needs[i] = self.node(NodeId(i)).parents().iter().any(|p| needs[p.0]);
            }
        }

        let mut ones: HashMap<Shape, NodeId> = HashMap::new();
        let mut pending: Vec<Vec<(usize, NodeId)>> = vec![Vec::new(); top + 1];
        let mut adjoint: HashMap<usize, NodeId> = HashMap::new();

        if needs[top] {
            let seed = self.constant(Tensor::scalar(1.0));
            pending[top].push((top, seed));
        }

        for i in (0..=top).rev() {
            if pending[i].is_empty() {
                continue;
            }
            let mut parts = std::mem::take(&mut pending[i]);
            parts.sort_by_key(|(from, _)| *from);
            let mut acc = parts[0].1;
            for &(_, part) in &parts[1..] {
                acc = self.add(acc, part)?;
            }
            adjoint.insert(i, acc);

            let node = self.node(NodeId(i));
            if matches!(node.op(), Op::Leaf(_)) {
                continue;
            }
            let op = node.op().clone();
            let parents = node.parents().to_vec();
            let want: Vec<bool> = parents.iter().map(|p| needs[p.0]).collect();
            let contribs = self.reverse_rule(&op, NodeId(i), &parents, acc, &want, &mut ones)?;
            for (p, c) in parents.iter().zip(contribs) {
                if let Some(c) = c {
                    pending[p.0].push((i, c));
                }
            }
        }

        wrt.iter()
            .map(|w| match adjoint.get(&w.0) {
                Some(&a) => Ok(a),
                None => {
                    let shape = self.shape(*w);
                    Ok(self.constant(Tensor::zeros(shape)))
                }
            })
            .collect()
    }

    fn ones(&mut self, shape: Shape, cache: &mut HashMap<Shape, NodeId>) -> NodeId {
        if let Some(&id) = cache.get(&shape) {
            return id;
        }
        let id = self.constant(Tensor::filled(shape, 1.0));
        cache.insert(shape, id);
        id
    }

    /// Adjoint contributions of node `out` (with adjoint `g`) to each parent.
    fn reverse_rule(
        &mut self,
        op: &Op,
        out: NodeId,
        parents: &[NodeId],
        g: NodeId,
        want: &[bool],
        ones: &mut HashMap<Shape, NodeId>,
    ) -> Result<Vec<Option<NodeId>>, AutodiffError> {
        let w0 = want[0];
        let w1 = want.get(1).copied().unwrap_or(false);
        let a = parents[0];
        let b = parents.get(1).copied();
        let r = match op {
            Op::Leaf(_) => vec![],
            Op::Add => vec![w0.then_some(g), w1.then_some(g)],
            Op::Sub => {
                let gb = if w1 { Some(self.neg(g)?) } else { None };
                vec![w0.then_some(g), gb]
            }
            Op::Mul => {
                let b = b.unwrap();
                let ga = if w0 { Some(self.mul(g, b)?) } else { None };
                let gb = if w1 { Some(self.mul(g, a)?) } else { None };
                vec![ga, gb]
            }
            Op::Neg => vec![Some(self.neg(g)?)],
            Op::Scale => {
                let x = b.unwrap();
                let gs = if w0 { Some(self.dot(g, x)?) } else { None };
                let gx = if w1 { Some(self.scale(a, g)?) } else { None };
                vec![gs, gx]
            }
            Op::ScaleBy(c) => vec![Some(self.scale_by(g, *c)?)],
            Op::Sum => {
                let shape = self.shape(a);
                let one = self.ones(shape, ones);
                vec![Some(self.scale(g, one)?)]
            }
            Op::Dot => {
                let b = b.unwrap();
                let ga = if w0 { Some(self.scale(g, b)?) } else { None };
                let gb = if w1 { Some(self.scale(g, a)?) } else { None };
                vec![ga, gb]
            }
            Op::Square => {
                let ga = self.mul(g, a)?;
                vec![Some(self.scale_by(ga, 2.0)?)]
            }
            Op::Exp => vec![Some(self.mul(g, out)?)],
            Op::Ln => {
                let inv = self.recip(a)?;
                vec![Some(self.mul(g, inv)?)]
            }
            Op::Recip => {
                let y2 = self.square(out)?;
                let t = self.mul(g, y2)?;
                vec![Some(self.neg(t)?)]
            }
            Op::Softplus => {
                let s = self.sigmoid(a)?;
                vec![Some(self.mul(g, s)?)]
            }
            Op::Sigmoid => {
                let y2 = self.square(out)?;
                let d = self.sub(out, y2)?;
                vec![Some(self.mul(g, d)?)]
            }
            Op::MatVec => {
                let x = b.unwrap();
                let gm = if w0 { Some(self.outer(g, x)?) } else { None };
                let gx = if w1 { Some(self.mattvec(a, g)?) } else { None };
                vec![gm, gx]
            }
            Op::MatTVec => {
                let x = b.unwrap();
                let gm = if w0 { Some(self.outer(x, g)?) } else { None };
                let gx = if w1 { Some(self.matvec(a, g)?) } else { None };
                vec![gm, gx]
            }
            Op::Outer => {
                let v = b.unwrap();
                let gu = if w0 { Some(self.matvec(g, v)?) } else { None };
                let gv = if w1 { Some(self.mattvec(g, a)?) } else { None };
                vec![gu, gv]
            }
            Op::MatMul => {
                let bm = b.unwrap();
                let ga = if w0 {
                    let bt = self.transpose(bm)?;
                    Some(self.matmul(g, bt)?)
                } else {
                    None
                };
                let gb = if w1 {
                    let at = self.transpose(a)?;
                    Some(self.matmul(at, g)?)
                } else {
                    None
                };
                vec![ga, gb]
            }
            Op::Transpose => vec![Some(self.transpose(g)?)],
            Op::Slice { start, .. } => {
                let total = self.shape(a).len();
                vec![Some(self.pad(g, *start, total)?)]
            }
            Op::Pad { start, .. } => {
                let len = self.shape(a).len();
                vec![Some(self.slice(g, *start, len)?)]
            }
            Op::Reshape(_) => {
                let shape = self.shape(a);
                vec![Some(self.reshape(g, shape)?)]
            }
        };
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use crate::autodiff::{Graph, Tensor};

    #[test]
    fn gradient_of_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(1.0));
        let y = g.input(Tensor::scalar(2.0));
        let x2 = g.square(x).unwrap();
        let y2 = g.square(y).unwrap();
        let f = g.add(x2, y2).unwrap();
        let d = g.gradient(f, &[x, y]).unwrap();
        assert_eq!(g.scalar(d[0]), 2.0);
        assert_eq!(g.scalar(d[1]), 4.0);
    }

    #[test]
    fn second_derivative_of_softplus_at_zero() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(0.0));
        let f = g.softplus(x).unwrap();
        let d1 = g.gradient(f, &[x]).unwrap()[0];
        assert!((g.scalar(d1) - 0.5).abs() < 1e-15);
        let d2 = g.gradient(d1, &[x]).unwrap()[0];
        assert!((g.scalar(d2) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn unreachable_leaf_gets_zero_of_matching_shape() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let unused = g.input(Tensor::matrix(2, 2, vec![1.0; 4]));
        let f = g.sum(x).unwrap();
        let d = g.gradient(f, &[unused]).unwrap()[0];
        assert_eq!(g.value(d), &Tensor::matrix(2, 2, vec![0.0; 4]));
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let y = g.square(x).unwrap();
        assert!(g.gradient(y, &[x]).is_err());
    }

    #[test]
    fn repeated_parent_accumulates_both_paths() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![3.0, -1.0]));
        let xx = g.mul(x, x).unwrap();
        let f = g.sum(xx).unwrap();
        let d = g.gradient(f, &[x]).unwrap()[0];
        assert_eq!(g.value(d).data(), &[6.0, -2.0]);
    }
}
