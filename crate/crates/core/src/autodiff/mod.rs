//! Minimal reverse-mode differentiation over dense float64 arrays.
//!
//! The reverse pass emits ordinary graph nodes instead of raw numbers, so the
//! gradient of a network output with respect to its input can appear inside a
//! training loss and be differentiated again with respect to the weights.

mod check;
mod graph;
mod reverse;
mod tensor;

pub use check::{check_gradient, REL_ERR_FLOOR};
pub use graph::{Graph, LeafKind, Node, NodeId, Op};
pub use tensor::{Shape, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible operand shapes {}", fmt_shapes(.shapes))]
    ShapeMismatch { op: &'static str, shapes: Vec<Shape> },
    #[error("{op}: wrong number of operands ({got})")]
    Arity { op: &'static str, got: usize },
    #[error("gradient requires a 0-dimensional output, got shape {0}")]
    NotScalar(Shape),
    #[error("node {0} does not exist")]
    UnknownNode(usize),
    #[error("node {0} is not a leaf")]
    NotALeaf(usize),
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

fn fmt_shapes(shapes: &[Shape]) -> String {
    shapes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
}
