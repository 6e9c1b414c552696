use super::graph::{Graph, NodeId};
use super::AutodiffError;

/// Floor for the relative-error denominator.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Compare reverse-mode gradients of `f` against central differences.
///
/// Each entry of each leaf is perturbed by `±eps`, the whole graph is
/// recomputed, and `(f(x+eps) − f(x−eps)) / (2·eps)` is compared with the
/// analytic value. Returns the worst `|analytic − numeric| / max(|analytic|, 1e-8)`.
///
/// `f` may itself depend on gradient nodes; this is how second-order paths are
/// checked. Leaf values are restored on return.
pub fn check_gradient(graph: &mut Graph, f: NodeId, leaves: &[NodeId], eps: f64) -> Result<f64, AutodiffError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(AutodiffError::InvalidStep(eps));
    }
    let grads = graph.gradient(f, leaves)?;
    let last = *grads.iter().max().unwrap_or(&f);
    if let Some(bad) = graph.first_non_finite(last.max(f)) {
        return Err(AutodiffError::NonFinite(bad.index()));
    }
    let analytic: Vec<Vec<f64>> = grads.iter().map(|&d| graph.value(d).data().to_vec()).collect();

    let mut worst = 0.0f64;
    for (leaf, exact) in leaves.iter().zip(&analytic) {
        let mut x = graph.value(*leaf).data().to_vec();
        for k in 0..x.len() {
            let orig = x[k];
            let hi = orig + eps;
            let lo = orig - eps;
            x[k] = hi;
            let fp = eval_at(graph, f, *leaf, &x)?;
            x[k] = lo;
            let fm = eval_at(graph, f, *leaf, &x)?;
            x[k] = orig;
            // The representable step, not the nominal one.
            let numeric = (fp - fm) / (hi - lo);
            let err = (exact[k] - numeric).abs() / exact[k].abs().max(REL_ERR_FLOOR);
            worst = worst.max(err);
        }
        graph.set_value(*leaf, &x)?;
    }
    graph.recompute();
    Ok(worst)
}

fn eval_at(graph: &mut Graph, f: NodeId, leaf: NodeId, x: &[f64]) -> Result<f64, AutodiffError> {
    graph.set_value(leaf, x)?;
    graph.recompute();
    let v = graph.scalar(f);
    if !v.is_finite() {
        let bad = graph.first_non_finite(f).unwrap_or(f);
        return Err(AutodiffError::NonFinite(bad.index()));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn square_at_three() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let f = g.square(x).unwrap();
        let err = check_gradient(&mut g, f, &[x], 1e-6).unwrap();
        assert!(err < 1e-8, "{err}");
        assert_eq!(g.value(x).item(), 3.0);
    }

    #[test]
    fn constant_function_has_zero_error() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        let c = g.constant(Tensor::scalar(4.0));
        let f = g.scale_by(c, 2.0).unwrap();
        assert_eq!(check_gradient(&mut g, f, &[x], 1e-6).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_reports_node() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(0.0));
        let l = g.ln(x).unwrap();
        let err = check_gradient(&mut g, l, &[x], 1e-6).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite(i) if i == l.index()), "{err}");
    }

    #[test]
    fn rejects_bad_step() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(0.0));
        assert!(matches!(check_gradient(&mut g, x, &[x], 0.0), Err(AutodiffError::InvalidStep(_))));
    }
}
