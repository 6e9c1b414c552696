//! Network head → structured operators → one forward-Euler step.
//!
//! The head is packed row-major as `[l (D×D), m (D×D), energies]` where the
//! energies are `F` for the single-generator bracket and `H, S` for GENERIC.
//! `L = l − lᵀ` is skew-symmetric and `M = m·mᵀ` is positive semi-definite by
//! construction.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{AutodiffError, Graph, NodeId, Shape};
use crate::nn::{BoundNet, NnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Formalism {
    /// `ż = (L + M)∇F`.
    SingleGenerator,
    /// `ż = L∇H + M∇S`.
    Generic,
}

impl Formalism {
    pub const ALL: [Formalism; 2] = [Formalism::SingleGenerator, Formalism::Generic];

    pub fn as_str(self) -> &'static str {
        match self {
            Formalism::SingleGenerator => "single",
            Formalism::Generic => "generic",
        }
    }

    pub fn n_energies(self) -> usize {
        match self {
            Formalism::SingleGenerator => 1,
            Formalism::Generic => 2,
        }
    }

    /// Head width for state dimension `d`.
    pub fn head_len(self, d: usize) -> usize {
        2 * d * d + self.n_energies()
    }
}

impl fmt::Display for Formalism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Formalism {
    type Err = BracketError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" | "single-generator" | "single_generator" => Ok(Formalism::SingleGenerator),
            "generic" | "GENERIC" => Ok(Formalism::Generic),
            other => Err(BracketError::UnknownFormalism(other.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BracketError {
    #[error("head has length {got}; {formalism} layout for D={dim} is l[D²] ++ m[D²] ++ {energies} = {expected}")]
    HeadLength { formalism: Formalism, dim: usize, expected: usize, got: usize, energies: &'static str },
    #[error("degeneracy conditions need separate H and S; not defined for the single-generator bracket")]
    NoDegeneracy,
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("state has dimension {got}, operators have {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite Euler step (|L|={norm_l:.3e}, |M|={norm_m:.3e}, gradient norms {grad_norms:?})")]
    NonFinite { norm_l: f64, norm_m: f64, grad_norms: Vec<f64> },
    #[error("unknown formalism `{0}` (expected `single` or `generic`)")]
    UnknownFormalism(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Energies {
    Single { f: NodeId },
    Generic { h: NodeId, s: NodeId },
}

/// Parsed network output.
#[derive(Clone, Copy, Debug)]
pub struct BracketHead {
    pub dim: usize,
    /// `D×D` matrix node.
    pub l: NodeId,
    /// `D×D` matrix node.
    pub m: NodeId,
    pub energies: Energies,
}

impl BracketHead {
    pub fn formalism(&self) -> Formalism {
        match self.energies {
            Energies::Single { .. } => Formalism::SingleGenerator,
            Energies::Generic { .. } => Formalism::Generic,
        }
    }
}

/// Assembled `L` (skew) and `M` (PSD).
#[derive(Clone, Copy, Debug)]
pub struct Operators {
    pub l: NodeId,
    pub m: NodeId,
}

/// Energy gradients with respect to the state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Drive {
    Single { grad_f: NodeId },
    Generic { grad_h: NodeId, grad_s: NodeId },
}

impl Drive {
    pub fn handles(&self) -> Vec<NodeId> {
        match *self {
            Drive::Single { grad_f } => vec![grad_f],
            Drive::Generic { grad_h, grad_s } => vec![grad_h, grad_s],
        }
    }
}

pub struct StepInput {
    pub z: NodeId,
    pub dt: f64,
    pub drive: Drive,
}

pub fn split_head(g: &mut Graph, raw: NodeId, dim: usize, formalism: Formalism) -> Result<BracketHead, BracketError> {
    let expected = formalism.head_len(dim);
    let got = g.shape(raw);
    if got != Shape::Vector(expected) {
        return Err(BracketError::HeadLength {
            formalism,
            dim,
            expected,
            got: got.len(),
            energies: match formalism {
                Formalism::SingleGenerator => "[F]",
                Formalism::Generic => "[H, S]",
            },
        });
    }
    let dd = dim * dim;
    let l_flat = g.slice(raw, 0, dd)?;
    let l = g.reshape(l_flat, Shape::Matrix(dim, dim))?;
    let m_flat = g.slice(raw, dd, dd)?;
    let m = g.reshape(m_flat, Shape::Matrix(dim, dim))?;
    let energies = match formalism {
        Formalism::SingleGenerator => Energies::Single { f: g.index(raw, 2 * dd)? },
        Formalism::Generic => Energies::Generic { h: g.index(raw, 2 * dd)?, s: g.index(raw, 2 * dd + 1)? },
    };
    Ok(BracketHead { dim, l, m, energies })
}

/// `L = l − lᵀ`, `M = m·mᵀ`.
pub fn assemble(g: &mut Graph, head: &BracketHead) -> Result<Operators, BracketError> {
    let lt = g.transpose(head.l)?;
    let l = g.sub(head.l, lt)?;
    let mt = g.transpose(head.m)?;
    let m = g.matmul(head.m, mt)?;
    Ok(Operators { l, m })
}

/// Gradients of the head's energies with respect to the network input `z`.
pub fn energy_gradients(g: &mut Graph, head: &BracketHead, z: NodeId) -> Result<Drive, BracketError> {
    Ok(match head.energies {
        Energies::Single { f } => Drive::Single { grad_f: g.gradient(f, &[z])?[0] },
        Energies::Generic { h, s } => {
            let grad_h = g.gradient(h, &[z])?[0];
            let grad_s = g.gradient(s, &[z])?[0];
            Drive::Generic { grad_h, grad_s }
        }
    })
}

/// The continuous-time vector field `(L+M)∇F` or `L∇H + M∇S`.
pub fn vector_field(g: &mut Graph, ops: &Operators, drive: &Drive) -> Result<NodeId, BracketError> {
    Ok(match *drive {
        Drive::Single { grad_f } => {
            let lm = g.add(ops.l, ops.m)?;
            g.matvec(lm, grad_f)?
        }
        Drive::Generic { grad_h, grad_s } => {
            let rev = g.matvec(ops.l, grad_h)?;
            let irr = g.matvec(ops.m, grad_s)?;
            g.add(rev, irr)?
        }
    })
}

/// Forward Euler: `z + Δt · field`.
pub fn step(g: &mut Graph, inp: &StepInput, ops: &Operators) -> Result<NodeId, BracketError> {
    if !(inp.dt > 0.0 && inp.dt.is_finite()) {
        return Err(BracketError::InvalidStep(inp.dt));
    }
    let Shape::Matrix(d, _) = g.shape(ops.l) else { unreachable!("L is a matrix") };
    let zs = g.shape(inp.z);
    if zs != Shape::Vector(d) {
        return Err(BracketError::Dimension { expected: d, got: zs.len() });
    }
    for h in inp.drive.handles() {
        if g.shape(h) != Shape::Vector(d) {
            return Err(BracketError::Dimension { expected: d, got: g.shape(h).len() });
        }
    }
    let field = vector_field(g, ops, &inp.drive)?;
    let incr = g.scale_by(field, inp.dt)?;
    let next = g.add(inp.z, incr)?;
    check_step(g, ops, &inp.drive, next)?;
    Ok(next)
}

/// Error out if `next` holds non-finite values, with operator diagnostics.
pub fn check_step(g: &Graph, ops: &Operators, drive: &Drive, next: NodeId) -> Result<(), BracketError> {
    if g.value(next).is_finite() {
        return Ok(());
    }
    Err(BracketError::NonFinite {
        norm_l: g.value(ops.l).norm(),
        norm_m: g.value(ops.m).norm(),
        grad_norms: drive.handles().iter().map(|&h| g.value(h).norm()).collect(),
    })
}

/// `(L∇S, M∇H)`; the degeneracy loss is `‖L∇S‖² + ‖M∇H‖²`.
pub fn degeneracy_residuals(g: &mut Graph, ops: &Operators, drive: &Drive) -> Result<(NodeId, NodeId), BracketError> {
    match *drive {
        Drive::Single { .. } => Err(BracketError::NoDegeneracy),
        Drive::Generic { grad_h, grad_s } => {
            let rl = g.matvec(ops.l, grad_s)?;
            let rm = g.matvec(ops.m, grad_h)?;
            Ok((rl, rm))
        }
    }
}

/// Every node produced by one network evaluation plus Euler step.
#[derive(Clone, Debug)]
pub struct StepNodes {
    pub raw: NodeId,
    pub head: BracketHead,
    pub ops: Operators,
    pub drive: Drive,
    pub next: NodeId,
}

/// Network forward at `net_input`, then Euler step from `base`.
///
/// During teacher-forced training `net_input` and `base` are the same
/// ground-truth state; in a rollout both are the current prediction.
pub fn build_step(
    g: &mut Graph,
    net: &BoundNet,
    net_input: NodeId,
    base: NodeId,
    dt: f64,
    formalism: Formalism,
) -> Result<StepNodes, BracketError> {
    let dim = g.shape(net_input).len();
    let raw = net.forward(g, net_input)?;
    let head = split_head(g, raw, dim, formalism)?;
    let ops = assemble(g, &head)?;
    let drive = energy_gradients(g, &head, net_input)?;
    let next = step(g, &StepInput { z: base, dt, drive }, &ops)?;
    Ok(StepNodes { raw, head, ops, drive, next })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn mat(g: &mut Graph, d: usize, v: &[f64]) -> NodeId {
        g.input(Tensor::matrix(d, d, v.to_vec()))
    }

    fn vecn(g: &mut Graph, v: &[f64]) -> NodeId {
        g.input(Tensor::vector(v.to_vec()))
    }

    #[test]
    fn split_generic_layout() {
        let mut g = Graph::new();
        let raw: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r = vecn(&mut g, &raw);
        let head = split_head(&mut g, r, 2, Formalism::Generic).unwrap();
        assert_eq!(g.value(head.l).data(), &[0., 1., 2., 3.]);
        assert_eq!(g.value(head.m).data(), &[4., 5., 6., 7.]);
        let Energies::Generic { h, s } = head.energies else { panic!() };
        assert_eq!((g.scalar(h), g.scalar(s)), (8.0, 9.0));
    }

    #[test]
    fn zero_head_gives_zero_operators() {
        let mut g = Graph::new();
        let r = vecn(&mut g, &[0.0; 9]);
        let head = split_head(&mut g, r, 2, Formalism::SingleGenerator).unwrap();
        let ops = assemble(&mut g, &head).unwrap();
        assert!(g.value(ops.l).data().iter().all(|&v| v == 0.0));
        assert!(g.value(ops.m).data().iter().all(|&v| v == 0.0));
        let Energies::Single { f } = head.energies else { panic!() };
        assert_eq!(g.scalar(f), 0.0);
    }

    #[test]
    fn wrong_head_length_names_layout() {
        let mut g = Graph::new();
        let r = vecn(&mut g, &[0.0; 102]);
        let err = split_head(&mut g, r, 10, Formalism::Generic).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("202") && msg.contains("102") && msg.contains("[H, S]"), "{msg}");
        assert_eq!(Formalism::Generic.head_len(10), 202);
        assert_eq!(Formalism::SingleGenerator.head_len(10), 201);
    }

    #[test]
    fn assemble_examples() {
        let mut g = Graph::new();
        let l = mat(&mut g, 2, &[1., 2., 3., 4.]);
        let m = mat(&mut g, 2, &[1., 0., 0., 1.]);
        let head = BracketHead { dim: 2, l, m, energies: Energies::Single { f: l } };
        let ops = assemble(&mut g, &head).unwrap();
        assert_eq!(g.value(ops.l).data(), &[0., -1., 1., 0.]);
        assert_eq!(g.value(ops.m).data(), &[1., 0., 0., 1.]);

        let sym = mat(&mut g, 2, &[1., 5., 5., 2.]);
        let head = BracketHead { dim: 2, l: sym, m, energies: Energies::Single { f: l } };
        let ops = assemble(&mut g, &head).unwrap();
        assert!(g.value(ops.l).data().iter().all(|&v| v == 0.0));
    }

    fn ops_from(g: &mut Graph, l: &[f64], m: &[f64]) -> Operators {
        Operators { l: mat(g, 2, l), m: mat(g, 2, m) }
    }

    #[test]
    fn step_examples() {
        let mut g = Graph::new();
        let ops = ops_from(&mut g, &[0., 1., -1., 0.], &[0.; 4]);
        let z = vecn(&mut g, &[0., 0.]);
        let gh = vecn(&mut g, &[1., 0.]);
        let gs = vecn(&mut g, &[0., 0.]);
        let next =
            step(&mut g, &StepInput { z, dt: 0.1, drive: Drive::Generic { grad_h: gh, grad_s: gs } }, &ops).unwrap();
        assert_eq!(g.value(next).data(), &[0.0, -0.1]);

        let zf = vecn(&mut g, &[0.3, -2.0]);
        let zero = vecn(&mut g, &[0., 0.]);
        let next = step(&mut g, &StepInput { z: zf, dt: 0.7, drive: Drive::Single { grad_f: zero } }, &ops).unwrap();
        assert_eq!(g.value(next).data(), &[0.3, -2.0]);

        let ops = ops_from(&mut g, &[0.; 4], &[1., 0., 0., 1.]);
        let ones = vecn(&mut g, &[1., 1.]);
        let next = step(&mut g, &StepInput { z: zero, dt: 0.5, drive: Drive::Single { grad_f: ones } }, &ops).unwrap();
        assert_eq!(g.value(next).data(), &[0.5, 0.5]);

        assert!(matches!(
            step(&mut g, &StepInput { z: zero, dt: 0.0, drive: Drive::Single { grad_f: ones } }, &ops),
            Err(BracketError::InvalidStep(_))
        ));
        let z3 = vecn(&mut g, &[0.; 3]);
        assert!(matches!(
            step(&mut g, &StepInput { z: z3, dt: 0.1, drive: Drive::Single { grad_f: ones } }, &ops),
            Err(BracketError::Dimension { .. })
        ));
    }

    #[test]
    fn non_finite_step_reports_norms() {
        let mut g = Graph::new();
        let ops = ops_from(&mut g, &[0., 1., -1., 0.], &[0.; 4]);
        let z = vecn(&mut g, &[0., 0.]);
        let gf = vecn(&mut g, &[f64::INFINITY, 0.]);
        let err = step(&mut g, &StepInput { z, dt: 0.1, drive: Drive::Single { grad_f: gf } }, &ops).unwrap_err();
        let BracketError::NonFinite { norm_l, norm_m, grad_norms } = err else { panic!("{err}") };
        assert!((norm_l - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(norm_m, 0.0);
        assert!(grad_norms[0].is_infinite());
    }

    #[test]
    fn degeneracy_examples() {
        let mut g = Graph::new();
        let ops = ops_from(&mut g, &[0., 1., -1., 0.], &[0.; 4]);
        let gh = vecn(&mut g, &[3., 4.]);
        let gs = vecn(&mut g, &[1., 0.]);
        let (rl, rm) = degeneracy_residuals(&mut g, &ops, &Drive::Generic { grad_h: gh, grad_s: gs }).unwrap();
        assert_eq!(g.value(rl).data(), &[0., -1.]);
        assert_eq!(g.value(rm).data(), &[0., 0.]);
        assert!(matches!(
            degeneracy_residuals(&mut g, &ops, &Drive::Single { grad_f: gh }),
            Err(BracketError::NoDegeneracy)
        ));
    }

    #[test]
    fn formalism_parse() {
        assert_eq!("generic".parse::<Formalism>().unwrap(), Formalism::Generic);
        assert_eq!("single".parse::<Formalism>().unwrap(), Formalism::SingleGenerator);
        assert!("triple".parse::<Formalism>().is_err());
    }
}
