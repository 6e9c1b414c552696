use serde::Serialize;

use super::HarnessError;
use crate::autodiff::{Graph, NodeId, Shape, Tensor};
use crate::bracket::{build_step, Drive, Formalism, StepNodes};
use crate::dataset::{Dataset, System};
use crate::nn::{BoundNet, NetParams};
use crate::sim::pendulum::{self, PendulumParams};

/// The trivial-solution flag fires when `median‖M∇S‖ < TRIVIAL_RATIO · median‖L∇H‖`.
pub const TRIVIAL_RATIO: f64 = 1e-6;

/// Analytic energy used for the energy-error series.
#[derive(Clone, Debug, PartialEq)]
pub enum EnergyFn {
    Pendulum(PendulumParams),
    /// A state component that is itself an energy.
    Component(usize),
    None,
}

impl EnergyFn {
    pub fn for_dataset(ds: &Dataset) -> Self {
        match ds.system() {
            System::Pendulum => EnergyFn::Pendulum(PendulumParams::from_manifest(&ds.manifest)),
            System::Couette => EnergyFn::Component(3),
            System::Custom => EnergyFn::None,
        }
    }

    /// `None` when the state lies outside the energy's domain.
    pub fn energy(&self, z: &[f64]) -> Option<f64> {
        match self {
            EnergyFn::Pendulum(p) => pendulum::total_energy(z, p).ok(),
            EnergyFn::Component(i) => z.get(*i).copied(),
            EnergyFn::None => None,
        }
    }
}

/// Norms of the GENERIC terms at one rollout state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub l_grad_h: f64,
    pub m_grad_s: f64,
    pub l_grad_s: f64,
    pub m_grad_h: f64,
    /// `|∇Hᵀ M ∇S|`, the learned energy's rate of change.
    pub dh_dt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// Flattened `[time][component]`, starting with `z0`.
    pub states: Vec<f64>,
    pub dim: usize,
    /// First step whose state was non-finite; `states` stops before it.
    pub failed_at: Option<usize>,
    /// One entry per state fed to the network (GENERIC only).
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Rollout {
    pub fn n_states(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.dim..(t + 1) * self.dim]
    }
}

/// Network evaluation plus Euler step, reused across rollout steps.
pub struct RolloutGraph {
    g: Graph,
    net: BoundNet,
    z: NodeId,
    step: StepNodes,
    dim: usize,
    formalism: Formalism,
}

impl RolloutGraph {
    pub fn new(params: &NetParams, formalism: Formalism, dt: f64) -> Result<Self, HarnessError> {
        let dim = params.input_dim();
        let mut g = Graph::new();
        let net = params.bind(&mut g);
        let z = g.input(Tensor::zeros(Shape::Vector(dim)));
        let step = build_step(&mut g, &net, z, z, dt, formalism)?;
        Ok(RolloutGraph { g, net, z, step, dim, formalism })
    }

    pub fn load(&mut self, params: &NetParams) -> Result<(), HarnessError> {
        params.load_into(&mut self.g, &self.net)?;
        Ok(())
    }

    /// One Euler step from `z`.
    pub fn step(&mut self, z: &[f64]) -> Result<&[f64], HarnessError> {
        self.g.set_value(self.z, z)?;
        self.g.recompute();
        Ok(self.g.value(self.step.next).data())
    }

    /// Diagnostics of the last `step`.
    fn diagnostics(&self) -> Option<StepDiagnostics> {
        let Drive::Generic { grad_h, grad_s } = self.step.drive else {
            return None;
        };
        let l = self.g.value(self.step.ops.l).data();
        let m = self.g.value(self.step.ops.m).data();
        let gh = self.g.value(grad_h).data();
        let gs = self.g.value(grad_s).data();
        let d = self.dim;
        let mv =
            |a: &[f64], x: &[f64]| -> Vec<f64> { (0..d).map(|i| (0..d).map(|j| a[i * d + j] * x[j]).sum()).collect() };
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let m_gs = mv(m, gs);
        Some(StepDiagnostics {
            l_grad_h: norm(&mv(l, gh)),
            m_grad_s: norm(&m_gs),
            l_grad_s: norm(&mv(l, gs)),
            m_grad_h: norm(&mv(m, gh)),
            dh_dt: gh.iter().zip(&m_gs).map(|(a, b)| a * b).sum::<f64>().abs(),
        })
    }

    /// Autoregressive prediction of `n_steps` steps from `z0`.
    pub fn run(&mut self, z0: &[f64], n_steps: usize) -> Result<Rollout, HarnessError> {
        if z0.len() != self.dim || z0.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Config(format!("initial state must be {} finite values", self.dim)));
        }
        let mut states = Vec::with_capacity((n_steps + 1) * self.dim);
        states.extend_from_slice(z0);
        let mut diagnostics = Vec::new();
        let mut z = z0.to_vec();
        let mut failed_at = None;
        for k in 1..=n_steps {
            let next = self.step(&z)?.to_vec();
            if self.formalism == Formalism::Generic {
                diagnostics.extend(self.diagnostics());
            }
            if next.iter().any(|v| !v.is_finite()) {
                failed_at = Some(k);
                break;
            }
            states.extend_from_slice(&next);
            z = next;
        }
        Ok(Rollout { states, dim: self.dim, failed_at, diagnostics })
    }
}

pub fn rollout(
    params: &NetParams,
    z0: &[f64],
    n_steps: usize,
    dt: f64,
    formalism: Formalism,
) -> Result<Rollout, HarnessError> {
    RolloutGraph::new(params, formalism, dt)?.run(z0, n_steps)
}

/// Medians of [`StepDiagnostics`] over a set of rollout states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DegeneracyStats {
    pub l_grad_h: f64,
    pub m_grad_s: f64,
    pub l_grad_s: f64,
    pub m_grad_h: f64,
    pub dh_dt: f64,
    pub samples: usize,
}

impl DegeneracyStats {
    pub fn from_diagnostics(d: &[StepDiagnostics]) -> Option<Self> {
        if d.is_empty() {
            return None;
        }
        let med = |f: fn(&StepDiagnostics) -> f64| median(&d.iter().map(f).collect::<Vec<_>>()).unwrap_or(f64::NAN);
        Some(DegeneracyStats {
            l_grad_h: med(|s| s.l_grad_h),
            m_grad_s: med(|s| s.m_grad_s),
            l_grad_s: med(|s| s.l_grad_s),
            m_grad_h: med(|s| s.m_grad_h),
            dh_dt: med(|s| s.dh_dt),
            samples: d.len(),
        })
    }
}

/// `M∇S` negligible next to `L∇H`: the dissipative part has collapsed.
pub fn trivial_solution(stats: &DegeneracyStats) -> bool {
    stats.m_grad_s < TRIVIAL_RATIO * stats.l_grad_h
}

pub(crate) fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryMetrics {
    /// Trajectory index in the dataset.
    pub index: usize,
    /// `(1/N_T) Σ_t (z_GT − z_net)²` per variable; empty if the rollout failed.
    pub mse: Vec<f64>,
    /// Mean of `mse` over variables.
    pub mse_mean: Option<f64>,
    /// `|E(z_net) − E(z_GT)|` per snapshot; `None` where undefined.
    pub energy_error: Vec<Option<f64>>,
    pub failed_at: Option<usize>,
    pub degeneracy: Option<DegeneracyStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub variables: Vec<String>,
    pub trajectories: Vec<TrajectoryMetrics>,
    /// Rollouts that hit a non-finite state.
    pub failures: usize,
    /// Median over successful trajectories of `mse_mean`.
    pub median_mse: Option<f64>,
    /// Median over successful trajectories of the largest energy error.
    pub median_energy_error: Option<f64>,
    /// Medians over every rollout state of every test trajectory.
    pub degeneracy: Option<DegeneracyStats>,
    pub trivial_solution: Option<bool>,
}

/// Roll out every listed trajectory from its first ground-truth state and
/// compare against the rest of it.
pub fn evaluate(
    params: &NetParams,
    ds: &Dataset,
    indices: &[usize],
    formalism: Formalism,
    energy: &EnergyFn,
) -> Result<EvalMetrics, HarnessError> {
    let mut rg = RolloutGraph::new(params, formalism, ds.dt())?;
    let (n_t, d) = (ds.n_snapshots(), ds.dim());
    let mut trajectories = Vec::with_capacity(indices.len());
    let mut all_diag = Vec::new();
    for &i in indices {
        let r = rg.run(ds.state(i, 0), n_t - 1)?;
        let energy_error = (0..r.n_states())
            .map(|t| match (energy.energy(r.state(t)), energy.energy(ds.state(i, t))) {
                (Some(a), Some(b)) => Some((a - b).abs()),
                _ => None,
            })
            .collect();
        let mse = if r.failed_at.is_none() {
            (0..d)
                .map(|k| (0..n_t).map(|t| (ds.state(i, t)[k] - r.state(t)[k]).powi(2)).sum::<f64>() / n_t as f64)
                .collect()
        } else {
            Vec::new()
        };
        let mse_mean = (!mse.is_empty()).then(|| mse.iter().sum::<f64>() / d as f64);
        all_diag.extend_from_slice(&r.diagnostics);
        trajectories.push(TrajectoryMetrics {
            index: i,
            mse,
            mse_mean,
            energy_error,
            failed_at: r.failed_at,
            degeneracy: DegeneracyStats::from_diagnostics(&r.diagnostics),
        });
    }
    let ok: Vec<&TrajectoryMetrics> = trajectories.iter().filter(|t| t.failed_at.is_none()).collect();
    let median_mse = median(&ok.iter().filter_map(|t| t.mse_mean).collect::<Vec<_>>());
    let worst_energy: Vec<f64> =
        ok.iter().filter_map(|t| t.energy_error.iter().flatten().copied().reduce(f64::max)).collect();
    let degeneracy = DegeneracyStats::from_diagnostics(&all_diag);
    Ok(EvalMetrics {
        variables: ds.system().variable_names(d),
        failures: trajectories.len() - ok.len(),
        median_mse,
        median_energy_error: median(&worst_energy),
        trivial_solution: degeneracy.as_ref().map(trivial_solution),
        degeneracy,
        trajectories,
    })
}
