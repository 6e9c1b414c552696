//! Startup Couette flow of an Oldroyd-B fluid by stochastic dumbbell ensembles.
//!
//! Grid nodes `y_j = j·Δy`, `j = 0..=N_x`, `Δy = 1/N_x`. The lid `y = 0` moves
//! at `V`; the wall node `y = 1` is held at rest and left out of the dataset.
//! Each snapshot interval advances the ensembles by one Euler–Maruyama step,
//! then the momentum balance `Re·v_t = (1−ε)v_yy + τ_y` by explicit substeps
//! at frozen stress.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{step_count, stream, SimError};
use crate::dataset::{format_f64, Dataset, Manifest, System};

pub const STATE_DIM: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct CouetteParams {
    pub v_lid: f64,
    pub re: f64,
    pub we: f64,
    /// Polymer viscosity fraction; the solvent carries `1 − ε`.
    pub eps: f64,
    /// Number of grid intervals.
    pub n_x: usize,
    /// Dumbbells per node.
    pub k: usize,
    pub horizon: f64,
    /// Snapshot interval.
    pub dt: f64,
    /// Momentum substeps per snapshot; `None` picks the fewest that satisfy
    /// the stability bound.
    pub substeps: Option<usize>,
}

impl Default for CouetteParams {
    fn default() -> Self {
        CouetteParams {
            v_lid: 1.0,
            re: 0.1,
            we: 1.0,
            eps: 0.9,
            n_x: 100,
            k: 10_000,
            horizon: 1.0,
            dt: 1.0 / 150.0,
            substeps: None,
        }
    }
}

impl CouetteParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |s: String| Err(SimError::InvalidParams(s));
        for (name, v) in [("Re", self.re), ("We", self.we), ("dt", self.dt), ("horizon", self.horizon)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.v_lid.is_finite() {
            return bad(format!("lid velocity {}", self.v_lid));
        }
        if !(0.0..1.0).contains(&self.eps) {
            return bad(format!("eps {} outside [0, 1)", self.eps));
        }
        if self.n_x < 3 {
            return bad(format!("need at least 3 grid intervals, got {}", self.n_x));
        }
        if self.k == 0 {
            return bad("need at least one dumbbell per node".into());
        }
        if self.substeps == Some(0) {
            return bad("substeps must be positive".into());
        }
        step_count(self.horizon, self.dt)?;
        Ok(())
    }

    pub fn dy(&self) -> f64 {
        1.0 / self.n_x as f64
    }

    /// Largest stable momentum substep, `Re·Δy²/(2(1−ε))`.
    pub fn cfl_limit(&self) -> f64 {
        self.re * self.dy() * self.dy() / (2.0 * (1.0 - self.eps))
    }

    pub fn macro_substeps(&self) -> Result<usize, SimError> {
        let limit = self.cfl_limit();
        match self.substeps {
            Some(n) => {
                let h = self.dt / n as f64;
                if h > limit {
                    return Err(SimError::Cfl { dt: h, limit });
                }
                Ok(n)
            }
            None => Ok(((self.dt / limit) * (1.0 + 1e-9)).ceil().max(1.0) as usize),
        }
    }

    pub fn n_snapshots(&self) -> Result<usize, SimError> {
        step_count(self.horizon, self.dt)
    }

    pub fn to_manifest(&self, m: &mut Manifest) {
        for (k, v) in
            [("V", self.v_lid), ("Re", self.re), ("We", self.we), ("eps", self.eps), ("horizon", self.horizon)]
        {
            m.insert(format!("couette.{k}"), format_f64(v));
        }
        m.insert("couette.dt".into(), format_f64(self.dt));
        m.insert("couette.N_x".into(), self.n_x.to_string());
        m.insert("couette.K".into(), self.k.to_string());
        m.insert("couette.momentum".into(), "Re v_t = (1-eps) v_yy + tau_y; explicit".into());
        m.insert("couette.energy".into(), "e_t = (1-eps) v_y^2 + tau v_y; e(0)=0".into());
        m.insert("couette.q".into(), "ensemble mean".into());
        m.insert("couette.excluded".into(), "wall node y=1".into());
    }
}

/// Dumbbell coordinates of one node.
#[derive(Clone, Debug, PartialEq)]
pub struct DumbbellEnsemble {
    pub qx: Vec<f64>,
    pub qy: Vec<f64>,
}

impl DumbbellEnsemble {
    /// Draws from the equilibrium distribution (independent standard normals).
    pub fn equilibrium(k: usize, rng: &mut impl Rng) -> Self {
        let mut qx = Vec::with_capacity(k);
        let mut qy = Vec::with_capacity(k);
        for _ in 0..k {
            qx.push(rng.sample(StandardNormal));
            qy.push(rng.sample(StandardNormal));
        }
        DumbbellEnsemble { qx, qy }
    }

    pub fn zeros(k: usize) -> Self {
        DumbbellEnsemble { qx: vec![0.0; k], qy: vec![0.0; k] }
    }

    pub fn len(&self) -> usize {
        self.qx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qx.is_empty()
    }

    pub fn means(&self) -> (f64, f64) {
        let n = self.len() as f64;
        (self.qx.iter().sum::<f64>() / n, self.qy.iter().sum::<f64>() / n)
    }
}

/// One Euler–Maruyama step of
/// `dq_x = (γ̇ q_y − q_x/(2We))dt + dV/√We`, `dq_y = −q_y/(2We) dt + dW/√We`.
pub fn sde_step(ens: &mut DumbbellEnsemble, shear: f64, we: f64, dt: f64, rng: &mut impl Rng) {
    let decay = dt / (2.0 * we);
    let amp = (dt / we).sqrt();
    for (qx, qy) in ens.qx.iter_mut().zip(ens.qy.iter_mut()) {
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        let (x, y) = (*qx, *qy);
        *qx = x + (shear * y) * dt - x * decay + amp * nx;
        *qy = y - y * decay + amp * ny;
    }
}

/// Deterministic drift-only version of [`sde_step`].
pub fn drift_step(ens: &mut DumbbellEnsemble, shear: f64, we: f64, dt: f64) {
    let decay = dt / (2.0 * we);
    for (qx, qy) in ens.qx.iter_mut().zip(ens.qy.iter_mut()) {
        let (x, y) = (*qx, *qy);
        *qx = x + (shear * y) * dt - x * decay;
        *qy = y - y * decay;
    }
}

/// `τ_xy = (ε/We)·mean(q_x q_y)`.
pub fn polymer_stress(ens: &DumbbellEnsemble, eps: f64, we: f64) -> f64 {
    let s: f64 = ens.qx.iter().zip(&ens.qy).map(|(x, y)| x * y).sum();
    eps / we * s / ens.len() as f64
}

/// `∂v/∂y`: central inside, one-sided at both ends.
pub fn velocity_gradient(v: &[f64], dy: f64) -> Vec<f64> {
    let n = v.len();
    let mut g = vec![0.0; n];
    g[0] = (v[1] - v[0]) / dy;
    g[n - 1] = (v[n - 1] - v[n - 2]) / dy;
    for j in 1..n - 1 {
        g[j] = (v[j + 1] - v[j - 1]) / (2.0 * dy);
    }
    g
}

/// One explicit substep `h` of velocity and internal energy at frozen `tau`.
/// Boundary values `v_0 = V`, `v_N = 0` are reimposed.
pub fn macro_step(v: &mut [f64], e: &mut [f64], tau: &[f64], p: &CouetteParams, h: f64) {
    let n = v.len();
    let dy = p.dy();
    let grad = velocity_gradient(v, dy);
    for j in 0..n {
        e[j] += h * ((1.0 - p.eps) * grad[j] * grad[j] + tau[j] * grad[j]);
    }
    let mut next = v.to_vec();
    let c = h / p.re;
    for j in 1..n - 1 {
        let lap = (v[j + 1] - 2.0 * v[j] + v[j - 1]) / (dy * dy);
        let dtau = (tau[j + 1] - tau[j - 1]) / (2.0 * dy);
        next[j] = v[j] + c * ((1.0 - p.eps) * lap + dtau);
    }
    next[0] = p.v_lid;
    next[n - 1] = 0.0;
    v.copy_from_slice(&next);
}

/// Macro field plus one ensemble per grid node.
#[derive(Clone, Debug)]
pub struct CouetteSolver {
    params: CouetteParams,
    seed: u64,
    substeps: usize,
    step: usize,
    v: Vec<f64>,
    e: Vec<f64>,
    tau: Vec<f64>,
    ensembles: Vec<DumbbellEnsemble>,
}

impl CouetteSolver {
    /// Fluid at rest with the lid just started; ensembles at equilibrium.
    pub fn new(params: CouetteParams, seed: u64) -> Result<Self, SimError> {
        params.validate()?;
        let substeps = params.macro_substeps()?;
        let n = params.n_x + 1;
        let ensembles: Vec<DumbbellEnsemble> = (0..n)
            .into_par_iter()
            .map(|j| DumbbellEnsemble::equilibrium(params.k, &mut stream(seed, j as u64, 0)))
            .collect();
        let mut v = vec![0.0; n];
        v[0] = params.v_lid;
        let mut s = CouetteSolver { params, seed, substeps, step: 0, v, e: vec![0.0; n], tau: vec![0.0; n], ensembles };
        s.update_stress();
        Ok(s)
    }

    pub fn params(&self) -> &CouetteParams {
        &self.params
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn velocity(&self) -> &[f64] {
        &self.v
    }

    pub fn energy(&self) -> &[f64] {
        &self.e
    }

    pub fn stress(&self) -> &[f64] {
        &self.tau
    }

    pub fn ensembles(&self) -> &[DumbbellEnsemble] {
        &self.ensembles
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.params.dt
    }

    fn update_stress(&mut self) {
        let (eps, we) = (self.params.eps, self.params.we);
        self.tau = self.ensembles.par_iter().map(|e| polymer_stress(e, eps, we)).collect();
    }

    /// Advance one snapshot interval.
    pub fn advance(&mut self) -> Result<(), SimError> {
        let p = &self.params;
        let shear = velocity_gradient(&self.v, p.dy());
        let (seed, step, we, dt) = (self.seed, self.step as u64 + 1, p.we, p.dt);
        self.ensembles.par_iter_mut().enumerate().for_each(|(j, ens)| {
            sde_step(ens, shear[j], we, dt, &mut stream(seed, j as u64, step));
        });
        self.update_stress();
        let h = self.params.dt / self.substeps as f64;
        for _ in 0..self.substeps {
            macro_step(&mut self.v, &mut self.e, &self.tau, &self.params, h);
        }
        self.step += 1;
        if self.v.iter().chain(&self.e).chain(&self.tau).any(|x| !x.is_finite()) {
            return Err(SimError::NonFinite(self.time()));
        }
        Ok(())
    }

    /// `(⟨q_x⟩, ⟨q_y⟩, v, e, τ)` at node `j`.
    pub fn node_state(&self, j: usize) -> [f64; STATE_DIM] {
        let (mx, my) = self.ensembles[j].means();
        [mx, my, self.v[j], self.e[j], self.tau[j]]
    }
}

/// One trajectory per retained node (all but the wall node), `N_t = T/dt` snapshots from `t = 0`.
pub fn generate(params: &CouetteParams, seed: u64) -> Result<Dataset, SimError> {
    let n_t = params.n_snapshots()?;
    let mut solver = CouetteSolver::new(params.clone(), seed)?;
    let n_nodes = params.n_x;
    let mut frames: Vec<Vec<[f64; STATE_DIM]>> = Vec::with_capacity(n_t);
    for t in 0..n_t {
        if t > 0 {
            solver.advance()?;
        }
        frames.push((0..n_nodes).map(|j| solver.node_state(j)).collect());
    }
    let mut data = Vec::with_capacity(n_nodes * n_t * STATE_DIM);
    for j in 0..n_nodes {
        for f in &frames {
            data.extend_from_slice(&f[j]);
        }
    }
    let mut m = Manifest::new();
    params.to_manifest(&mut m);
    m.insert("seed".into(), seed.to_string());
    m.insert("couette.substeps".into(), solver.substeps().to_string());
    Ok(Dataset::new(data, (n_nodes, n_t, STATE_DIM), params.dt, System::Couette, m)?)
}
