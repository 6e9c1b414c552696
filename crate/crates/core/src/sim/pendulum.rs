//! Double thermoelastic pendulum: two masses joined by heat-conducting springs.
//!
//! Spring `i` stores `e_i(λ, s) = ½k_i ε² + (C_i + βε)·θ_ref·(e^{s/C_i} − 1)`
//! with log strain `ε = ln(λ/λ⁰_i)`, so its temperature is
//! `θ_i = θ_ref(1 + βε/C_i)·e^{s/C_i}`.

use rand::Rng;
use rayon::prelude::*;

use super::{step_count, stream, SimError};
use crate::dataset::{format_f64, Dataset, Manifest, System};

pub const STATE_DIM: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumParams {
    pub m1: f64,
    pub m2: f64,
    pub lam0_1: f64,
    pub lam0_2: f64,
    pub c1: f64,
    pub c2: f64,
    pub kappa: f64,
    pub k1: f64,
    pub k2: f64,
    pub theta_ref: f64,
    /// Thermoelastic (Gough–Joule) coupling.
    pub beta: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            m1: 1.0,
            m2: 2.0,
            lam0_1: 2.0,
            lam0_2: 1.0,
            c1: 0.02,
            c2: 0.2,
            kappa: 300.0,
            k1: 1.0,
            k2: 1.0,
            theta_ref: 1.0,
            beta: 0.002,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let named = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("lam0_1", self.lam0_1),
            ("lam0_2", self.lam0_2),
            ("C1", self.c1),
            ("C2", self.c2),
            ("kappa", self.kappa),
            ("k1", self.k1),
            ("k2", self.k2),
            ("theta_ref", self.theta_ref),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.beta.is_finite() {
            return Err(SimError::InvalidParams(format!("beta must be finite, got {}", self.beta)));
        }
        Ok(())
    }

    fn mass(&self) -> [f64; 2] {
        [self.m1, self.m2]
    }

    fn lam0(&self) -> [f64; 2] {
        [self.lam0_1, self.lam0_2]
    }

    fn heat_cap(&self) -> [f64; 2] {
        [self.c1, self.c2]
    }

    fn stiffness(&self) -> [f64; 2] {
        [self.k1, self.k2]
    }

    pub fn to_manifest(&self, m: &mut Manifest) {
        for (k, v) in [
            ("m1", self.m1),
            ("m2", self.m2),
            ("lam0_1", self.lam0_1),
            ("lam0_2", self.lam0_2),
            ("C1", self.c1),
            ("C2", self.c2),
            ("kappa", self.kappa),
            ("k1", self.k1),
            ("k2", self.k2),
            ("theta_ref", self.theta_ref),
            ("beta", self.beta),
        ] {
            m.insert(format!("pendulum.{k}"), format_f64(v));
        }
        m.insert("pendulum.law".into(), "log-strain thermoelastic".into());
    }

    /// Inverse of [`to_manifest`](Self::to_manifest); missing keys keep their defaults.
    pub fn from_manifest(m: &Manifest) -> Self {
        let mut p = PendulumParams::default();
        let fields: [(&str, &mut f64); 11] = [
            ("m1", &mut p.m1),
            ("m2", &mut p.m2),
            ("lam0_1", &mut p.lam0_1),
            ("lam0_2", &mut p.lam0_2),
            ("C1", &mut p.c1),
            ("C2", &mut p.c2),
            ("kappa", &mut p.kappa),
            ("k1", &mut p.k1),
            ("k2", &mut p.k2),
            ("theta_ref", &mut p.theta_ref),
            ("beta", &mut p.beta),
        ];
        for (k, slot) in fields {
            if let Some(v) = m.get(&format!("pendulum.{k}")).and_then(|v| v.parse().ok()) {
                *slot = v;
            }
        }
        p
    }
}

/// `(q1, q2, p1, p2, s1, s2)`, each vector in R².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumState {
    pub q1: [f64; 2],
    pub q2: [f64; 2],
    pub p1: [f64; 2],
    pub p2: [f64; 2],
    pub s: [f64; 2],
}

impl PendulumState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.q1[0], self.q1[1], self.q2[0], self.q2[1], self.p1[0], self.p1[1], self.p2[0], self.p2[1], self.s[0],
            self.s[1],
        ]
    }

    pub fn from_slice(z: &[f64]) -> Self {
        assert_eq!(z.len(), STATE_DIM, "pendulum state has 10 components");
        PendulumState { q1: [z[0], z[1]], q2: [z[2], z[3]], p1: [z[4], z[5]], p2: [z[6], z[7]], s: [z[8], z[9]] }
    }
}

pub fn spring_lengths(q1: [f64; 2], q2: [f64; 2]) -> (f64, f64) {
    (q1[0].hypot(q1[1]), (q2[0] - q1[0]).hypot(q2[1] - q1[1]))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumEnergies {
    pub kinetic: [f64; 2],
    pub internal: [f64; 2],
    pub total: f64,
}

fn check_lengths(lam: [f64; 2], time: f64) -> Result<(), SimError> {
    for (i, &l) in lam.iter().enumerate() {
        if !(l > 0.0 && l.is_finite()) {
            return Err(SimError::SpringCollapse { spring: i + 1, length: l, time });
        }
    }
    Ok(())
}

/// Internal energy of one spring.
pub fn spring_energy(lam: f64, s: f64, lam0: f64, c: f64, k: f64, p: &PendulumParams) -> f64 {
    let eps = (lam / lam0).ln();
    0.5 * k * eps * eps + (c + p.beta * eps) * p.theta_ref * (s / c).exp_m1()
}

/// `θ_ref(1 + βε/C)`: the temperature at zero entropy.
fn temp_prefactor(lam: f64, lam0: f64, c: f64, p: &PendulumParams) -> f64 {
    p.theta_ref * (1.0 + p.beta * (lam / lam0).ln() / c)
}

pub fn energies(z: &PendulumState, p: &PendulumParams) -> Result<PendulumEnergies, SimError> {
    temperatures(z, p)?;
    let (l1, l2) = spring_lengths(z.q1, z.q2);
    let lam = [l1, l2];
    let (m, lam0, c, k) = (p.mass(), p.lam0(), p.heat_cap(), p.stiffness());
    let pv = [z.p1, z.p2];
    let kinetic: [f64; 2] = std::array::from_fn(|i| (pv[i][0] * pv[i][0] + pv[i][1] * pv[i][1]) / (2.0 * m[i]));
    let internal: [f64; 2] = std::array::from_fn(|i| spring_energy(lam[i], z.s[i], lam0[i], c[i], k[i], p));
    Ok(PendulumEnergies { kinetic, internal, total: kinetic[0] + kinetic[1] + internal[0] + internal[1] })
}

/// Total energy of a flat state, for metrics.
pub fn total_energy(z: &[f64], p: &PendulumParams) -> Result<f64, SimError> {
    Ok(energies(&PendulumState::from_slice(z), p)?.total)
}

pub fn temperatures(z: &PendulumState, p: &PendulumParams) -> Result<[f64; 2], SimError> {
    let (l1, l2) = spring_lengths(z.q1, z.q2);
    let lam = [l1, l2];
    check_lengths(lam, f64::NAN)?;
    let (lam0, c) = (p.lam0(), p.heat_cap());
    let theta: [f64; 2] = std::array::from_fn(|i| temp_prefactor(lam[i], lam0[i], c[i], p) * (z.s[i] / c[i]).exp());
    for (i, &t) in theta.iter().enumerate() {
        if !(t > 0.0 && t.is_finite()) {
            return Err(SimError::NonPositiveTemperature { spring: i + 1, theta: t, time: f64::NAN });
        }
    }
    Ok(theta)
}

/// `(q̇, ṗ)` at frozen entropies; `ṗ = −∂E/∂q`.
fn mechanics(z: &[f64; STATE_DIM], p: &PendulumParams) -> [f64; 8] {
    let (q1, q2) = ([z[0], z[1]], [z[2], z[3]]);
    let (l1, l2) = spring_lengths(q1, q2);
    let lam = [l1, l2];
    let (lam0, c, k) = (p.lam0(), p.heat_cap(), p.stiffness());
    // dE/dλ_i
    let de: [f64; 2] = std::array::from_fn(|i| {
        let eps = (lam[i] / lam0[i]).ln();
        (k[i] * eps + p.beta * p.theta_ref * (z[8 + i] / c[i]).exp_m1()) / lam[i]
    });
    let u1 = [q1[0] / l1, q1[1] / l1];
    let u2 = [(q2[0] - q1[0]) / l2, (q2[1] - q1[1]) / l2];
    [
        z[4] / p.m1,
        z[5] / p.m1,
        z[6] / p.m2,
        z[7] / p.m2,
        -de[0] * u1[0] + de[1] * u2[0],
        -de[0] * u1[1] + de[1] * u2[1],
        -de[1] * u2[0],
        -de[1] * u2[1],
    ]
}

/// Full vector field, including `ṡ₁ = κ(θ₂−θ₁)/θ₁` and `ṡ₂ = κ(θ₁−θ₂)/θ₂`.
pub fn rhs(z: &PendulumState, p: &PendulumParams) -> Result<[f64; STATE_DIM], SimError> {
    let theta = temperatures(z, p)?;
    let a = z.to_array();
    let mech = mechanics(&a, p);
    let mut out = [0.0; STATE_DIM];
    out[..8].copy_from_slice(&mech);
    out[8] = p.kappa * (theta[1] - theta[0]) / theta[0];
    out[9] = p.kappa * (theta[0] - theta[1]) / theta[1];
    Ok(out)
}

/// Exact heat exchange over `h` at frozen spring lengths. The temperatures
/// relax to their `C`-weighted mean at rate `κ(1/C₁ + 1/C₂)`.
fn heat_exchange(z: &mut [f64; STATE_DIM], p: &PendulumParams, h: f64) {
    let (l1, l2) = spring_lengths([z[0], z[1]], [z[2], z[3]]);
    let (lam0, c) = (p.lam0(), p.heat_cap());
    let a = [temp_prefactor(l1, lam0[0], c[0], p), temp_prefactor(l2, lam0[1], c[1], p)];
    let t = [a[0] * (z[8] / c[0]).exp(), a[1] * (z[9] / c[1]).exp()];
    let mean = (c[0] * t[0] + c[1] * t[1]) / (c[0] + c[1]);
    let r = (-p.kappa * (1.0 / c[0] + 1.0 / c[1]) * h).exp();
    for i in 0..2 {
        let ti = mean + (t[i] - mean) * r;
        z[8 + i] = c[i] * (ti / a[i]).ln();
    }
}

fn rk4_mechanics(z: &mut [f64; STATE_DIM], p: &PendulumParams, h: f64) {
    let eval = |y: &[f64; STATE_DIM]| mechanics(y, p);
    let shifted = |k: &[f64; 8], f: f64| {
        let mut y = *z;
        for i in 0..8 {
            y[i] += f * k[i];
        }
        y
    };
    let k1 = eval(z);
    let k2 = eval(&shifted(&k1, h / 2.0));
    let k3 = eval(&shifted(&k2, h / 2.0));
    let k4 = eval(&shifted(&k3, h));
    for i in 0..8 {
        z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// One step of size `h`: heat exchange `h/2`, RK4 mechanics `h`, heat exchange `h/2`.
pub fn step(z: &PendulumState, p: &PendulumParams, h: f64) -> Result<PendulumState, SimError> {
    let mut a = z.to_array();
    heat_exchange(&mut a, p, h / 2.0);
    rk4_mechanics(&mut a, p, h);
    heat_exchange(&mut a, p, h / 2.0);
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite(f64::NAN));
    }
    let out = PendulumState::from_slice(&a);
    temperatures(&out, p)?;
    Ok(out)
}

/// Integrate `n_steps` steps of size `h`, calling `record` after each.
pub fn integrate(
    z0: &PendulumState,
    p: &PendulumParams,
    h: f64,
    n_steps: usize,
    t0: f64,
    mut record: impl FnMut(usize, &PendulumState),
) -> Result<PendulumState, SimError> {
    let mut z = *z0;
    for n in 0..n_steps {
        let time = t0 + (n + 1) as f64 * h;
        z = step(&z, p, h).map_err(|e| with_time(e, time))?;
        record(n, &z);
    }
    Ok(z)
}

fn with_time(e: SimError, time: f64) -> SimError {
    match e {
        SimError::SpringCollapse { spring, length, .. } => SimError::SpringCollapse { spring, length, time },
        SimError::NonPositiveTemperature { spring, theta, .. } => {
            SimError::NonPositiveTemperature { spring, theta, time }
        }
        SimError::NonFinite(_) => SimError::NonFinite(time),
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PendulumGenConfig {
    pub n_traj: usize,
    pub horizon: f64,
    pub dt_out: f64,
    pub substeps: usize,
    pub preroll: f64,
    /// Half-width of the uniform relative perturbation of `q1` and `p1`.
    pub perturbation: f64,
    pub seed: u64,
    pub mean_q1: [f64; 2],
    pub mean_q2: [f64; 2],
    pub mean_p1: [f64; 2],
    pub mean_p2: [f64; 2],
    pub max_attempts: usize,
}

impl Default for PendulumGenConfig {
    fn default() -> Self {
        PendulumGenConfig {
            n_traj: 50,
            horizon: 60.0,
            dt_out: 0.3,
            substeps: 20,
            preroll: 20.0,
            perturbation: 0.05,
            seed: 0,
            mean_q1: [4.5, 4.5],
            mean_q2: [2.0, 4.5],
            mean_p1: [-0.5, 1.5],
            mean_p2: [1.4, -0.2],
            max_attempts: 32,
        }
    }
}

impl PendulumGenConfig {
    pub fn n_snapshots(&self) -> Result<usize, SimError> {
        step_count(self.horizon, self.dt_out)
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.n_traj == 0 || self.substeps == 0 || self.max_attempts == 0 {
            return Err(SimError::InvalidParams("n_traj, substeps and max_attempts must be positive".into()));
        }
        if self.n_snapshots()? < 2 {
            return Err(SimError::InvalidParams("need at least 2 snapshots".into()));
        }
        if !(self.preroll >= 0.0 && self.preroll.is_finite()) {
            return Err(SimError::InvalidParams(format!("preroll {}", self.preroll)));
        }
        if !(0.0..1.0).contains(&self.perturbation) {
            return Err(SimError::InvalidParams(format!("perturbation {} outside [0, 1)", self.perturbation)));
        }
        Ok(())
    }

    /// Perturbed initial state drawn from `rng`.
    pub fn initial_state(&self, rng: &mut impl Rng) -> PendulumState {
        let mut draw = |v: f64| {
            if self.perturbation == 0.0 {
                v
            } else {
                v * (1.0 + rng.gen_range(-self.perturbation..=self.perturbation))
            }
        };
        let q1 = [draw(self.mean_q1[0]), draw(self.mean_q1[1])];
        let p1 = [draw(self.mean_p1[0]), draw(self.mean_p1[1])];
        PendulumState { q1, q2: self.mean_q2, p1, p2: self.mean_p2, s: [0.0; 2] }
    }
}

/// A trajectory of `n` snapshots (flattened) starting after the pre-roll.
pub fn simulate(z0: &PendulumState, p: &PendulumParams, cfg: &PendulumGenConfig) -> Result<Vec<f64>, SimError> {
    let n_t = cfg.n_snapshots()?;
    let h = cfg.dt_out / cfg.substeps as f64;
    let mut z = *z0;
    temperatures(&z, p).map_err(|e| with_time(e, -cfg.preroll))?;
    if cfg.preroll > 0.0 {
        let n_pre = (cfg.preroll / h).ceil() as usize;
        z = integrate(&z, p, cfg.preroll / n_pre as f64, n_pre, -cfg.preroll, |_, _| {})?;
    }
    let mut out = Vec::with_capacity(n_t * STATE_DIM);
    out.extend_from_slice(&z.to_array());
    for n in 1..n_t {
        let t0 = (n - 1) as f64 * cfg.dt_out;
        z = integrate(&z, p, h, cfg.substeps, t0, |_, _| {})?;
        out.extend_from_slice(&z.to_array());
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenReport {
    /// Rejected attempts per trajectory.
    pub rejections: Vec<usize>,
}

impl GenReport {
    pub fn total_rejections(&self) -> usize {
        self.rejections.iter().sum()
    }
}

/// Generate `cfg.n_traj` trajectories. A rejected trajectory (spring collapse,
/// non-positive temperature) is redrawn from the next random stream.
pub fn generate(p: &PendulumParams, cfg: &PendulumGenConfig) -> Result<(Dataset, GenReport), SimError> {
    p.validate()?;
    cfg.validate()?;
    let n_t = cfg.n_snapshots()?;
    let runs: Vec<Result<(Vec<f64>, usize), SimError>> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|i| {
            let mut last = String::new();
            for attempt in 0..cfg.max_attempts {
                let mut rng = stream(cfg.seed, i as u64, attempt as u64);
                let z0 = cfg.initial_state(&mut rng);
                match simulate(&z0, p, cfg) {
                    Ok(tr) => return Ok((tr, attempt)),
                    Err(e @ (SimError::InvalidParams(_) | SimError::Dataset(_))) => return Err(e),
                    Err(e) => last = e.to_string(),
                }
            }
            Err(SimError::TooManyRejections { traj: i, attempts: cfg.max_attempts, last })
        })
        .collect();
    let mut data = Vec::with_capacity(cfg.n_traj * n_t * STATE_DIM);
    let mut rejections = Vec::with_capacity(cfg.n_traj);
    for r in runs {
        let (tr, rej) = r?;
        data.extend(tr);
        rejections.push(rej);
    }
    let report = GenReport { rejections };
    let mut m = Manifest::new();
    p.to_manifest(&mut m);
    m.insert("seed".into(), cfg.seed.to_string());
    m.insert("gen.horizon".into(), format_f64(cfg.horizon));
    m.insert("gen.dt_out".into(), format_f64(cfg.dt_out));
    m.insert("gen.substeps".into(), cfg.substeps.to_string());
    m.insert("gen.preroll".into(), format_f64(cfg.preroll));
    m.insert("gen.perturbation".into(), format!("uniform relative +-{} on q1, p1", format_f64(cfg.perturbation)));
    m.insert("gen.initial_entropy".into(), "0".into());
    m.insert("gen.integrator".into(), "strang: exact heat exchange + rk4 mechanics".into());
    m.insert("gen.rejections".into(), report.total_rejections().to_string());
    let ds = Dataset::new(data, (cfg.n_traj, n_t, STATE_DIM), cfg.dt_out, System::Pendulum, m)?;
    Ok((ds, report))
}
