//! Flat `key = value` configuration.
//!
//! Keys are dotted (`train.epochs`); a `[train]` line prefixes the keys that
//! follow it. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use super::HarnessError;
use crate::bracket::Formalism;
use crate::dataset::{format_f64, SplitSpec, System};
use crate::nn::{mlp_spec, LayerSpec, SchedulerSpec};
use crate::sim::couette::CouetteParams;
use crate::sim::pendulum::{PendulumGenConfig, PendulumParams};

pub type ConfigMap = BTreeMap<String, String>;

pub fn parse_config(text: &str) -> Result<ConfigMap, HarnessError> {
    let mut out = ConfigMap::new();
    let mut section = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(HarnessError::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)));
        };
        let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(HarnessError::Config(format!("line {}: duplicate key `{key}`", n + 1)));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub formalism: Formalism,
    pub epochs: usize,
    pub base_lr: f64,
    /// `None` means one and two thirds of `epochs`.
    pub milestones: Option<Vec<usize>>,
    pub gamma: f64,
    pub lambda_d: f64,
    pub lambda_r: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Coupled L2 term inside Adam; the loss already carries `λ_r·L_reg`.
    pub weight_decay: f64,
    pub seed: u64,
    /// Trajectory losses above this abort the run.
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            formalism: Formalism::Generic,
            epochs: 12_000,
            base_lr: 1e-4,
            milestones: None,
            gamma: 0.1,
            lambda_d: 1e2,
            lambda_r: 1e-5,
            hidden_layers: 5,
            hidden_width: 200,
            weight_decay: 0.0,
            seed: 0,
            divergence_threshold: 1e12,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |s: String| Err(HarnessError::Config(s));
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return bad("hidden_layers and hidden_width must be positive".into());
        }
        if !(self.lambda_d >= 0.0 && self.lambda_r >= 0.0 && self.lambda_d.is_finite() && self.lambda_r.is_finite()) {
            return bad(format!("lambda_d={} and lambda_r={} must be non-negative", self.lambda_d, self.lambda_r));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {}", self.weight_decay));
        }
        if self.divergence_threshold.is_nan() || self.divergence_threshold <= 0.0 {
            return bad(format!("divergence_threshold {}", self.divergence_threshold));
        }
        self.scheduler()?;
        Ok(())
    }

    pub fn scheduler(&self) -> Result<SchedulerSpec, HarnessError> {
        Ok(match &self.milestones {
            Some(ms) => SchedulerSpec::new(self.base_lr, ms.clone(), self.gamma)?,
            None => SchedulerSpec::thirds(self.base_lr, self.epochs, self.gamma)?,
        })
    }

    pub fn layer_spec(&self, dim: usize) -> Vec<LayerSpec> {
        mlp_spec(dim, self.hidden_layers, self.hidden_width, self.formalism.head_len(dim))
    }
}

/// Everything needed for one run: where the data comes from, how it is split
/// and how the network is trained.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub system: System,
    /// Load this file instead of generating.
    pub dataset: Option<PathBuf>,
    pub data_seed: u64,
    pub pendulum: PendulumParams,
    pub pendulum_gen: PendulumGenConfig,
    /// Overrides `pendulum_gen.dt_out` with `horizon / n`.
    pub pendulum_snapshots: Option<usize>,
    pub couette: CouetteParams,
    /// Keep only the first snapshots of every trajectory.
    pub truncate: Option<usize>,
    pub split: SplitSpec,
    /// Use only the first `n` training trajectories of the split.
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::paper(System::Pendulum)
    }
}

impl ExperimentConfig {
    /// Published settings for the pendulum or the Couette flow.
    pub fn paper(system: System) -> Self {
        let mut c = ExperimentConfig {
            system,
            dataset: None,
            data_seed: 0,
            pendulum: PendulumParams::default(),
            pendulum_gen: PendulumGenConfig::default(),
            pendulum_snapshots: None,
            couette: CouetteParams::default(),
            truncate: None,
            split: SplitSpec::default(),
            n_train: None,
            n_test: None,
            train: TrainConfig::default(),
        };
        if system == System::Couette {
            c.train.epochs = 6000;
            c.train.hidden_width = 50;
        }
        c
    }

    /// Small pendulum setup that trains in minutes on one core: 13 trajectories
    /// split 10/3, 50 snapshots, three hidden layers of 64.
    pub fn desk() -> Self {
        let mut c = ExperimentConfig::paper(System::Pendulum);
        c.pendulum_gen.n_traj = 13;
        c.truncate = Some(50);
        c.train.epochs = 2000;
        c.train.hidden_layers = 3;
        c.train.hidden_width = 64;
        c
    }

    /// Apply `seed` first (it sets every seed), then the remaining keys.
    pub fn apply(&mut self, map: &ConfigMap) -> Result<(), HarnessError> {
        if let Some(v) = map.get("seed") {
            self.set("seed", v)?;
        }
        for (k, v) in map {
            if k != "seed" {
                self.set(k, v)?;
            }
        }
        self.validate()
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self, HarnessError> {
        let base = match map.get("system").map(String::as_str) {
            Some("couette") => ExperimentConfig::paper(System::Couette),
            _ => ExperimentConfig::default(),
        };
        let mut c = base;
        c.apply(map)?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let p = &mut self.pendulum;
        let pg = &mut self.pendulum_gen;
        let cp = &mut self.couette;
        let t = &mut self.train;
        match key {
            "system" => self.system = parse(key, value)?,
            "seed" => {
                let s: u64 = parse(key, value)?;
                self.data_seed = s;
                self.split.seed = s;
                t.seed = s;
            }
            "dataset" => self.dataset = if value.is_empty() { None } else { Some(PathBuf::from(value)) },
            "data.seed" => self.data_seed = parse(key, value)?,
            "data.truncate" => self.truncate = parse_opt(key, value)?,
            "split.train_fraction" => self.split.train_fraction = parse(key, value)?,
            "split.seed" => self.split.seed = parse(key, value)?,
            "split.n_train" | "train.n_train" => self.n_train = parse_opt(key, value)?,
            "split.n_test" | "eval.n_test" => self.n_test = parse_opt(key, value)?,

            "pendulum.m1" => p.m1 = parse(key, value)?,
            "pendulum.m2" => p.m2 = parse(key, value)?,
            "pendulum.lam0_1" => p.lam0_1 = parse(key, value)?,
            "pendulum.lam0_2" => p.lam0_2 = parse(key, value)?,
            "pendulum.C1" => p.c1 = parse(key, value)?,
            "pendulum.C2" => p.c2 = parse(key, value)?,
            "pendulum.kappa" => p.kappa = parse(key, value)?,
            "pendulum.k1" => p.k1 = parse(key, value)?,
            "pendulum.k2" => p.k2 = parse(key, value)?,
            "pendulum.theta_ref" => p.theta_ref = parse(key, value)?,
            "pendulum.beta" => p.beta = parse(key, value)?,
            "pendulum.n_traj" => pg.n_traj = parse(key, value)?,
            "pendulum.horizon" => pg.horizon = parse(key, value)?,
            "pendulum.dt" => pg.dt_out = parse(key, value)?,
            "pendulum.n_snapshots" => self.pendulum_snapshots = parse_opt(key, value)?,
            "pendulum.substeps" => pg.substeps = parse(key, value)?,
            "pendulum.preroll" => pg.preroll = parse(key, value)?,
            "pendulum.perturbation" => pg.perturbation = parse(key, value)?,
            "pendulum.max_attempts" => pg.max_attempts = parse(key, value)?,
            "pendulum.q1" => pg.mean_q1 = parse_pair(key, value)?,
            "pendulum.q2" => pg.mean_q2 = parse_pair(key, value)?,
            "pendulum.p1" => pg.mean_p1 = parse_pair(key, value)?,
            "pendulum.p2" => pg.mean_p2 = parse_pair(key, value)?,

            "couette.V" => cp.v_lid = parse(key, value)?,
            "couette.Re" => cp.re = parse(key, value)?,
            "couette.We" => cp.we = parse(key, value)?,
            "couette.eps" => cp.eps = parse(key, value)?,
            "couette.N_x" => cp.n_x = parse(key, value)?,
            "couette.K" => cp.k = parse(key, value)?,
            "couette.horizon" => cp.horizon = parse(key, value)?,
            "couette.dt" => cp.dt = parse(key, value)?,
            "couette.substeps" => cp.substeps = parse_opt(key, value)?,

            "train.formalism" => t.formalism = value.parse()?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.lr" => t.base_lr = parse(key, value)?,
            "train.milestones" => {
                t.milestones = match value {
                    "" | "thirds" => None,
                    v => Some(v.split(',').map(|m| parse(key, m.trim())).collect::<Result<_, _>>()?),
                }
            }
            "train.gamma" => t.gamma = parse(key, value)?,
            "train.lambda_d" => t.lambda_d = parse(key, value)?,
            "train.lambda_r" => t.lambda_r = parse(key, value)?,
            "train.hidden_layers" => t.hidden_layers = parse(key, value)?,
            "train.hidden_width" => t.hidden_width = parse(key, value)?,
            "train.weight_decay" => t.weight_decay = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.divergence_threshold" => t.divergence_threshold = parse(key, value)?,
            other => return Err(HarnessError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.train.validate()?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(HarnessError::Config(format!("split.train_fraction {}", self.split.train_fraction)));
        }
        if self.n_train == Some(0) || self.n_test == Some(0) || self.truncate.is_some_and(|n| n < 2) {
            return Err(HarnessError::Config("n_train, n_test must be positive and truncate at least 2".into()));
        }
        if self.pendulum_snapshots.is_some_and(|n| n < 2) {
            return Err(HarnessError::Config("pendulum.n_snapshots must be at least 2".into()));
        }
        Ok(())
    }

    /// Pendulum generator settings with seed and snapshot overrides applied.
    pub fn pendulum_gen_resolved(&self) -> PendulumGenConfig {
        let mut g = self.pendulum_gen.clone();
        g.seed = self.data_seed;
        if let Some(n) = self.pendulum_snapshots {
            g.dt_out = g.horizon / n as f64;
        }
        g
    }

    /// Every key with its effective value.
    pub fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let f = |v: f64| format_f64(v);
        let opt = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_default();
        let pair = |v: [f64; 2]| format!("{},{}", f(v[0]), f(v[1]));
        put("system", self.system.as_str().into());
        put("dataset", self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("data.seed", self.data_seed.to_string());
        put("data.truncate", opt(self.truncate));
        put("split.train_fraction", f(self.split.train_fraction));
        put("split.seed", self.split.seed.to_string());
        put("split.n_train", opt(self.n_train));
        put("split.n_test", opt(self.n_test));
        let p = &self.pendulum;
        for (k, v) in [
            ("m1", p.m1),
            ("m2", p.m2),
            ("lam0_1", p.lam0_1),
            ("lam0_2", p.lam0_2),
            ("C1", p.c1),
            ("C2", p.c2),
            ("kappa", p.kappa),
            ("k1", p.k1),
            ("k2", p.k2),
            ("theta_ref", p.theta_ref),
            ("beta", p.beta),
        ] {
            put(&format!("pendulum.{k}"), f(v));
        }
        let g = &self.pendulum_gen;
        put("pendulum.n_traj", g.n_traj.to_string());
        put("pendulum.horizon", f(g.horizon));
        put("pendulum.dt", f(g.dt_out));
        put("pendulum.n_snapshots", opt(self.pendulum_snapshots));
        put("pendulum.substeps", g.substeps.to_string());
        put("pendulum.preroll", f(g.preroll));
        put("pendulum.perturbation", f(g.perturbation));
        put("pendulum.max_attempts", g.max_attempts.to_string());
        put("pendulum.q1", pair(g.mean_q1));
        put("pendulum.q2", pair(g.mean_q2));
        put("pendulum.p1", pair(g.mean_p1));
        put("pendulum.p2", pair(g.mean_p2));
        let c = &self.couette;
        put("couette.V", f(c.v_lid));
        put("couette.Re", f(c.re));
        put("couette.We", f(c.we));
        put("couette.eps", f(c.eps));
        put("couette.N_x", c.n_x.to_string());
        put("couette.K", c.k.to_string());
        put("couette.horizon", f(c.horizon));
        put("couette.dt", f(c.dt));
        put("couette.substeps", opt(c.substeps));
        let t = &self.train;
        put("train.formalism", t.formalism.as_str().into());
        put("train.epochs", t.epochs.to_string());
        put("train.lr", f(t.base_lr));
        put(
            "train.milestones",
            match &t.milestones {
                None => "thirds".into(),
                Some(ms) => ms.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
            },
        );
        put("train.gamma", f(t.gamma));
        put("train.lambda_d", f(t.lambda_d));
        put("train.lambda_r", f(t.lambda_r));
        put("train.hidden_layers", t.hidden_layers.to_string());
        put("train.hidden_width", t.hidden_width.to_string());
        put("train.weight_decay", f(t.weight_decay));
        put("train.seed", t.seed.to_string());
        put("train.divergence_threshold", f(t.divergence_threshold));
        m
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value.trim().parse().map_err(|_| HarnessError::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, HarnessError> {
    match value.trim() {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn parse_pair(key: &str, value: &str) -> Result<[f64; 2], HarnessError> {
    let parts: Vec<f64> = value.split(',').map(|v| parse(key, v)).collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b] => Ok([a, b]),
        _ => Err(HarnessError::Config(format!("`{key}` needs two comma-separated numbers"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let m = parse_config("seed = 3\n# note\n[train]\nepochs = 10 # short\nlr=1e-3\n").unwrap();
        assert_eq!(m["train.epochs"], "10");
        assert_eq!(m["train.lr"], "1e-3");
        assert!(parse_config("a=1\na=2").is_err());
        assert!(parse_config("nonsense").is_err());
    }

    #[test]
    fn seed_sets_all_then_specific_overrides() {
        let m = parse_config("seed=5\ntrain.seed=9").unwrap();
        let c = ExperimentConfig::from_map(&m).unwrap();
        assert_eq!((c.data_seed, c.split.seed, c.train.seed), (5, 5, 9));
    }

    #[test]
    fn unknown_key_rejected() {
        let m = parse_config("train.epoch=3").unwrap();
        assert!(ExperimentConfig::from_map(&m).unwrap_err().to_string().contains("train.epoch"));
    }

    #[test]
    fn resolved_map_round_trips() {
        let mut c = ExperimentConfig::desk();
        c.train.milestones = Some(vec![3, 7]);
        c.couette.substeps = Some(200);
        let back = ExperimentConfig::from_map(&c.to_map()).unwrap();
        assert_eq!(back, c);
        let cc = ExperimentConfig::paper(System::Couette);
        assert_eq!(ExperimentConfig::from_map(&cc.to_map()).unwrap(), cc);
    }

    #[test]
    fn paper_values() {
        let c = ExperimentConfig::paper(System::Pendulum);
        assert_eq!(c.train.layer_spec(10).last().unwrap().out_dim, 202);
        assert_eq!(c.train.scheduler().unwrap().milestones(), &[4000, 8000]);
        let c = ExperimentConfig::paper(System::Couette);
        assert_eq!(c.train.scheduler().unwrap().milestones(), &[2000, 4000]);
        assert_eq!(c.train.layer_spec(5)[0].out_dim, 50);
    }
}
