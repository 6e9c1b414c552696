use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::eval::{evaluate, EnergyFn, EvalMetrics};
use super::train::{teacher_forced_loss, train, LossCurves, LossParts, TrainOutput};
use super::{ConfigMap, ExperimentConfig, HarnessError};
use crate::bracket::Formalism;
use crate::dataset::{split, Dataset, System};
use crate::sim::{couette, pendulum};

/// A dataset with its train/test partition.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub dataset: Dataset,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Load or generate the dataset, truncate, split and subset it.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData, HarnessError> {
    let mut ds = match &cfg.dataset {
        Some(path) => Dataset::load(path)?,
        None => match cfg.system {
            System::Pendulum => pendulum::generate(&cfg.pendulum, &cfg.pendulum_gen_resolved())?.0,
            System::Couette => couette::generate(&cfg.couette, cfg.data_seed)?,
            System::Custom => return Err(HarnessError::Config("custom systems need a dataset file".into())),
        },
    };
    if let Some(n) = cfg.truncate {
        ds = ds.truncate(n)?;
    }
    let (mut train_idx, mut test_idx) = split(ds.n_traj(), cfg.split)?;
    for (name, limit, idx) in [("n_train", cfg.n_train, &mut train_idx), ("n_test", cfg.n_test, &mut test_idx)] {
        if let Some(n) = limit {
            if n > idx.len() {
                return Err(HarnessError::Config(format!("{name}={n} but the split has only {}", idx.len())));
            }
            idx.truncate(n);
        }
    }
    Ok(ExperimentData { dataset: ds, train_idx, test_idx })
}

/// Teacher-forced degeneracy loss and rollout `|dH/dt|` at one milestone.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MilestoneMetrics {
    pub epoch: usize,
    pub degen_loss: Option<f64>,
    pub dh_dt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub formalism: String,
    pub train_trajectories: Vec<usize>,
    pub test_trajectories: Vec<usize>,
    pub curves: LossCurves,
    pub initial: LossParts,
    pub final_loss: LossParts,
    pub milestones: Vec<MilestoneMetrics>,
    pub eval: EvalMetrics,
}

impl RunMetrics {
    pub fn assemble(
        cfg: &ExperimentConfig,
        data: &ExperimentData,
        out: &TrainOutput,
    ) -> Result<RunMetrics, HarnessError> {
        let ds = &data.dataset;
        let energy = EnergyFn::for_dataset(ds);
        let f = cfg.train.formalism;
        let mut milestones = Vec::new();
        if f == Formalism::Generic {
            let finals = std::iter::once((cfg.train.epochs, &out.params));
            for (epoch, p) in out.milestones.iter().map(|(e, p)| (*e, p)).chain(finals) {
                let tf = teacher_forced_loss(p, ds, &data.train_idx, &cfg.train)?;
                let ev = evaluate(p, ds, &data.test_idx, f, &energy)?;
                milestones.push(MilestoneMetrics {
                    epoch,
                    degen_loss: tf.degen,
                    dh_dt: ev.degeneracy.map(|d| d.dh_dt),
                });
            }
        }
        Ok(RunMetrics {
            formalism: f.as_str().into(),
            train_trajectories: data.train_idx.clone(),
            test_trajectories: data.test_idx.clone(),
            curves: out.curves.clone(),
            initial: out.initial,
            final_loss: out.final_loss,
            milestones,
            eval: evaluate(&out.params, ds, &data.test_idx, f, &energy)?,
        })
    }
}

/// Prepare data, train, evaluate.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentData, TrainOutput, RunMetrics), HarnessError> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let out = train(&data.dataset, &data.train_idx, &cfg.train)?;
    let metrics = RunMetrics::assemble(cfg, &data, &out)?;
    Ok((data, out, metrics))
}

/// A base configuration and the axes to vary.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: ConfigMap,
    /// Key and its values, in key order.
    pub axes: Vec<(String, Vec<String>)>,
}

impl SweepSpec {
    /// `sweep.axis.<key> = v1,v2,...` entries become axes; the rest is the base.
    pub fn from_config(map: &ConfigMap) -> Result<Self, HarnessError> {
        let mut base = ConfigMap::new();
        let mut axes = Vec::new();
        for (k, v) in map {
            match k.strip_prefix("sweep.axis.") {
                Some(key) => {
                    let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
                    if values.iter().any(String::is_empty) {
                        return Err(HarnessError::Config(format!("empty value in sweep axis `{key}`")));
                    }
                    axes.push((key.to_string(), values));
                }
                None if k.starts_with("sweep.") => {
                    return Err(HarnessError::Config(format!("unknown sweep key `{k}`")));
                }
                None => {
                    base.insert(k.clone(), v.clone());
                }
            }
        }
        Ok(SweepSpec { base, axes })
    }

    /// Every combination of axis values, the last axis varying fastest.
    pub fn cells(&self) -> Vec<BTreeMap<String, String>> {
        let mut cells = vec![BTreeMap::new()];
        for (key, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.insert(key.clone(), v.clone());
                        c
                    })
                })
                .collect();
        }
        cells
    }

    pub fn cell_config(&self, overrides: &BTreeMap<String, String>) -> Result<ExperimentConfig, HarnessError> {
        let mut map = self.base.clone();
        map.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
        ExperimentConfig::from_map(&map)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub cell: String,
    pub overrides: BTreeMap<String, String>,
    pub formalism: String,
    pub metrics: Option<RunMetrics>,
    pub error: Option<String>,
    pub numerical_failure: bool,
}

/// Run every cell on a pool of `jobs` threads. Invalid cell configurations
/// fail the whole sweep up front; run failures are recorded per cell.
pub fn sweep(spec: &SweepSpec, jobs: usize) -> Result<Vec<CellResult>, HarnessError> {
    let cells = spec.cells();
    let configs: Vec<ExperimentConfig> = cells.iter().map(|c| spec.cell_config(c)).collect::<Result<_, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .zip(&configs)
            .enumerate()
            .map(|(i, (overrides, cfg))| {
                let (metrics, error, numerical_failure) = match run_experiment(cfg) {
                    Ok((_, _, m)) => (Some(m), None, false),
                    Err(e) => (None, Some(e.to_string()), e.is_numerical()),
                };
                CellResult {
                    cell: format!("cell-{i:03}"),
                    overrides: overrides.clone(),
                    formalism: cfg.train.formalism.as_str().into(),
                    metrics,
                    error,
                    numerical_failure,
                }
            })
            .collect()
    });
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_config;

    #[test]
    fn grid_expansion() {
        let m = parse_config(
            "seed=1\nsweep.axis.train.formalism=generic,single\nsweep.axis.train.hidden_width=20,50,200\n",
        )
        .unwrap();
        let s = SweepSpec::from_config(&m).unwrap();
        let cells = s.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0]["train.formalism"], "generic");
        assert_eq!(cells[1]["train.hidden_width"], "50");
        let c = s.cell_config(&cells[5]).unwrap();
        assert_eq!((c.train.formalism, c.train.hidden_width, c.train.seed), (Formalism::SingleGenerator, 200, 1));
        assert!(SweepSpec::from_config(&parse_config("sweep.jobs=2").unwrap()).is_err());
    }

    #[test]
    fn subset_limits() {
        let mut cfg = ExperimentConfig::desk();
        cfg.pendulum_gen.n_traj = 5;
        cfg.pendulum_gen.horizon = 3.0;
        cfg.truncate = None;
        cfg.n_train = Some(2);
        let d = prepare_data(&cfg).unwrap();
        assert_eq!((d.train_idx.len(), d.test_idx.len()), (2, 1));
        assert_eq!(d.dataset.n_snapshots(), 10);
        cfg.n_train = Some(9);
        assert!(prepare_data(&cfg).is_err());
    }
}
