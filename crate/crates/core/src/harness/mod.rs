//! Training, rollout evaluation, metrics and sweeps.

mod config;
mod eval;
mod export;
mod sweep;
mod train;

pub use config::{parse_config, ConfigMap, ExperimentConfig, TrainConfig};
pub use eval::{
    evaluate, rollout, trivial_solution, DegeneracyStats, EnergyFn, EvalMetrics, Rollout, RolloutGraph,
    StepDiagnostics, TrajectoryMetrics, TRIVIAL_RATIO,
};
pub use export::{eval_rows, metric_rows, write_metrics_csv, MetricRow};
pub use sweep::{
    prepare_data, run_experiment, sweep, CellResult, ExperimentData, MilestoneMetrics, RunMetrics, SweepSpec,
};
pub use train::{losses, teacher_forced_loss, train, train_from, LossCurves, LossParts, TrainGraph, TrainOutput};

use crate::bracket::BracketError;
use crate::dataset::DatasetError;
use crate::nn::NnError;
use crate::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, trajectory {trajectory}: loss {loss:e}")]
    Diverged { epoch: usize, trajectory: usize, loss: f64, partial: Box<LossCurves> },
    #[error("non-finite loss at epoch {epoch}, trajectory {trajectory}, snapshot {snapshot}")]
    NonFiniteLoss { epoch: usize, trajectory: usize, snapshot: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Bracket(#[from] BracketError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl From<crate::autodiff::AutodiffError> for HarnessError {
    fn from(e: crate::autodiff::AutodiffError) -> Self {
        HarnessError::Nn(NnError::Autodiff(e))
    }
}

impl HarnessError {
    /// Divergence or non-finite numbers, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            HarnessError::Diverged { .. } | HarnessError::NonFiniteLoss { .. } => true,
            HarnessError::Nn(NnError::NonFiniteGradient(_)) => true,
            HarnessError::Bracket(BracketError::NonFinite { .. }) => true,
            HarnessError::Sim(e) => {
                !matches!(e, SimError::InvalidParams(_) | SimError::Cfl { .. } | SimError::Dataset(_))
            }
            _ => false,
        }
    }
}
