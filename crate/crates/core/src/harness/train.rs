use serde::Serialize;

use super::eval::median;
use super::{HarnessError, TrainConfig};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::bracket::{build_step, degeneracy_residuals, Formalism, StepNodes};
use crate::dataset::Dataset;
use crate::nn::{adam_step, AdamState, BoundNet, NetParams};

/// Loss terms of one snapshot or a sum of them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossParts {
    /// `Σ‖z_net − z_GT‖²`.
    pub data: f64,
    /// `Σ(‖L∇S‖² + ‖M∇H‖²)`; absent for the single-generator bracket.
    pub degen: Option<f64>,
    /// `Σ w²` over all weight matrices.
    pub reg: f64,
    pub total: f64,
    /// Median over snapshots of the per-snapshot `L_degen`.
    pub degen_median: Option<f64>,
}

/// Loss of one prediction: `λ_d·‖pred − truth‖² + ‖r_L‖² + ‖r_M‖² + λ_r·reg`.
pub fn losses(
    pred: &[f64],
    truth: &[f64],
    residuals: Option<(&[f64], &[f64])>,
    weight_sq_sum: f64,
    cfg: &TrainConfig,
) -> Result<LossParts, HarnessError> {
    if pred.len() != truth.len() {
        return Err(HarnessError::Config(format!("prediction has {} entries, truth {}", pred.len(), truth.len())));
    }
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let data: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let degen = residuals.map(|(rl, rm)| sq(rl) + sq(rm));
    let total = cfg.lambda_d * data + degen.unwrap_or(0.0) + cfg.lambda_r * weight_sq_sum;
    Ok(LossParts { data, degen, reg: weight_sq_sum, total, degen_median: degen })
}

/// One teacher-forced transition `z_t → z_{t+1}` as a reusable graph: the
/// network reads `z_t`, the Euler step is compared with `z_{t+1}`, and the
/// parameter gradient of `λ_d·L_data + L_degen` is part of the graph.
pub struct TrainGraph {
    g: Graph,
    net: BoundNet,
    z: NodeId,
    target: NodeId,
    step: StepNodes,
    data: NodeId,
    degen: Option<NodeId>,
    loss: NodeId,
    grads: Vec<NodeId>,
}

impl TrainGraph {
    pub fn new(params: &NetParams, formalism: Formalism, dt: f64, lambda_d: f64) -> Result<Self, HarnessError> {
        let dim = params.input_dim();
        let mut g = Graph::new();
        let net = params.bind(&mut g);
        let z = g.input(Tensor::zeros(crate::autodiff::Shape::Vector(dim)));
        let target = g.input(Tensor::zeros(crate::autodiff::Shape::Vector(dim)));
        let step = build_step(&mut g, &net, z, z, dt, formalism)?;
        let diff = g.sub(step.next, target)?;
        let data = g.dot(diff, diff)?;
        let weighted = g.scale_by(data, lambda_d)?;
        let (degen, loss) = match formalism {
            Formalism::Generic => {
                let (rl, rm) = degeneracy_residuals(&mut g, &step.ops, &step.drive)?;
                let a = g.dot(rl, rl)?;
                let b = g.dot(rm, rm)?;
                let degen = g.add(a, b)?;
                (Some(degen), g.add(weighted, degen)?)
            }
            Formalism::SingleGenerator => (None, weighted),
        };
        let grads = g.gradient(loss, &net.handles())?;
        Ok(TrainGraph { g, net, z, target, step, data, degen, loss, grads })
    }

    pub fn load(&mut self, params: &NetParams) -> Result<(), HarnessError> {
        params.load_into(&mut self.g, &self.net)?;
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.g.len()
    }

    /// Evaluate one transition. Returns `(L_data, L_degen)`; when `acc` is
    /// given the parameter gradient is added to it block by block.
    pub fn eval(
        &mut self,
        z: &[f64],
        target: &[f64],
        acc: Option<&mut [Vec<f64>]>,
    ) -> Result<(f64, Option<f64>), HarnessError> {
        self.g.set_value(self.z, z)?;
        self.g.set_value(self.target, target)?;
        self.g.recompute();
        if let Some(acc) = acc {
            for (a, &gid) in acc.iter_mut().zip(&self.grads) {
                for (x, y) in a.iter_mut().zip(self.g.value(gid).data()) {
                    *x += y;
                }
            }
        }
        Ok((self.g.scalar(self.data), self.degen.map(|d| self.g.scalar(d))))
    }

    /// Total per-snapshot loss `λ_d·L_data + L_degen` from the last `eval`.
    pub fn last_loss(&self) -> f64 {
        self.g.scalar(self.loss)
    }

    /// One-step prediction from the last `eval`.
    pub fn prediction(&self) -> &[f64] {
        self.g.value(self.step.next).data()
    }
}

/// Per-epoch sums over training trajectories, accumulated while the
/// parameters move within the epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossCurves {
    pub data: Vec<f64>,
    pub degen: Option<Vec<f64>>,
    /// `Σ w²` at the start of each epoch.
    pub reg: Vec<f64>,
    pub total: Vec<f64>,
    pub lr: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: NetParams,
    pub curves: LossCurves,
    /// Parameters at the start of each milestone epoch, before the decay.
    pub milestones: Vec<(usize, NetParams)>,
    /// Teacher-forced loss of the initial network on the training set.
    pub initial: LossParts,
    /// Same, for the final network.
    pub final_loss: LossParts,
}

/// Sum of teacher-forced losses over the given trajectories, with `reg`
/// counted once.
pub fn teacher_forced_loss(
    params: &NetParams,
    ds: &Dataset,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<LossParts, HarnessError> {
    let mut tg = TrainGraph::new(params, cfg.formalism, ds.dt(), cfg.lambda_d)?;
    tg.load(params)?;
    let mut data = 0.0;
    let mut per_snapshot = Vec::new();
    for &i in indices {
        for t in 0..ds.n_snapshots() - 1 {
            let (d, r) = tg.eval(ds.state(i, t), ds.state(i, t + 1), None)?;
            data += d;
            per_snapshot.extend(r);
        }
    }
    let reg = params.weight_sq_sum();
    let generic = cfg.formalism == Formalism::Generic;
    let degen = generic.then(|| per_snapshot.iter().sum::<f64>());
    Ok(LossParts {
        data,
        degen,
        reg,
        total: cfg.lambda_d * data + degen.unwrap_or(0.0) + cfg.lambda_r * reg,
        degen_median: if generic { median(&per_snapshot) } else { None },
    })
}

/// Kaiming-initialized network trained on `train_idx`.
pub fn train(ds: &Dataset, train_idx: &[usize], cfg: &TrainConfig) -> Result<TrainOutput, HarnessError> {
    cfg.validate()?;
    let params = NetParams::init_kaiming(&cfg.layer_spec(ds.dim()), cfg.seed)?;
    train_from(ds, train_idx, cfg, params)
}

/// Per epoch, per trajectory: accumulate the snapshot losses and gradients,
/// add the weight penalty, take one Adam step.
pub fn train_from(
    ds: &Dataset,
    train_idx: &[usize],
    cfg: &TrainConfig,
    mut params: NetParams,
) -> Result<TrainOutput, HarnessError> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(HarnessError::Config("no training trajectories".into()));
    }
    if params.input_dim() != ds.dim() || params.output_dim() != cfg.formalism.head_len(ds.dim()) {
        return Err(HarnessError::Config(format!(
            "network maps {} -> {}, data needs {} -> {}",
            params.input_dim(),
            params.output_dim(),
            ds.dim(),
            cfg.formalism.head_len(ds.dim())
        )));
    }
    let sched = cfg.scheduler()?;
    let initial = teacher_forced_loss(&params, ds, train_idx, cfg)?;
    let mut tg = TrainGraph::new(&params, cfg.formalism, ds.dt(), cfg.lambda_d)?;
    let mut adam = AdamState::new(&params);
    let mut acc: Vec<Vec<f64>> = params.blocks().map(|b| vec![0.0; b.len()]).collect();
    let generic = cfg.formalism == Formalism::Generic;
    let mut curves = LossCurves { degen: generic.then(Vec::new), ..LossCurves::default() };
    let mut milestones = Vec::new();

    for epoch in 0..cfg.epochs {
        if sched.milestones().contains(&epoch) {
            milestones.push((epoch, params.clone()));
        }
        let lr = sched.lr(epoch);
        let (mut e_data, mut e_degen, mut e_total) = (0.0, 0.0, 0.0);
        let reg_start = params.weight_sq_sum();
        for &traj in train_idx {
            tg.load(&params)?;
            acc.iter_mut().for_each(|a| a.fill(0.0));
            let (mut data, mut degen) = (0.0, 0.0);
            for t in 0..ds.n_snapshots() - 1 {
                let (d, r) = tg.eval(ds.state(traj, t), ds.state(traj, t + 1), Some(&mut acc))?;
                if !tg.last_loss().is_finite() {
                    return Err(HarnessError::NonFiniteLoss { epoch, trajectory: traj, snapshot: t });
                }
                data += d;
                degen += r.unwrap_or(0.0);
            }
            let reg = params.weight_sq_sum();
            let total = cfg.lambda_d * data + degen + cfg.lambda_r * reg;
            if total.is_nan() || total > cfg.divergence_threshold {
                let mut partial = curves.clone();
                push_epoch(&mut partial, e_data + data, e_degen + degen, reg_start, e_total + total, lr, generic);
                return Err(HarnessError::Diverged {
                    epoch,
                    trajectory: traj,
                    loss: total,
                    partial: Box::new(partial),
                });
            }
            for (li, layer) in params.layers().iter().enumerate() {
                for (a, w) in acc[2 * li].iter_mut().zip(&layer.weight) {
                    *a += 2.0 * cfg.lambda_r * w;
                }
            }
            adam_step(&mut params, &acc, &mut adam, lr, cfg.weight_decay)?;
            e_data += data;
            e_degen += degen;
            e_total += total;
        }
        push_epoch(&mut curves, e_data, e_degen, reg_start, e_total, lr, generic);
    }
    let final_loss = teacher_forced_loss(&params, ds, train_idx, cfg)?;
    Ok(TrainOutput { params, curves, milestones, initial, final_loss })
}

fn push_epoch(c: &mut LossCurves, data: f64, degen: f64, reg: f64, total: f64, lr: f64, generic: bool) {
    c.data.push(data);
    if generic {
        c.degen.get_or_insert_with(Vec::new).push(degen);
    }
    c.reg.push(reg);
    c.total.push(total);
    c.lr.push(lr);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn loss_examples() {
        let c = cfg();
        let l = losses(&[1.0, 2.0], &[1.0, 2.0], None, 0.0, &c).unwrap();
        assert_eq!(l.total, 0.0);
        let l = losses(&[1.0, 1.0], &[0.0, 0.0], None, 0.0, &c).unwrap();
        assert_eq!(l.total, 200.0);
        let l = losses(&[0.0], &[0.0], None, 4.0, &c).unwrap();
        assert!((l.total - 4e-5).abs() < 1e-18);
        let l = losses(&[0.0], &[0.0], Some((&[3.0], &[4.0])), 0.0, &c).unwrap();
        assert_eq!(l.degen, Some(25.0));
        assert_eq!(l.total, 25.0);
    }
}
