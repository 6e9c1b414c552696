//! Long-format metric rows: `run_id, cell, metric, trajectory, variable, value`.
//!
//! Per-epoch metrics put the epoch in `variable`; time series put the
//! snapshot index there. Aggregates use `trajectory = all`.

use std::io::Write;

use serde::Serialize;

use super::eval::EvalMetrics;
use super::sweep::RunMetrics;
use super::HarnessError;
use crate::dataset::format_f64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub run_id: String,
    pub cell: String,
    pub metric: String,
    pub trajectory: String,
    pub variable: String,
    pub value: String,
}

pub fn metric_rows(run_id: &str, cell: &str, m: &RunMetrics) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    let mut push = |metric: &str, trajectory: String, variable: String, value: f64| {
        rows.push(MetricRow {
            run_id: run_id.into(),
            cell: cell.into(),
            metric: metric.into(),
            trajectory,
            variable,
            value: format_f64(value),
        });
    };
    let all = || "all".to_string();
    let c = &m.curves;
    for (e, v) in c.data.iter().enumerate() {
        push("loss.data", all(), e.to_string(), *v);
    }
    if let Some(d) = &c.degen {
        for (e, v) in d.iter().enumerate() {
            push("loss.degen", all(), e.to_string(), *v);
        }
    }
    for (e, v) in c.reg.iter().enumerate() {
        push("loss.reg", all(), e.to_string(), *v);
    }
    for (e, v) in c.total.iter().enumerate() {
        push("loss.total", all(), e.to_string(), *v);
    }
    for (e, v) in c.lr.iter().enumerate() {
        push("lr", all(), e.to_string(), *v);
    }
    for (name, l) in [("teacher_forced.initial", &m.initial), ("teacher_forced.final", &m.final_loss)] {
        push(&format!("{name}.data"), all(), String::new(), l.data);
        if let Some(d) = l.degen {
            push(&format!("{name}.degen"), all(), String::new(), d);
        }
        if let Some(d) = l.degen_median {
            push(&format!("{name}.degen_median"), all(), String::new(), d);
        }
        push(&format!("{name}.reg"), all(), String::new(), l.reg);
        push(&format!("{name}.total"), all(), String::new(), l.total);
    }
    for ms in &m.milestones {
        if let Some(v) = ms.degen_loss {
            push("milestone.degen_loss", all(), ms.epoch.to_string(), v);
        }
        if let Some(v) = ms.dh_dt {
            push("milestone.dh_dt", all(), ms.epoch.to_string(), v);
        }
    }
    rows.extend(eval_rows(run_id, cell, &m.eval));
    rows
}

/// Rows for rollout metrics alone.
pub fn eval_rows(run_id: &str, cell: &str, ev: &EvalMetrics) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    let mut push = |metric: &str, trajectory: String, variable: String, value: f64| {
        rows.push(MetricRow {
            run_id: run_id.into(),
            cell: cell.into(),
            metric: metric.into(),
            trajectory,
            variable,
            value: format_f64(value),
        });
    };
    let all = || "all".to_string();
    for t in &ev.trajectories {
        let tr = t.index.to_string();
        for (name, v) in ev.variables.iter().zip(&t.mse) {
            push("mse", tr.clone(), name.clone(), *v);
        }
        if let Some(v) = t.mse_mean {
            push("mse_mean", tr.clone(), String::new(), v);
        }
        for (k, e) in t.energy_error.iter().enumerate() {
            if let Some(e) = e {
                push("energy_error", tr.clone(), k.to_string(), *e);
            }
        }
        if let Some(k) = t.failed_at {
            push("failed_at", tr.clone(), String::new(), k as f64);
        }
        if let Some(d) = &t.degeneracy {
            push_degen(&mut push, tr.clone(), d);
        }
    }
    push("failures", all(), String::new(), ev.failures as f64);
    if let Some(v) = ev.median_mse {
        push("median_mse", all(), String::new(), v);
    }
    if let Some(v) = ev.median_energy_error {
        push("median_energy_error", all(), String::new(), v);
    }
    if let Some(d) = &ev.degeneracy {
        push_degen(&mut push, all(), d);
    }
    if let Some(t) = ev.trivial_solution {
        push("trivial_solution", all(), String::new(), if t { 1.0 } else { 0.0 });
    }
    rows
}

fn push_degen(push: &mut impl FnMut(&str, String, String, f64), tr: String, d: &super::DegeneracyStats) {
    push("degeneracy.l_grad_h", tr.clone(), String::new(), d.l_grad_h);
    push("degeneracy.m_grad_s", tr.clone(), String::new(), d.m_grad_s);
    push("degeneracy.l_grad_s", tr.clone(), String::new(), d.l_grad_s);
    push("degeneracy.m_grad_h", tr.clone(), String::new(), d.m_grad_h);
    push("degeneracy.dh_dt", tr, String::new(), d.dh_dt);
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
