use super::{NetParams, NnError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &NetParams) -> Self {
        let m: Vec<Vec<f64>> = params.blocks().map(|b| vec![0.0; b.len()]).collect();
        AdamState { v: m.clone(), m, t: 0 }
    }
}

/// One bias-corrected Adam update. `weight_decay` adds `wd·θ` to the gradient
/// (coupled L2, as in the classic formulation).
pub fn adam_step(
    params: &mut NetParams,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), NnError> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(NnError::InvalidLearningRate(lr));
    }
    for (i, (g, p)) in grads.iter().zip(params.blocks()).enumerate() {
        if g.len() != p.len() {
            return Err(NnError::GradientShape { block: NetParams::block_name(i), expected: p.len(), got: g.len() });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient(NetParams::block_name(i)));
        }
    }
    if grads.len() != state.m.len() {
        return Err(NnError::GradientShape { block: "all".into(), expected: state.m.len(), got: grads.len() });
    }

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((theta, g), m), v) in params.blocks_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for k in 0..theta.len() {
            let gk = g[k] + weight_decay * theta[k];
            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            theta[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}
