use super::NnError;

/// Multistep decay: `base_lr · gamma^(#milestones ≤ epoch)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerSpec {
    base_lr: f64,
    milestones: Vec<usize>,
    gamma: f64,
}

impl SchedulerSpec {
    pub fn new(base_lr: f64, milestones: Vec<usize>, gamma: f64) -> Result<Self, NnError> {
        if !(base_lr >= 0.0 && base_lr.is_finite()) {
            return Err(NnError::InvalidScheduler(format!("base_lr {base_lr}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(NnError::InvalidScheduler(format!("gamma {gamma} outside (0, 1]")));
        }
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NnError::InvalidScheduler(format!("milestones {milestones:?} not strictly increasing")));
        }
        Ok(SchedulerSpec { base_lr, milestones, gamma })
    }

    /// Milestones at one and two thirds of the run.
    pub fn thirds(base_lr: f64, epochs: usize, gamma: f64) -> Result<Self, NnError> {
        let mut ms = vec![epochs / 3, 2 * epochs / 3];
        ms.dedup();
        if ms.first() == Some(&0) {
            ms.remove(0);
        }
        SchedulerSpec::new(base_lr, ms, gamma)
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub fn milestones(&self) -> &[usize] {
        &self.milestones
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.gamma.powi(passed as i32)
    }
}
