//! Ground-truth generators.

pub mod couette;
pub mod pendulum;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::DatasetError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("spring {spring} collapsed (length {length:e}) at t={time}")]
    SpringCollapse { spring: usize, length: f64, time: f64 },
    #[error("temperature of spring {spring} is {theta:e} (must be positive) at t={time}")]
    NonPositiveTemperature { spring: usize, theta: f64, time: f64 },
    #[error("non-finite state at t={0}")]
    NonFinite(f64),
    #[error("time step {dt} exceeds the explicit stability bound {limit} (Re·Δy²/(2(1−ε)))")]
    Cfl { dt: f64, limit: f64 },
    #[error("trajectory {traj} rejected {attempts} times: {last}")]
    TooManyRejections { traj: usize, attempts: usize, last: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Independent random stream keyed by `(seed, a, b)`.
pub(crate) fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((a << 32) ^ b);
    rng
}

/// `horizon / dt` as an integer, or an error if it is not one.
pub(crate) fn step_count(horizon: f64, dt: f64) -> Result<usize, SimError> {
    let n = horizon / dt;
    let r = n.round();
    if !(dt > 0.0 && horizon > 0.0) || (n - r).abs() > 1e-9 * n.max(1.0) || r < 1.0 {
        return Err(SimError::InvalidParams(format!("horizon {horizon} is not a whole number of steps {dt}")));
    }
    Ok(r as usize)
}
