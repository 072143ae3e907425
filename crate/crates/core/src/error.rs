use thiserror::Error;

use crate::linalg::LinalgError;
use crate::systems::StateError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("every outcome has probability below 1e-14; the channel does not act on this state")]
    DegenerateOutcomes,
    /// A numerical guard tripped; `suggested_dt` is a step that satisfies it.
    #[error("{reason}; try dt <= {suggested_dt:.3e}")]
    StepTooLarge { reason: String, suggested_dt: f64 },
}

impl Error {
    /// True for failures of the integrator guards rather than of the inputs.
    pub fn is_numerical_guard(&self) -> bool {
        matches!(self, Error::StepTooLarge { .. } | Error::DegenerateOutcomes)
    }
}
