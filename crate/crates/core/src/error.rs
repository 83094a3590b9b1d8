use thiserror::Error;

/// Failures raised while solving the Riccati equations or assembling gains.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("integration blew up (non-finite value) at s = {time}")]
    BlowUp { time: f64 },
    #[error("gain matrix {which} is numerically singular at s = {time} (condition {cond:.3e})")]
    SingularGain {
        which: &'static str,
        time: f64,
        cond: f64,
    },
    #[error("block {which} is numerically singular at s = {time} (condition {cond:.3e})")]
    SingularBlock {
        which: &'static str,
        time: f64,
        cond: f64,
    },
    #[error("leader ineligible: {0}")]
    Ineligible(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

impl SolveError {
    /// Time at which the failure was detected, when there is one.
    pub fn time(&self) -> Option<f64> {
        match self {
            SolveError::BlowUp { time }
            | SolveError::SingularGain { time, .. }
            | SolveError::SingularBlock { time, .. } => Some(*time),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, SolveError>;
