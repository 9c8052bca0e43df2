use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid beamwidth: {0}")]
    InvalidBeamwidth(f64),

    #[error("degenerate link")]
    DegenerateLink,

    #[error("empty deployment")]
    EmptyDeployment,

    #[error("{what} index {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: u64,
        limit: u64,
    },

    #[error("value {value} is not on the {axis} grid")]
    OffGrid { axis: &'static str, value: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("diverged")]
    Diverged,

    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },

    #[error("undefined eta")]
    UndefinedEta,

    #[error("unlocated UE {0}")]
    UnlocatedUe(usize),

    #[error("insufficient typical UEs for sector {sector}: placed {placed} of {wanted}")]
    InsufficientUes {
        sector: usize,
        placed: usize,
        wanted: usize,
    },

    #[error("environment fault after {completed} trials: {reason}")]
    EnvironmentFault { completed: usize, reason: String },
}
