use thiserror::Error;

/// Errors produced by the wavepacket library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GwpdError {
    #[error("invalid physical setup: {0}")]
    InvalidSetup(String),

    #[error("invalid wavepacket state: {0}")]
    InvalidState(String),

    #[error("method constraint violated: {0}")]
    Constraint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown method id `{0}`")]
    UnknownMethod(String),

    #[error("derivative of order {order} not available for {kind} potential")]
    UnsupportedOrder { kind: String, order: usize },

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("kinetic step of length {dt} crosses the branch cut of ln det; reduce the time step")]
    BranchCrossing { dt: f64 },

    #[error("wavefunction leaked to the grid boundary (edge density {density:.3e}) at step {step}")]
    BoundaryLeak { step: usize, density: f64 },

    #[error("numerical failure at step {step}: {message}")]
    Numerical { step: usize, message: String },
}

pub type Result<T> = std::result::Result<T, GwpdError>;
