use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },

    #[error("numerical blowup at step {step}: |u| = {magnitude:e}")]
    Blowup { step: usize, magnitude: f64 },

    #[error("degenerate basis: diagonal entry {index} of R is {value:e}")]
    DegenerateBasis { index: usize, value: f64 },

    #[error("non-finite perturbation at step {0}")]
    NonFinite(usize),

    #[error("singular system: {0}")]
    Singular(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
