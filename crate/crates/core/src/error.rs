use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate articulated inertia at joint {joint} (sᵀMs = {value:e})")]
    DegenerateInertia { joint: usize, value: f64 },

    #[error("physically implausible parameters: {0}")]
    Implausible(String),

    #[error("simulation diverged at step {step}")]
    Divergence { step: usize },

    #[error("non-finite loss at sample {sample}")]
    NonFiniteLoss { sample: usize },

    #[error("dataset is missing required column `{0}`")]
    MissingColumn(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
