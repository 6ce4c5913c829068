//! Error type shared across the toolkit.

use crate::state::PhaseState;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite state at iteration {iteration}, time index {index}")]
    NonFiniteState { iteration: usize, index: usize },

    #[error("system has no energy transform")]
    UnsupportedTransform,

    #[error(
        "pseudo-inverse did not converge: residual {residual:.3e} after {iterations} iterations"
    )]
    PinvConvergence {
        /// Best iterate found; callers may accept it.
        state: Box<PhaseState>,
        residual: f64,
        iterations: usize,
    },

    #[error("energy shell unreachable at chain {chain}, step {step}: {rejects} rejected draws")]
    ShellUnreachable {
        chain: usize,
        step: usize,
        rejects: usize,
    },

    #[error("step count {steps:.6} = dt/h is not a positive integer")]
    NonIntegralSubsteps { steps: f64 },

    #[error("sweep failed at index {index}: {source}")]
    SweepFailure { index: usize, source: Box<Error> },

    #[error("singular value decomposition failed: {0}")]
    SvdFailure(String),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code class: 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Io(_) | Error::CheckpointCorrupt(_) => 2,
            _ => 3,
        }
    }
}
