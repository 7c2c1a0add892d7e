use thiserror::Error;

/// Errors raised by the numeric kernel, models, and trainers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Operand shapes do not line up for the requested operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared during evaluation.
    #[error("non-finite value in {context} (layer {layer})")]
    Numeric { context: &'static str, layer: usize },

    /// An iterative method stopped before meeting its tolerance.
    #[error("no convergence after {iterations} iterations (last estimate {last_estimate})")]
    NonConvergence {
        iterations: usize,
        last_estimate: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
