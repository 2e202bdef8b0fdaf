//! Error type shared across the library.

/// Errors produced by any sadkit operation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {offdiag:e})")]
    NoConvergence { sweeps: usize, offdiag: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("training diverged at step {step} (loss {loss:e})")]
    Divergence {
        step: usize,
        loss: f64,
        /// Loss trace collected up to the aborting step.
        trace: Vec<(usize, f64)>,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
