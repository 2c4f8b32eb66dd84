use thiserror::Error;

/// Failure modes shared across the crate.
///
/// Everything except `NumericalFailure` indicates a caller error (bad shapes,
/// bad parameters, bad values). `NumericalFailure` means a solver detected a
/// non-finite or diverging state and aborted; the attached message carries the
/// iteration context.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("spectrum is not conjugate-symmetric (relative imaginary residue {residual:.3e})")]
    ConjugateSymmetry { residual: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
