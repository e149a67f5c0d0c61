use thiserror::Error;

use crate::solver::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("system is not Schur stable (spectral radius {radius:.12})")]
    Unstable { radius: f64 },

    #[error("invalid frequency band: {0}")]
    InvalidBand(String),

    #[error("matrix is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate dilation: {0}")]
    DegenerateDilation(String),

    #[error("degenerate certificate: {0}")]
    DegenerateCertificate(String),

    #[error("certificate extraction failed: {0}")]
    Extraction(String),

    #[error("solver finished with status {status:?}: {message}")]
    Solver { status: SolveStatus, message: String },

    #[error("parse error: {0}")]
    Parse(String),
}
