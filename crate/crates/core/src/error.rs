use core::fmt;

use crate::matrix::DenseMatrix;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// Data length does not equal `rows * cols`.
    BadLength { expected: usize, actual: usize },
    /// A NaN or infinity reached a matrix.
    NonFinite { op: &'static str },
    /// More workers than columns; some rank would own nothing.
    TooManyParts { n: usize, parts: usize },
    /// Zero-sized request where at least one element is required.
    Empty { op: &'static str },
    /// Gram matrix is not usable (asymmetric or negative diagonal).
    DegenerateGram { reason: &'static str },
    /// NNLS hit its iteration cap. Carries the best iterate found.
    NnlsNotConverged { best: DenseMatrix, kkt_residual: f64 },
    /// The enumeration oracle refuses large `K`.
    OracleTooLarge { k: usize, max: usize },
    /// A factorization needs `rho > 0`.
    InvalidPenalty(f64),
    /// Cholesky factorization met a non-positive pivot.
    NotPositiveDefinite { pivot: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { op, left, right } => write!(
                f,
                "{op}: dimension mismatch {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::BadLength { expected, actual } => {
                write!(f, "matrix data length {actual}, expected {expected}")
            }
            Error::NonFinite { op } => write!(f, "{op}: non-finite value"),
            Error::TooManyParts { n, parts } => {
                write!(f, "cannot split {n} columns into {parts} non-empty blocks")
            }
            Error::Empty { op } => write!(f, "{op}: empty input"),
            Error::DegenerateGram { reason } => write!(f, "degenerate Gram: {reason}"),
            Error::NnlsNotConverged { kkt_residual, .. } => {
                write!(f, "nnls did not converge (kkt residual {kkt_residual:e})")
            }
            Error::OracleTooLarge { k, max } => {
                write!(f, "nnls oracle refuses K={k} (max {max})")
            }
            Error::InvalidPenalty(rho) => write!(f, "penalty must be positive, got {rho}"),
            Error::NotPositiveDefinite { pivot } => {
                write!(f, "matrix not positive definite at pivot {pivot}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
