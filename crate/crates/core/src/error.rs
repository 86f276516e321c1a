use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("adjoint check failed: relative mismatch {mismatch:e}")]
    AdjointMismatch { mismatch: f64 },

    #[error("Gram matrix is not positive definite (pivot {pivot:e}, condition estimate {condition:e})")]
    GramIndefinite { pivot: f64, condition: f64 },

    #[error("kernel component m={m} violates conjugate symmetry (max deviation {deviation:e})")]
    SymmetryViolation { m: i32, deviation: f64 },

    #[error("cosine exponent {0} is not supported (expected 2 or 4)")]
    UnsupportedExponent(u32),

    #[error("fixed-point construction does not contract (measured factor {factor:.3})")]
    NoContraction { factor: f64 },

    #[error("noise level is zero: stopping index is infinite")]
    NoStoppingIndex,

    #[error("rate fit needs {needed} positive samples, got {got}")]
    RateFit { needed: usize, got: usize },
}
