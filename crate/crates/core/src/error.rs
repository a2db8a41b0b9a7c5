use alloc::string::String;

use crate::lattice::{Domain, LatticeIndex};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),

    #[error("expected a field in the {expected:?} domain, found {found:?}")]
    WrongDomain { expected: Domain, found: Domain },

    #[error("array of length {found} does not fit a grid of {expected} points")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("tabulated kernel violates |U|^2 - |V|^2 = 1 at {index}: residual {residual:e}")]
    CanonicalIdentity { index: LatticeIndex, residual: f64 },

    #[error("kernel pair violates U1 = U2, V1 = -V2 at {index}: residual {residual:e}")]
    SymmetryViolation { index: LatticeIndex, residual: f64 },

    #[error("noise field is not classical: commutator residual {residual:e} exceeds {tolerance:e}")]
    NonClassicalNoise { residual: f64, tolerance: f64 },

    #[error("squeezing orientation undefined at {index}: V(-q,-Omega) = 0")]
    UndefinedOrientation { index: LatticeIndex },

    #[error("estimator needs at least {required} trials, got {got}")]
    TooFewTrials { required: u64, got: u64 },

    #[error("block shape {block:?} does not divide grid {grid:?}")]
    BlockShape { block: [usize; 3], grid: [usize; 3] },

    #[error("oracle refuses {modes} modes (limit {limit}); use a grid of at most 6x6x8 points")]
    OracleTooLarge { modes: usize, limit: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
