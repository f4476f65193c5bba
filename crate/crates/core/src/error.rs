use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("expected a zero diagonal, found {value} at index {index}")]
    NonZeroDiagonal { index: usize, value: f64 },
    #[error("row {0} is fully masked")]
    FullyMasked(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite state at step {step}")]
    Explosion { step: usize },
    #[error("singular matrix (condition estimate {cond:e})")]
    Singular { cond: f64 },
    #[error("input {x} is farther than 4*eps = {radius} from every lattice point")]
    Domain { x: f64, radius: f64 },
    #[error("no ensemble of {n} keys in dimension {d} reached the target; best epsilon {best_eps:.4}; try a larger d")]
    Infeasible { n: usize, d: usize, best_eps: f64 },
    #[error("expected a scalar (1x1) output, got {0}x{1}")]
    NonScalar(usize, usize),
    #[error("cycle detected in adjacency matrix")]
    Cycle,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("internal cross-check failed: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, Error>;
