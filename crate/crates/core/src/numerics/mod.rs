//! Dense linear algebra, seeded randomness and reverse-mode autodiff.

pub mod linalg;
pub mod matrix;
pub mod rng;
pub mod softmax;
pub mod tape;

pub use linalg::{
    inverse_with_condition, tri_inverse_logdepth, tri_inverse_logdepth_steps, tri_inverse_padded, tri_solve_unit_lower,
    tri_solve_unit_lower_transposed, LogDepthInverse, Lu,
};
pub use matrix::{dot, Matrix};
pub use rng::Rng;
pub use softmax::{logsumexp, row_softmax, Mask};
pub use tape::{grad_check, round_to, ElemKernel, Gradients, Tape, Var};
