//! Associative-memory view of attention: kernels and their retrieval SNR,
//! recurrent memory updaters, the DeltaFormer u-recurrence, and exact state
//! tracking with almost-orthogonal keys.
//!
//! Numeric code is generic over [`Scalar`] (f32 or f64); the aliases below pin
//! the common case.

pub mod deltaformer;
pub mod error;
pub mod kernels;
pub mod memory_models;
pub mod numerics;
pub mod scalar;
pub mod state_tracking;
pub mod tasks;

pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Tape64 = numerics::Tape<f64>;
