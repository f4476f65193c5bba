//! Exact permutation tracking with rounded kernels over almost-orthogonal keys.
//!
//! Positions `0..n` hold one-hot values. A swap of positions `a` and `b` is a
//! single write with key `k_a − k_b` and value 0; a read of position `j` is a
//! query-only lookup with `q = k_j`. With the lattice kernel every coefficient
//! in the u-recurrence is an exact integer, so recalled values are bit-exact.

mod keys;
mod lattice;
mod trace;
mod tracking;

pub use keys::{coherence, generate_keys, KeyEnsemble};
pub use lattice::{round_f, LATTICE};
pub use trace::{permutation_oracle, Swap, SwapTrace, TraceFile};
pub use tracking::{encode_swaps, run_tracking, ReadRequest, ReadResult, TrackingKernel, TrackingReport};
