use crate::error::{Error, Result};
use crate::numerics::{inverse_with_condition, Matrix};
use crate::scalar::Scalar;

const MAX_CONDITION: f64 = 1e12;

/// Minimiser of `E‖S W_k x − W_v x‖²` over the empirical distribution of the
/// rows of `x_samples`: `S* = (W_v Σ W_kᵀ)(W_k Σ W_kᵀ)⁻¹` with `Σ = E[xxᵀ]`.
pub fn analytical_optimum<T: Scalar>(w_k: &Matrix<T>, w_v: &Matrix<T>, x_samples: &Matrix<T>) -> Result<Matrix<T>> {
    if w_k.cols() != x_samples.cols() || w_v.cols() != x_samples.cols() {
        return Err(Error::DimMismatch {
            op: "analytical_optimum",
            left: w_k.shape(),
            right: x_samples.shape(),
        });
    }
    if x_samples.rows() == 0 {
        return Err(Error::InvalidConfig("no samples".into()));
    }
    let sigma = x_samples
        .matmul_at(x_samples)?
        .scale(T::lit(1.0 / x_samples.rows() as f64));
    let inner = w_k.matmul(&sigma)?.matmul_bt(w_k)?;
    let cross = w_v.matmul(&sigma)?.matmul_bt(w_k)?;
    let (inv, _cond) = inverse_with_condition(&inner, MAX_CONDITION)?;
    cross.matmul(&inv)
}
