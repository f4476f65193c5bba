use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::numerics::{dot, Lu, Matrix};
use crate::scalar::Scalar;

/// `Σ_j a_j κ(k, j·w)` for `j = 1..=G`.
pub fn grouped_kappa1<T: Scalar>(weights: &[f64], base: &KernelSpec, k: &[T], w: &[T]) -> Result<T> {
    if k.len() != w.len() {
        return Err(Error::DimMismatch {
            op: "grouped_kappa1",
            left: (1, k.len()),
            right: (1, w.len()),
        });
    }
    if weights.is_empty() {
        return Err(Error::InvalidConfig("at least one group weight is required".into()));
    }
    let s = dot(k, w);
    let mut acc = T::zero();
    for (j, &a) in weights.iter().enumerate() {
        acc += T::lit(a) * base.apply(T::lit((j + 1) as f64) * s, k.len())?;
    }
    Ok(acc)
}

/// Lattice points the four-head exp mixture must reproduce.
pub const ROUND_LATTICE: [f64; 4] = [-1.0, 0.0, 1.0, 2.0];

/// Weights `a` with `Σ_{j=1..4} a_j exp(j·x) = x` at `x ∈ {−1, 0, 1, 2}`.
pub fn fit_round_coefficients(g: usize) -> Result<Vec<f64>> {
    if g != 4 {
        return Err(Error::InvalidConfig(format!(
            "round fit is defined for 4 heads, got {g}"
        )));
    }
    let m = Matrix::from_fn(4, 4, |r, j| ((j + 1) as f64 * ROUND_LATTICE[r]).exp());
    let b = Matrix::from_fn(4, 1, |r, _| ROUND_LATTICE[r]);
    let lu = Lu::new(&m)?;
    if lu.is_singular() {
        return Err(Error::Singular { cond: f64::INFINITY });
    }
    Ok(lu.solve(&b)?.into_vec())
}
