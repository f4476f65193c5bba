//! Triangular solves, the log-depth unit-lower inverse, and a small LU.

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn require_square<T: Scalar>(a: &Matrix<T>) -> Result<usize> {
    if a.rows() != a.cols() {
        return Err(Error::NotSquare(a.rows(), a.cols()));
    }
    Ok(a.rows())
}

/// Solves `(I + a) X = rhs` by forward substitution, reading only the strictly
/// lower part of `a`.
pub fn tri_solve_unit_lower<T: Scalar>(a: &Matrix<T>, rhs: &Matrix<T>) -> Result<Matrix<T>> {
    let n = require_square(a)?;
    if rhs.rows() != n {
        return Err(Error::DimMismatch {
            op: "tri_solve_unit_lower",
            left: a.shape(),
            right: rhs.shape(),
        });
    }
    let p = rhs.cols();
    let mut x = rhs.clone();
    for i in 1..n {
        let (done, rest) = x.data_mut().split_at_mut(i * p);
        let xi = &mut rest[..p];
        for j in 0..i {
            let c = a.get(i, j);
            if c == T::zero() {
                continue;
            }
            let xj = &done[j * p..(j + 1) * p];
            for (o, &v) in xi.iter_mut().zip(xj) {
                *o -= c * v;
            }
        }
    }
    Ok(x)
}

/// Solves `(I + a)ᵀ X = rhs` by back substitution (strictly lower `a`).
/// This is the adjoint solve used when differentiating through
/// [`tri_solve_unit_lower`].
pub fn tri_solve_unit_lower_transposed<T: Scalar>(a: &Matrix<T>, rhs: &Matrix<T>) -> Result<Matrix<T>> {
    let n = require_square(a)?;
    if rhs.rows() != n {
        return Err(Error::DimMismatch {
            op: "tri_solve_unit_lower_transposed",
            left: a.shape(),
            right: rhs.shape(),
        });
    }
    let p = rhs.cols();
    let mut x = rhs.clone();
    for i in (0..n).rev() {
        let (head, tail) = x.data_mut().split_at_mut((i + 1) * p);
        let xi = &mut head[i * p..];
        for j in i + 1..n {
            let c = a.get(j, i);
            if c == T::zero() {
                continue;
            }
            let xj = &tail[(j - i - 1) * p..(j - i) * p];
            for (o, &v) in xi.iter_mut().zip(xj) {
                *o -= c * v;
            }
        }
    }
    Ok(x)
}

/// Result of the doubling iteration, with the number of steps taken.
#[derive(Debug, Clone)]
pub struct LogDepthInverse<T> {
    pub inverse: Matrix<T>,
    pub steps: usize,
}

/// `(I + a)⁻¹` for strictly lower `a` of power-of-two size C, via
/// `(I + A)⁻¹ = (I − A) ∏ (I + A^(2^i))`, which is exact because `A^C = 0`.
///
/// `X₀ = I − A`, `Y₀ = A²`, then `Xᵢ = Xᵢ₋₁ + Xᵢ₋₁Yᵢ₋₁`, `Yᵢ = Yᵢ₋₁²` for
/// `i = 1..log₂C − 1`. The initialisation counts as the first step, so the
/// reported step count is `log₂C` (zero for C = 1).
pub fn tri_inverse_logdepth_steps<T: Scalar>(a: &Matrix<T>) -> Result<LogDepthInverse<T>> {
    let c = require_square(a)?;
    if !c.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(c));
    }
    for i in 0..c {
        let d = a.get(i, i);
        if d != T::zero() {
            return Err(Error::NonZeroDiagonal {
                index: i,
                value: d.as_f64(),
            });
        }
    }
    if c == 1 {
        return Ok(LogDepthInverse {
            inverse: Matrix::identity(1),
            steps: 0,
        });
    }
    let strict = Matrix::from_fn(c, c, |i, j| if j < i { a.get(i, j) } else { T::zero() });
    let mut x = Matrix::identity(c).sub(&strict)?;
    let mut y = strict.matmul_unchecked(&strict);
    let mut steps = 1;
    let log2c = c.trailing_zeros() as usize;
    for _ in 1..log2c {
        let xy = x.matmul_unchecked(&y);
        x.add_assign(&xy);
        y = y.matmul_unchecked(&y);
        steps += 1;
    }
    Ok(LogDepthInverse { inverse: x, steps })
}

pub fn tri_inverse_logdepth<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    tri_inverse_logdepth_steps(a).map(|r| r.inverse)
}

/// Any size: pads `a` with zeros to the next power of two (so `I + a` gains an
/// identity block) and crops the result.
pub fn tri_inverse_padded<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let n = require_square(a)?;
    let c = n.next_power_of_two().max(1);
    if c == n {
        return tri_inverse_logdepth(a);
    }
    let padded = Matrix::from_fn(c, c, |i, j| if i < n && j < n { a.get(i, j) } else { T::zero() });
    let inv = tri_inverse_logdepth(&padded)?;
    Ok(Matrix::from_fn(n, n, |i, j| inv.get(i, j)))
}

/// LU factorisation with partial pivoting, kept for the small dense systems
/// (4×4 interpolation, Gram-type inverses).
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
    singular: bool,
}

impl<T: Scalar> Lu<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        let n = require_square(a)?;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut singular = false;
        let scale = a.max_abs().max(T::min_positive_value());
        for k in 0..n {
            let (p, best) =
                (k..n)
                    .map(|i| (i, lu.get(i, k).abs()))
                    .fold((k, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best <= scale * T::epsilon() * T::lit(n as f64) {
                singular = true;
                continue;
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let t = lu.get(k, j);
                    lu.set(k, j, lu.get(p, j));
                    lu.set(p, j, t);
                }
            }
            let pivot = lu.get(k, k);
            for i in k + 1..n {
                let f = lu.get(i, k) / pivot;
                lu.set(i, k, f);
                for j in k + 1..n {
                    let v = lu.get(i, j) - f * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
        Ok(Self { lu, perm, singular })
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn solve(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        let n = self.lu.rows();
        if b.rows() != n {
            return Err(Error::DimMismatch {
                op: "lu_solve",
                left: self.lu.shape(),
                right: b.shape(),
            });
        }
        if self.singular {
            return Err(Error::Singular { cond: f64::INFINITY });
        }
        let p = b.cols();
        let mut x = Matrix::from_fn(n, p, |i, j| b.get(self.perm[i], j));
        for col in 0..p {
            for i in 0..n {
                let mut s = x.get(i, col);
                for k in 0..i {
                    s -= self.lu.get(i, k) * x.get(k, col);
                }
                x.set(i, col, s);
            }
            for i in (0..n).rev() {
                let mut s = x.get(i, col);
                for k in i + 1..n {
                    s -= self.lu.get(i, k) * x.get(k, col);
                }
                x.set(i, col, s / self.lu.get(i, i));
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Matrix<T>> {
        self.solve(&Matrix::identity(self.lu.rows()))
    }
}

/// Inverse together with the 1-norm condition number `‖A‖₁‖A⁻¹‖₁`.
/// Fails with [`Error::Singular`] when the estimate exceeds `max_cond`.
pub fn inverse_with_condition<T: Scalar>(a: &Matrix<T>, max_cond: f64) -> Result<(Matrix<T>, f64)> {
    let lu = Lu::new(a)?;
    if lu.is_singular() {
        return Err(Error::Singular { cond: f64::INFINITY });
    }
    let inv = lu.inverse()?;
    let cond = a.norm_1().as_f64() * inv.norm_1().as_f64();
    if !cond.is_finite() || cond > max_cond {
        return Err(Error::Singular { cond });
    }
    Ok((inv, cond))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    fn strict_lower(rng: &mut Rng, n: usize, std: f64) -> Matrix<f64> {
        let g = rng.gaussian_matrix::<f64>(n, n, std);
        Matrix::from_fn(n, n, |i, j| if j < i { g.get(i, j) } else { 0.0 })
    }

    #[test]
    fn zero_a_returns_rhs() {
        let rhs = Matrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        assert_eq!(tri_solve_unit_lower(&Matrix::zeros(3, 3), &rhs).unwrap(), rhs);
    }

    #[test]
    fn one_step_substitution() {
        let a = Matrix::<f64>::from_rows(&[vec![0.0, 0.0], vec![0.7, 0.0]]).unwrap();
        let rhs = Matrix::from_rows(&[vec![2.0, 1.0], vec![3.0, -1.0]]).unwrap();
        let x = tri_solve_unit_lower(&a, &rhs).unwrap();
        assert_eq!(x.row(0), &[2.0, 1.0]);
        assert!((x.get(1, 0) - (3.0 - 0.7 * 2.0)).abs() < 1e-15);
        assert!((x.get(1, 1) - (-1.0 - 0.7)).abs() < 1e-15);
    }

    #[test]
    fn residual_random_16() {
        let mut rng = Rng::new(11);
        let a = strict_lower(&mut rng, 16, 0.3);
        let rhs = rng.gaussian_matrix(16, 5, 1.0);
        let x = tri_solve_unit_lower(&a, &rhs).unwrap();
        let res = Matrix::identity(16)
            .add(&a)
            .unwrap()
            .matmul(&x)
            .unwrap()
            .sub(&rhs)
            .unwrap();
        assert!(res.max_abs() < 1e-10);
    }

    #[test]
    fn transposed_solve_residual() {
        let mut rng = Rng::new(12);
        let a = strict_lower(&mut rng, 9, 0.4);
        let rhs = rng.gaussian_matrix(9, 3, 1.0);
        let x = tri_solve_unit_lower_transposed(&a, &rhs).unwrap();
        let m = Matrix::identity(9).add(&a).unwrap().transpose();
        assert!(m.matmul(&x).unwrap().sub(&rhs).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn non_square_rejected() {
        let a = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(
            tri_solve_unit_lower(&a, &Matrix::zeros(2, 1)),
            Err(Error::NotSquare(2, 3))
        ));
    }

    #[test]
    fn logdepth_trivial_cases() {
        assert_eq!(
            tri_inverse_logdepth(&Matrix::<f64>::zeros(8, 8)).unwrap(),
            Matrix::identity(8)
        );
        let a = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.5, 0.0]]).unwrap();
        let inv = tri_inverse_logdepth(&a).unwrap();
        assert_eq!(inv, Matrix::from_rows(&[vec![1.0, 0.0], vec![-2.5, 1.0]]).unwrap());
    }

    #[test]
    fn logdepth_rejects_bad_inputs() {
        assert!(matches!(
            tri_inverse_logdepth(&Matrix::<f64>::zeros(6, 6)),
            Err(Error::NotPowerOfTwo(6))
        ));
        let mut a = Matrix::<f64>::zeros(4, 4);
        a.set(2, 2, 1.0);
        assert!(matches!(
            tri_inverse_logdepth(&a),
            Err(Error::NonZeroDiagonal { index: 2, .. })
        ));
    }

    #[test]
    fn logdepth_residual_64() {
        let mut rng = Rng::new(13);
        let a = strict_lower(&mut rng, 64, 0.1);
        let inv = tri_inverse_logdepth(&a).unwrap();
        let prod = Matrix::identity(64).add(&a).unwrap().matmul(&inv).unwrap();
        assert!(prod.sub(&Matrix::identity(64)).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn step_counts() {
        for k in 0..8 {
            let c = 1usize << k;
            let r = tri_inverse_logdepth_steps(&Matrix::<f64>::zeros(c, c)).unwrap();
            assert_eq!(r.steps, k);
        }
    }

    #[test]
    fn padded_matches_solve() {
        let mut rng = Rng::new(14);
        let a = strict_lower(&mut rng, 11, 0.2);
        let inv = tri_inverse_padded(&a).unwrap();
        let solved = tri_solve_unit_lower(&a, &Matrix::identity(11)).unwrap();
        assert!(inv.max_abs_diff(&solved).unwrap() < 1e-10);
    }

    #[test]
    fn lu_inverse() {
        let mut rng = Rng::new(15);
        let a = rng.gaussian_matrix::<f64>(6, 6, 1.0);
        let (inv, cond) = inverse_with_condition(&a, 1e12).unwrap();
        assert!(cond >= 1.0);
        assert!(a.matmul(&inv).unwrap().sub(&Matrix::identity(6)).unwrap().max_abs() < 1e-10);
        let singular = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(
            inverse_with_condition(&singular, 1e12),
            Err(Error::Singular { .. })
        ));
    }
}
