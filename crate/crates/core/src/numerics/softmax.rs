use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which entries of a square score matrix take part in a row operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mask {
    None,
    /// `j <= i`
    CausalInclusive,
    /// `j < i`
    CausalStrict,
}

impl Mask {
    #[inline]
    pub fn keeps(self, i: usize, j: usize) -> bool {
        match self {
            Mask::None => true,
            Mask::CausalInclusive => j <= i,
            Mask::CausalStrict => j < i,
        }
    }

    /// Column range kept in row `i` of a matrix with `cols` columns.
    #[inline]
    pub fn span(self, i: usize, cols: usize) -> usize {
        match self {
            Mask::None => cols,
            Mask::CausalInclusive => (i + 1).min(cols),
            Mask::CausalStrict => i.min(cols),
        }
    }
}

/// Numerically stable `log Σ exp(x)`; `-inf` for an empty slice.
pub fn logsumexp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// Softmax of one slice in place (max-subtracted). Returns the log normaliser.
pub(crate) fn softmax_in_place<T: Scalar>(xs: &mut [T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in xs.iter_mut() {
        *x /= s;
    }
    m + s.ln()
}

/// Row-wise softmax over the unmasked entries; masked entries come out as 0.
pub fn row_softmax<T: Scalar>(a: &Matrix<T>, mask: Mask) -> Result<Matrix<T>> {
    if a.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("row_softmax input".into()));
    }
    let mut out = Matrix::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        let span = mask.span(i, a.cols());
        if span == 0 {
            return Err(Error::FullyMasked(i));
        }
        let row = out.row_mut(i);
        row[..span].copy_from_slice(&a.row(i)[..span]);
        softmax_in_place(&mut row[..span]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_row() {
        let s = row_softmax(&Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap(), Mask::None).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let s = row_softmax(&Matrix::from_rows(&[vec![1000.0, 0.0]]).unwrap(), Mask::None).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);
    }

    #[test]
    fn causal_first_row_is_single_entry() {
        let a = Matrix::from_fn(4, 4, |i, j| (i * j) as f64 * 0.3);
        let s = row_softmax(&a, Mask::CausalInclusive).unwrap();
        assert_eq!(s.row(0), &[1.0, 0.0, 0.0, 0.0]);
        for i in 0..4 {
            assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn strict_mask_first_row_errors() {
        let a = Matrix::<f64>::zeros(3, 3);
        assert_eq!(row_softmax(&a, Mask::CausalStrict), Err(Error::FullyMasked(0)));
    }

    #[test]
    fn logsumexp_matches_direct() {
        let xs = [0.1f64, -2.0, 3.5];
        let direct = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&xs) - direct).abs() < 1e-14);
        assert_eq!(logsumexp::<f64>(&[]), f64::NEG_INFINITY);
    }
}
