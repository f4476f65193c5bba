use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Finite feature map used by dense memory states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureMap {
    Identity,
    /// `exp(xᵀy/τ)` truncated after `order` Taylor terms: blocks
    /// `x^{⊗n} / √(n! τⁿ)` for `n = 0..=order`.
    TaylorExp {
        order: usize,
        tau: f64,
    },
}

impl FeatureMap {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FeatureMap::Identity => Ok(()),
            FeatureMap::TaylorExp { order, tau } => {
                if !(tau > 0.0 && tau.is_finite()) {
                    return Err(Error::InvalidConfig(format!("feature tau must be positive, got {tau}")));
                }
                if order > 8 {
                    return Err(Error::InvalidConfig(format!("Taylor order {order} is too large")));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self, d_k: usize) -> usize {
        match *self {
            FeatureMap::Identity => d_k,
            FeatureMap::TaylorExp { order, .. } => (0..=order as u32).map(|n| d_k.pow(n)).sum(),
        }
    }

    pub fn apply<T: Scalar>(&self, x: &[T]) -> Result<Vec<T>> {
        self.validate()?;
        match *self {
            FeatureMap::Identity => Ok(x.to_vec()),
            FeatureMap::TaylorExp { order, tau } => {
                let mut out = Vec::with_capacity(self.dim(x.len()));
                let mut block = vec![T::one()];
                let mut factorial = 1.0;
                out.push(T::one());
                for n in 1..=order {
                    block = block.iter().flat_map(|&b| x.iter().map(move |&xi| b * xi)).collect();
                    factorial *= n as f64;
                    let c = T::lit(1.0 / (factorial * tau.powi(n as i32)).sqrt());
                    out.extend(block.iter().map(|&b| b * c));
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;

    #[test]
    fn taylor_features_approximate_exp() {
        let fm = FeatureMap::TaylorExp { order: 6, tau: 2.0 };
        let x = [0.3, -0.4, 0.2];
        let y = [0.1, 0.5, -0.3];
        let phi_x = fm.apply(&x).unwrap();
        assert_eq!(phi_x.len(), fm.dim(3));
        let approx: f64 = dot(&phi_x, &fm.apply(&y).unwrap());
        let exact = (dot(&x, &y) / 2.0).exp();
        assert!((approx - exact).abs() < 1e-9);
    }

    #[test]
    fn identity_passthrough() {
        assert_eq!(FeatureMap::Identity.apply(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(FeatureMap::Identity.dim(5), 5);
    }
}
