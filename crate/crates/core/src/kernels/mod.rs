//! Similarity kernels κ(x, y) and their retrieval signal-to-noise behaviour.

mod snr;

pub use snr::{
    capacity_curve, snr_closed_form, snr_monte_carlo, snr_monte_carlo_with, solu_closed_form_at_sqrt_dk, CapacityRow,
    Estimator, SnrEstimate,
};

use crate::error::{Error, Result};
use crate::numerics::{dot, round_to, ElemKernel};
use crate::scalar::Scalar;
use crate::state_tracking::round_f;

/// A similarity function applied to a dot product.
///
/// `tau: None` means the default temperature √d_k, resolved where the key
/// dimension is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Linear,
    Exp {
        tau: Option<f64>,
    },
    Relu,
    Solu {
        tau: Option<f64>,
    },
    /// Nearest multiple of `10^-decimals`.
    Round {
        decimals: i32,
    },
    /// `exp(x·y/τ)`, normalised over a row by the caller.
    SoftmaxRow {
        tau: Option<f64>,
    },
    /// Nearest point of {−1, 0, 1, 2}, erroring outside radius `4·eps`.
    Lattice {
        eps: f64,
    },
}

impl KernelSpec {
    pub const fn exp() -> Self {
        KernelSpec::Exp { tau: None }
    }

    pub const fn solu() -> Self {
        KernelSpec::Solu { tau: None }
    }

    pub const fn softmax() -> Self {
        KernelSpec::SoftmaxRow { tau: None }
    }

    pub const fn round2() -> Self {
        KernelSpec::Round { decimals: 2 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Exp { .. } => "exp",
            KernelSpec::Relu => "relu",
            KernelSpec::Solu { .. } => "solu",
            KernelSpec::Round { .. } => "round",
            KernelSpec::SoftmaxRow { .. } => "softmax",
            KernelSpec::Lattice { .. } => "lattice",
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match *self {
            KernelSpec::Exp { tau } | KernelSpec::Solu { tau } | KernelSpec::SoftmaxRow { tau } => tau,
            _ => None,
        }
    }

    /// Temperature with the √d_k default filled in.
    pub fn tau_for(&self, d_k: usize) -> f64 {
        self.tau().unwrap_or((d_k as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.tau() {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("tau must be positive, got {t}")));
            }
        }
        if let KernelSpec::Lattice { eps } = *self {
            if !(0.0..0.125).contains(&eps) {
                return Err(Error::InvalidConfig(format!(
                    "lattice eps must be in [0, 1/8), got {eps}"
                )));
            }
        }
        Ok(())
    }

    /// κ evaluated on an already-formed dot product `s`.
    #[inline]
    pub fn apply<T: Scalar>(&self, s: T, d_k: usize) -> Result<T> {
        Ok(match *self {
            KernelSpec::Linear => s,
            KernelSpec::Exp { .. } | KernelSpec::SoftmaxRow { .. } => (s / T::lit(self.tau_for(d_k))).exp(),
            KernelSpec::Relu => s.max(T::zero()),
            KernelSpec::Solu { .. } => s * (s / T::lit(self.tau_for(d_k))).exp(),
            KernelSpec::Round { decimals } => round_to(s, decimals),
            KernelSpec::Lattice { eps } => T::lit(round_f(s.as_f64(), eps)? as f64),
        })
    }

    /// `ln |κ(s)|`, finite even where κ itself would overflow.
    pub fn log_abs(&self, s: f64, d_k: usize) -> Result<f64> {
        Ok(match *self {
            KernelSpec::Exp { .. } | KernelSpec::SoftmaxRow { .. } => s / self.tau_for(d_k),
            KernelSpec::Solu { .. } => s.abs().ln() + s / self.tau_for(d_k),
            _ => self.apply(s, d_k)?.abs().ln(),
        })
    }

    /// The tape-side equivalent, for kernels that have one. Round trains with a
    /// straight-through gradient.
    pub fn elem_kernel<T: Scalar>(&self, d_k: usize) -> Result<ElemKernel<T>> {
        let inv_tau = T::lit(1.0 / self.tau_for(d_k));
        match *self {
            KernelSpec::Linear => Ok(ElemKernel::Identity),
            KernelSpec::Exp { .. } => Ok(ElemKernel::Exp { inv_tau }),
            KernelSpec::Relu => Ok(ElemKernel::Relu),
            KernelSpec::Solu { .. } => Ok(ElemKernel::Solu { inv_tau }),
            KernelSpec::Round { decimals } => Ok(ElemKernel::RoundSte { decimals }),
            KernelSpec::SoftmaxRow { .. } | KernelSpec::Lattice { .. } => Err(Error::Unsupported(format!(
                "{} has no elementwise tape form",
                self.name()
            ))),
        }
    }
}

/// κ(x, y) with τ defaulting to √dim.
pub fn kernel_eval<T: Scalar>(spec: &KernelSpec, x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch {
            op: "kernel_eval",
            left: (1, x.len()),
            right: (1, y.len()),
        });
    }
    spec.apply(dot(x, y), x.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_unit_vector() {
        let e = [0.6, 0.8];
        assert!((kernel_eval(&KernelSpec::Linear, &e, &e).unwrap() - 1.0f64).abs() < 1e-15);
    }

    #[test]
    fn exp_of_zero_dot() {
        let v = kernel_eval(&KernelSpec::Exp { tau: Some(1.0) }, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(v, 1.0f64);
    }

    #[test]
    fn round_two_decimals() {
        let v: f64 = KernelSpec::round2().apply(1.236, 4).unwrap();
        assert!((v - 1.24).abs() < 1e-12);
    }

    #[test]
    fn solu_and_relu_values() {
        let s = 0.5f64;
        let v = KernelSpec::Solu { tau: Some(2.0) }.apply(s, 4).unwrap();
        assert!((v - 0.5 * 0.25f64.exp()).abs() < 1e-15);
        assert_eq!(KernelSpec::Relu.apply(-0.3f64, 4).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(kernel_eval(&KernelSpec::Linear, &[1.0f64], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn log_abs_matches_apply() {
        for spec in [
            KernelSpec::exp(),
            KernelSpec::solu(),
            KernelSpec::Linear,
            KernelSpec::Relu,
        ] {
            let s = 0.7f64;
            let direct = spec.apply(s, 16).unwrap().abs().ln();
            assert!((spec.log_abs(s, 16).unwrap() - direct).abs() < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn invalid_tau_rejected() {
        assert!(KernelSpec::Exp { tau: Some(0.0) }.validate().is_err());
        assert!(KernelSpec::Lattice { eps: 0.2 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn kernels_are_symmetric(x in prop::collection::vec(-2.0f64..2.0, 6), y in prop::collection::vec(-2.0f64..2.0, 6)) {
            for spec in [KernelSpec::Linear, KernelSpec::exp(), KernelSpec::Relu, KernelSpec::solu(), KernelSpec::round2(), KernelSpec::softmax()] {
                let a = kernel_eval(&spec, &x, &y).unwrap();
                let b = kernel_eval(&spec, &y, &x).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
