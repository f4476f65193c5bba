//! Inverse retrieval SNR: closed forms and Monte-Carlo estimates.
//!
//! For N i.i.d. standard-Gaussian keys in dimension d_k, recalling key i gives
//! signal κ(k_i, k_i) and noise Σ_{j≠i} κ(k_j, k_i) v_j. The ratio estimator
//! targets `(N−1)·E[κ²(k_j, k_i) | k_i] / κ²(k_i, k_i)`. Given k_i the dot
//! product k_jᵀk_i is exactly N(0, ‖k_i‖²), so the conditional expectation is
//! averaged over [`INNER_SAMPLES`] scalar draws rather than over only N−1
//! materialised keys, whose sum is badly skewed for exp-type kernels. For
//! those kernels the draws are also exponentially tilted (importance
//! sampling) towards the region that dominates E[κ²].
//!
//! Across trials (draws of k_i) the ratio is log-normal-like for Exp and SoLU
//! and the closed forms track its typical value, so those two report the
//! geometric mean; Linear and ReLU use the arithmetic mean.

use super::KernelSpec;
use crate::error::{Error, Result};
use crate::numerics::{dot, logsumexp, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrEstimate {
    pub inverse_snr: f64,
    pub stderr: f64,
    pub trials: usize,
    /// True when `inverse_snr` is a geometric mean.
    pub log_space: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    /// Expected squared kernel over squared self-kernel.
    #[default]
    Ratio,
    /// Samples values too and measures `‖r‖² / (c²‖v_i‖²)` on an actual recall.
    FullRecall,
}

/// Closed-form inverse SNR.
///
/// SoLU uses the general-τ expression `N(1 + 4d/τ²)/d · exp(−2d(τ−1)/τ²)`.
pub fn snr_closed_form(spec: &KernelSpec, n: usize, d_k: usize) -> Result<f64> {
    if n == 0 || d_k == 0 {
        return Err(Error::InvalidConfig("n and d_k must be at least 1".into()));
    }
    spec.validate()?;
    let (n, d) = (n as f64, d_k as f64);
    let tau = spec.tau_for(d_k);
    match spec {
        KernelSpec::Linear => Ok(n / d),
        KernelSpec::Relu => Ok(n / (2.0 * d)),
        KernelSpec::Exp { .. } => Ok(n / (2.0 * (tau - 1.0) / (tau * tau) * d).exp()),
        KernelSpec::Solu { .. } => {
            Ok(n * (1.0 + 4.0 * d / (tau * tau)) / d * (-2.0 * d * (tau - 1.0) / (tau * tau)).exp())
        }
        other => Err(Error::Unsupported(format!("no closed-form SNR for {}", other.name()))),
    }
}

/// The SoLU expression specialised to τ = √d_k: `5N·e² / (d_k·e^(2√d_k))`.
pub fn solu_closed_form_at_sqrt_dk(n: usize, d_k: usize) -> f64 {
    let d = d_k as f64;
    5.0 * n as f64 * (2.0 - 2.0 * d.sqrt()).exp() / d
}

/// Minimum number of draws behind each conditional expectation.
pub const INNER_SAMPLES: usize = 4096;

fn uses_log_space(spec: &KernelSpec) -> bool {
    matches!(spec, KernelSpec::Exp { .. } | KernelSpec::Solu { .. })
}

pub fn snr_monte_carlo(spec: &KernelSpec, n: usize, d_k: usize, trials: usize, rng: &mut Rng) -> Result<SnrEstimate> {
    snr_monte_carlo_with(spec, n, d_k, trials, rng, Estimator::Ratio)
}

pub fn snr_monte_carlo_with(
    spec: &KernelSpec,
    n: usize,
    d_k: usize,
    trials: usize,
    rng: &mut Rng,
    estimator: Estimator,
) -> Result<SnrEstimate> {
    if trials < 100 {
        return Err(Error::InvalidConfig(format!("need at least 100 trials, got {trials}")));
    }
    if n == 0 || d_k == 0 {
        return Err(Error::InvalidConfig("n and d_k must be at least 1".into()));
    }
    spec.validate()?;
    if matches!(spec, KernelSpec::Round { .. } | KernelSpec::Lattice { .. }) {
        return Err(Error::Unsupported(format!("SNR estimate for {}", spec.name())));
    }
    let log_space = uses_log_space(spec);
    if n == 1 {
        return Ok(SnrEstimate {
            inverse_snr: 0.0,
            stderr: 0.0,
            trials,
            log_space,
        });
    }
    let mut signal = vec![0.0; d_k];
    let mut noise = vec![0.0; d_k];
    let mut samples = Vec::with_capacity(trials);
    let mut terms = Vec::with_capacity(INNER_SAMPLES.max(n));
    for _ in 0..trials {
        fill_gaussian(rng, &mut signal);
        let self_dot = dot(&signal, &signal);
        let log_signal_sq = 2.0 * spec.log_abs(self_dot, d_k)?;
        let log_ratio = match estimator {
            Estimator::Ratio => {
                let sigma_sq = self_dot;
                let sigma = sigma_sq.sqrt();
                let shift = tilt(spec, sigma_sq, d_k);
                let m = INNER_SAMPLES.max(n - 1);
                terms.clear();
                for _ in 0..m {
                    let x = sigma * rng.gaussian() + shift;
                    let log_weight = (shift * shift / 2.0 - shift * x) / sigma_sq;
                    terms.push(2.0 * spec.log_abs(x, d_k)? + log_weight);
                }
                ((n - 1) as f64).ln() + logsumexp(&terms) - (m as f64).ln() - log_signal_sq
            }
            Estimator::FullRecall => {
                let mut recall = ValueRecall::new(rng, d_k);
                for _ in 1..n {
                    fill_gaussian(rng, &mut noise);
                    let s = dot(&noise, &signal);
                    recall.add_noise(rng, spec.apply(s, d_k)?, spec.log_abs(s, d_k)?);
                }
                recall.log_ratio(log_signal_sq)
            }
        };
        samples.push(if log_space { log_ratio } else { log_ratio.exp() });
    }
    let m = trials as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    let se = (var / m).sqrt();
    Ok(if log_space {
        let gm = mean.exp();
        SnrEstimate {
            inverse_snr: gm,
            stderr: gm * se,
            trials,
            log_space,
        }
    } else {
        SnrEstimate {
            inverse_snr: mean,
            stderr: se,
            trials,
            log_space,
        }
    })
}

/// Mean of the importance distribution `N(shift, σ²)` for the inner draws.
/// For exp-type kernels `κ²(x) ∝ e^{2x/τ}` tilts `N(0, σ²)` to mean `2σ²/τ`;
/// sampling there keeps the weighted terms bounded where plain draws would
/// rarely reach the region that dominates the expectation.
fn tilt(spec: &KernelSpec, sigma_sq: f64, d_k: usize) -> f64 {
    if uses_log_space(spec) {
        2.0 * sigma_sq / spec.tau_for(d_k)
    } else {
        0.0
    }
}

fn fill_gaussian(rng: &mut Rng, buf: &mut [f64]) {
    for x in buf.iter_mut() {
        *x = rng.gaussian();
    }
}

/// Accumulates an explicit recall residual `Σ_{j≠i} κ_j v_j` against `v_i`.
/// Kernel weights are rescaled by the running maximum so exp-type kernels
/// cannot overflow.
struct ValueRecall {
    target: Vec<f64>,
    residual: Vec<f64>,
    log_scale: f64,
}

impl ValueRecall {
    fn new(rng: &mut Rng, d_v: usize) -> Self {
        let mut target = vec![0.0; d_v];
        fill_gaussian(rng, &mut target);
        Self {
            target,
            residual: vec![0.0; d_v],
            log_scale: f64::NEG_INFINITY,
        }
    }

    fn add_noise(&mut self, rng: &mut Rng, k: f64, log_k: f64) {
        if log_k > self.log_scale {
            let shrink = (self.log_scale - log_k).exp();
            for r in &mut self.residual {
                *r *= shrink;
            }
            self.log_scale = log_k;
        }
        let w = k.signum() * (log_k - self.log_scale).exp();
        for r in &mut self.residual {
            *r += w * rng.gaussian();
        }
    }

    fn log_ratio(&self, log_signal_sq: f64) -> f64 {
        let num = dot(&self.residual, &self.residual).ln() + 2.0 * self.log_scale;
        num - log_signal_sq - dot(&self.target, &self.target).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRow {
    pub n: usize,
    pub closed_form: Option<f64>,
    pub mc_mean: f64,
    pub mc_stderr: f64,
}

/// One row per `n`; each row draws from its own split stream.
pub fn capacity_curve(
    spec: &KernelSpec,
    d_k: usize,
    n_values: &[usize],
    trials: usize,
    rng: &Rng,
) -> Result<Vec<CapacityRow>> {
    if n_values.is_empty() {
        return Err(Error::InvalidConfig("n_values must not be empty".into()));
    }
    n_values
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let closed_form = match snr_closed_form(spec, n, d_k) {
                Ok(v) => Some(v),
                Err(Error::Unsupported(_)) => None,
                Err(e) => return Err(e),
            };
            let est = snr_monte_carlo(spec, n, d_k, trials, &mut rng.split(i as u64))?;
            Ok(CapacityRow {
                n,
                closed_form,
                mc_mean: est.inverse_snr,
                mc_stderr: est.stderr,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tilted_exp_terms_are_constant() {
        // under the tilt every weighted exp term equals E[e^{2x/τ}] = e^{2σ²/τ²}
        let spec = KernelSpec::exp();
        let (sigma_sq, d) = (70.0, 64);
        let shift = tilt(&spec, sigma_sq, d);
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let x = sigma_sq.sqrt() * rng.gaussian() + shift;
            let term = 2.0 * spec.log_abs(x, d).unwrap() + (shift * shift / 2.0 - shift * x) / sigma_sq;
            assert!((term - 2.0 * sigma_sq / 64.0).abs() < 1e-9);
        }
        assert_eq!(tilt(&KernelSpec::Relu, sigma_sq, d), 0.0);
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(snr_closed_form(&KernelSpec::Linear, 8, 4).unwrap(), 2.0);
        assert_eq!(snr_closed_form(&KernelSpec::Relu, 8, 4).unwrap(), 1.0);
        let exp1 = KernelSpec::Exp { tau: Some(1.0) };
        for d in [1, 7, 64] {
            assert_eq!(snr_closed_form(&exp1, 13, d).unwrap(), 13.0);
        }
        let e = snr_closed_form(&KernelSpec::exp(), 16, 64).unwrap();
        assert!((e - 16.0 / 14f64.exp()).abs() < 1e-18);
    }

    #[test]
    fn solu_general_form_specialises() {
        for d in [16, 64, 256] {
            let general = snr_closed_form(&KernelSpec::solu(), 32, d).unwrap();
            let special = solu_closed_form_at_sqrt_dk(32, d);
            assert!((general / special - 1.0).abs() < 1e-12);
            // the "5" is (1 + 4d/τ²) at τ² = d
            let five = 5.0 * 32.0 / d as f64 * (2.0 - 2.0 * (d as f64).sqrt()).exp();
            assert!((general / five - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unsupported_kinds() {
        assert!(matches!(
            snr_closed_form(&KernelSpec::round2(), 4, 4),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            snr_closed_form(&KernelSpec::softmax(), 4, 4),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn single_key_has_no_noise() {
        let mut rng = Rng::new(1);
        for spec in [
            KernelSpec::Linear,
            KernelSpec::exp(),
            KernelSpec::Relu,
            KernelSpec::solu(),
        ] {
            assert_eq!(snr_monte_carlo(&spec, 1, 16, 100, &mut rng).unwrap().inverse_snr, 0.0);
        }
    }

    #[test]
    fn too_few_trials() {
        assert!(snr_monte_carlo(&KernelSpec::Linear, 4, 4, 99, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn linear_and_relu_near_closed_form() {
        let mut rng = Rng::new(2);
        let lin = snr_monte_carlo(&KernelSpec::Linear, 64, 256, 2000, &mut rng).unwrap();
        assert!((lin.inverse_snr / 0.25 - 1.0).abs() < 0.1, "{lin:?}");
        let relu = snr_monte_carlo(&KernelSpec::Relu, 64, 256, 2000, &mut rng).unwrap();
        assert!((relu.inverse_snr / 0.125 - 1.0).abs() < 0.1, "{relu:?}");
    }

    #[test]
    fn full_recall_agrees_with_ratio() {
        let mut rng = Rng::new(3);
        for spec in [KernelSpec::Linear, KernelSpec::exp()] {
            let a = snr_monte_carlo_with(&spec, 32, 64, 3000, &mut rng, Estimator::Ratio).unwrap();
            let b = snr_monte_carlo_with(&spec, 32, 64, 3000, &mut rng, Estimator::FullRecall).unwrap();
            let rel = (a.inverse_snr.ln() - b.inverse_snr.ln()).abs();
            assert!(rel < 0.35, "{spec:?}: {a:?} vs {b:?}");
        }
    }

    #[test]
    fn stderr_shrinks_with_trials() {
        let a = snr_monte_carlo(&KernelSpec::Linear, 16, 32, 400, &mut Rng::new(4)).unwrap();
        let b = snr_monte_carlo(&KernelSpec::Linear, 16, 32, 6400, &mut Rng::new(4)).unwrap();
        let ratio = a.stderr / b.stderr;
        assert!(ratio > 2.5 && ratio < 6.0, "{ratio}");
    }

    #[test]
    fn capacity_curve_columns() {
        let rows = capacity_curve(&KernelSpec::Linear, 64, &[16, 32, 64], 200, &Rng::new(5)).unwrap();
        let cf: Vec<f64> = rows.iter().map(|r| r.closed_form.unwrap()).collect();
        assert_eq!(cf, vec![0.25, 0.5, 1.0]);
        let one = capacity_curve(&KernelSpec::exp(), 64, &[1], 100, &Rng::new(5)).unwrap();
        assert_eq!(one[0].mc_mean, 0.0);
        assert!(capacity_curve(&KernelSpec::Linear, 4, &[], 100, &Rng::new(0)).is_err());
    }
}
