use deltamem_core::kernels::{kernel_eval, snr_closed_form, snr_monte_carlo, KernelSpec};
use deltamem_core::Rng;
use proptest::prelude::*;

fn capacity_kernels() -> [KernelSpec; 4] {
    [
        KernelSpec::Linear,
        KernelSpec::Relu,
        KernelSpec::exp(),
        KernelSpec::solu(),
    ]
}

#[test]
fn monte_carlo_matches_closed_forms() {
    let mut failures = Vec::new();
    for d in [64usize, 256] {
        for n in [16, d / 2, d] {
            for (i, spec) in capacity_kernels().iter().enumerate() {
                let cf = snr_closed_form(spec, n, d).unwrap();
                let mc = snr_monte_carlo(
                    spec,
                    n,
                    d,
                    5000,
                    &mut Rng::new(1000 * d as u64 + 10 * n as u64 + i as u64),
                )
                .unwrap();
                let rel = (mc.inverse_snr / cf - 1.0).abs();
                // exp is also compared on the log scale
                let log_rel = (mc.inverse_snr.ln() - cf.ln()).abs() / cf.ln().abs();
                let ok = match spec {
                    KernelSpec::Exp { .. } => log_rel < 0.15,
                    _ => rel < 0.15,
                };
                if !ok {
                    failures.push(format!(
                        "{} d={d} n={n}: cf {cf:.4e} mc {:.4e}",
                        spec.name(),
                        mc.inverse_snr
                    ));
                }
            }
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn relu_is_half_of_linear() {
    for d in [64usize, 128] {
        let lin = snr_monte_carlo(&KernelSpec::Linear, d, d, 5000, &mut Rng::new(1)).unwrap();
        let relu = snr_monte_carlo(&KernelSpec::Relu, d, d, 5000, &mut Rng::new(2)).unwrap();
        let ratio = relu.inverse_snr / lin.inverse_snr;
        assert!((0.4..=0.6).contains(&ratio), "d={d}: {ratio}");
    }
}

#[test]
fn closed_form_ranking_from_the_derivations() {
    // what the closed forms actually give at d_k = n = 64
    let v: Vec<f64> = [
        KernelSpec::solu(),
        KernelSpec::exp(),
        KernelSpec::Relu,
        KernelSpec::Linear,
    ]
    .iter()
    .map(|s| snr_closed_form(s, 64, 64).unwrap())
    .collect();
    assert!(v.windows(2).all(|w| w[0] < w[1]), "{v:?}");
}

proptest! {
    #[test]
    fn kernels_are_symmetric(seed in any::<u64>(), d in 1usize..16) {
        let mut rng = Rng::new(seed);
        let x = rng.gaussian_vec::<f64>(d, 1.0);
        let y = rng.gaussian_vec::<f64>(d, 1.0);
        for spec in [KernelSpec::Linear, KernelSpec::Relu, KernelSpec::exp(), KernelSpec::solu(), KernelSpec::round2()] {
            prop_assert_eq!(kernel_eval(&spec, &x, &y).unwrap(), kernel_eval(&spec, &y, &x).unwrap());
        }
    }
}
