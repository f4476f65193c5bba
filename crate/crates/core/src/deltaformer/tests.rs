use super::*;
use crate::numerics::Rng;

fn random_seq(rng: &mut Rng, t: usize, d: usize, key_std: f64) -> SequenceBatch<f64> {
    let q = rng.gaussian_matrix(t, d, 1.0);
    let k = rng.gaussian_matrix(t, d, key_std);
    let v = rng.gaussian_matrix(t, d, 1.0);
    SequenceBatch::new(q, k, v).unwrap()
}

#[test]
fn single_step_is_alpha_v() {
    let mut rng = Rng::new(1);
    let seq = random_seq(&mut rng, 1, 4, 1.0);
    let cfg = DeltaFormerConfig {
        alpha: 0.5,
        ..Default::default()
    };
    let u = compute_u_naive(&cfg, &seq).unwrap();
    assert_eq!(u, seq.v.scale(0.5));
}

#[test]
fn orthogonal_keys_leave_values_untouched() {
    let k = Matrix::<f64>::identity(4);
    let v = Rng::new(2).gaussian_matrix(4, 3, 1.0);
    let seq = SequenceBatch::new(k.clone(), k, v.clone()).unwrap();
    let cfg = DeltaFormerConfig::unnormalized(KernelSpec::Linear, KernelSpec::Linear);
    assert_eq!(compute_u_naive(&cfg, &seq).unwrap(), v);
    assert_eq!(compute_u_inverse(&cfg, &seq).unwrap(), v);
}

#[test]
fn swap_key_gives_difference_of_values() {
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    let k = Matrix::from_rows(&[e1.clone(), e2.clone(), vec![1.0, -1.0]]).unwrap();
    let v = Matrix::from_rows(&[vec![3.0, 0.5], vec![-1.0, 2.0], vec![0.0, 0.0]]).unwrap();
    let seq = SequenceBatch::new(k.clone(), k, v).unwrap();
    let cfg = DeltaFormerConfig::unnormalized(KernelSpec::round2(), KernelSpec::round2());
    let u = compute_u_naive(&cfg, &seq).unwrap();
    for j in 0..2 {
        assert_eq!(u.get(2, j), -u.get(0, j) + u.get(1, j));
    }
}

#[test]
fn zero_erase_gives_alpha_v() {
    let seq = random_seq(&mut Rng::new(3), 5, 3, 1.0);
    let cfg = DeltaFormerConfig {
        beta: 0.0,
        alpha: 2.0,
        ..DeltaFormerConfig::unnormalized(KernelSpec::Linear, KernelSpec::Linear)
    };
    assert_eq!(compute_u_inverse(&cfg, &seq).unwrap(), seq.v.scale(2.0));
}

#[test]
fn inverse_matches_naive_linear() {
    let seq = random_seq(&mut Rng::new(4), 32, 8, 0.1);
    let cfg = DeltaFormerConfig::unnormalized(KernelSpec::Linear, KernelSpec::Linear);
    let a = compute_u_naive(&cfg, &seq).unwrap();
    let b = compute_u_inverse(&cfg, &seq).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
}

#[test]
fn inverse_and_chunked_match_naive_softmax() {
    let seq = random_seq(&mut Rng::new(5), 64, 8, 1.0);
    let cfg = DeltaFormerConfig {
        chunk_size: 16,
        ..Default::default()
    };
    let a = compute_u_naive(&cfg, &seq).unwrap();
    assert!(a.max_abs_diff(&compute_u_inverse(&cfg, &seq).unwrap()).unwrap() < 1e-5);
    assert!(a.max_abs_diff(&compute_u_chunked(&cfg, &seq).unwrap()).unwrap() < 1e-5);
}

#[test]
fn chunk_size_extremes() {
    let seq = random_seq(&mut Rng::new(6), 16, 4, 1.0);
    for chunk in [1, 16] {
        let cfg = DeltaFormerConfig {
            chunk_size: chunk,
            ..Default::default()
        };
        let naive = compute_u_naive(&cfg, &seq).unwrap();
        let chunked = compute_u_chunked(&cfg, &seq).unwrap();
        assert!(naive.max_abs_diff(&chunked).unwrap() < 1e-10, "C={chunk}");
    }
}

#[test]
fn chunked_pads_ragged_lengths() {
    let seq = random_seq(&mut Rng::new(7), 21, 4, 0.2);
    let cfg = DeltaFormerConfig {
        chunk_size: 8,
        ..DeltaFormerConfig::unnormalized(KernelSpec::Relu, KernelSpec::softmax())
    };
    let naive = compute_u_naive(&cfg, &seq).unwrap();
    let chunked = compute_u_chunked(&cfg, &seq).unwrap();
    assert_eq!(chunked.rows(), 21);
    assert!(naive.max_abs_diff(&chunked).unwrap() < 1e-10);
}

#[test]
fn readout_single_position() {
    let seq = random_seq(&mut Rng::new(8), 1, 4, 1.0);
    let cfg = DeltaFormerConfig::default();
    let u = compute_u_naive(&cfg, &seq).unwrap();
    assert_eq!(readout(&cfg, &seq, &u).unwrap(), u);
}

#[test]
fn rmsnorm_only_sequential() {
    let seq = random_seq(&mut Rng::new(9), 4, 4, 1.0);
    let cfg = DeltaFormerConfig {
        normalize_u: NormalizeU::RmsNorm,
        ..DeltaFormerConfig::unnormalized(KernelSpec::Linear, KernelSpec::softmax())
    };
    let u = compute_u_naive(&cfg, &seq).unwrap();
    for i in 0..4 {
        let ms = u.row(i).iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!((ms - 1.0).abs() < 1e-9);
    }
    assert!(matches!(compute_u_inverse(&cfg, &seq), Err(Error::Unsupported(_))));
    assert!(matches!(compute_u_chunked(&cfg, &seq), Err(Error::Unsupported(_))));
}

#[test]
fn config_validation() {
    let bad = DeltaFormerConfig {
        normalize_u: NormalizeU::None,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = DeltaFormerConfig {
        kappa1: KernelSpec::Linear,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = DeltaFormerConfig {
        chunk_size: 12,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn unnormalized_exp_explodes() {
    let mut rng = Rng::new(10);
    let seq = random_seq(&mut rng, 64, 8, 30.0);
    let cfg = DeltaFormerConfig::unnormalized(KernelSpec::Exp { tau: Some(1.0) }, KernelSpec::softmax());
    assert!(matches!(compute_u_naive(&cfg, &seq), Err(Error::Explosion { .. })));
    assert!(matches!(compute_u_inverse(&cfg, &seq), Err(Error::Explosion { .. })));
}

#[test]
fn separate_write_keys() {
    let mut rng = Rng::new(11);
    let seq = random_seq(&mut rng, 12, 4, 1.0);
    let w = rng.gaussian_matrix(12, 4, 1.0);
    let seq = seq.with_w(w).unwrap();
    let cfg = DeltaFormerConfig {
        w_source: WSource::SeparateProjection,
        chunk_size: 4,
        ..Default::default()
    };
    let a = compute_u_naive(&cfg, &seq).unwrap();
    assert!(a.max_abs_diff(&compute_u_inverse(&cfg, &seq).unwrap()).unwrap() < 1e-10);
    assert!(a.max_abs_diff(&compute_u_chunked(&cfg, &seq).unwrap()).unwrap() < 1e-10);
}

#[test]
fn round_coefficients_interpolate() {
    let a = fit_round_coefficients(4).unwrap();
    for &x in &grouped::ROUND_LATTICE {
        let s: f64 = a
            .iter()
            .enumerate()
            .map(|(j, aj)| aj * ((j + 1) as f64 * x).exp())
            .sum();
        assert!((s - x).abs() < 1e-9, "x={x}: {s}");
    }
    assert!(a.iter().sum::<f64>().abs() < 1e-9);
    assert!(fit_round_coefficients(3).is_err());
}

#[test]
fn grouped_kernel_cases() {
    let k = [0.3, -0.2];
    let w = [0.5, 0.1];
    let base = KernelSpec::Exp { tau: Some(1.0) };
    let single: f64 = grouped_kappa1(&[1.0], &base, &k, &w).unwrap();
    assert_eq!(single, kernel_value(&base, &k, &w));
    let a = fit_round_coefficients(4).unwrap();
    for &x in &grouped::ROUND_LATTICE {
        let v: f64 = grouped_kappa1(&a, &base, &[x], &[1.0]).unwrap();
        assert!((v - x).abs() < 1e-8);
    }
}

fn kernel_value(spec: &KernelSpec, k: &[f64], w: &[f64]) -> f64 {
    crate::kernels::kernel_eval(spec, k, w).unwrap()
}
