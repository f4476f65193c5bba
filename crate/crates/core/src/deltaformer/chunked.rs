//! Chunk-wise u computation.
//!
//! Per chunk: the contribution of all earlier positions is an ordinary
//! attention read over the finished `(k, u)` history; the intra-chunk part is a
//! C×C unit-lower system inverted with the log-depth doubling iteration. Under
//! SoftmaxZ the two partial softmaxes are merged through their log-normalisers,
//! `P = αV − β·o_prev / (1 + exp(Z_in − Z_prev))` and
//! `A = softmax_in / (1 + exp(Z_prev − Z_in))`.

use super::{grouped_apply, DeltaFormerConfig, NormalizeU, SequenceBatch};
use crate::error::{Error, Result};
use crate::numerics::{dot, logsumexp, tri_inverse_logdepth, Matrix};
use crate::scalar::Scalar;

pub fn compute_u_chunked<T: Scalar>(cfg: &DeltaFormerConfig, seq: &SequenceBatch<T>) -> Result<Matrix<T>> {
    cfg.validate()?;
    if cfg.normalize_u == NormalizeU::RmsNorm {
        return Err(Error::Unsupported(
            "RmsNorm on u is only defined for the sequential path".into(),
        ));
    }
    let c = cfg.chunk_size;
    let t = seq.len();
    let padded = t.div_ceil(c) * c;
    let w = seq.write_keys(cfg)?.pad_rows(padded);
    let k = seq.k.pad_rows(padded);
    let v = seq.v.pad_rows(padded);
    let d = k.cols();
    let scale = if cfg.scale_dots {
        T::lit(1.0 / (d as f64).sqrt())
    } else {
        T::one()
    };
    let (alpha, beta) = (T::lit(cfg.alpha), T::lit(cfg.beta));
    let softmax = cfg.normalize_u == NormalizeU::SoftmaxZ;
    let inv_tau = T::lit(1.0 / cfg.kappa1.tau().unwrap_or(1.0));

    let mut u = Matrix::zeros(padded, v.cols());
    let mut prev_scores = Vec::with_capacity(padded);
    let mut in_scores = Vec::with_capacity(c);
    for start in (0..padded).step_by(c) {
        let mut p = Matrix::zeros(c, v.cols());
        let mut a = Matrix::zeros(c, c);
        for r in 0..c {
            let row = start + r;
            let wr = w.row(row);
            let alpha_v = v.row(row).iter().map(|&x| alpha * x);
            for (o, x) in p.row_mut(r).iter_mut().zip(alpha_v) {
                *o = x;
            }
            if softmax {
                prev_scores.clear();
                prev_scores.extend((0..start).map(|j| dot(k.row(j), wr) * scale * inv_tau));
                in_scores.clear();
                in_scores.extend((start..row).map(|j| dot(k.row(j), wr) * scale * inv_tau));
                let z_prev = logsumexp(&prev_scores);
                let z_in = logsumexp(&in_scores);
                if start > 0 {
                    // weight of the past block: exp(Z_prev) / (exp(Z_prev) + exp(Z_in))
                    let share = T::one() / (T::one() + (z_in - z_prev).exp());
                    let prow = p.row_mut(r);
                    for (j, &s) in prev_scores.iter().enumerate() {
                        let wgt = beta * share * (s - z_prev).exp();
                        for (o, &x) in prow.iter_mut().zip(u.row(j)) {
                            *o -= wgt * x;
                        }
                    }
                }
                if r > 0 {
                    let share = T::one() / (T::one() + (z_prev - z_in).exp());
                    for (j, &s) in in_scores.iter().enumerate() {
                        a.set(r, j, beta * share * (s - z_in).exp());
                    }
                }
            } else {
                let prow = p.row_mut(r);
                for j in 0..start {
                    let wgt = beta * grouped_apply(cfg, dot(k.row(j), wr) * scale)?;
                    for (o, &x) in prow.iter_mut().zip(u.row(j)) {
                        *o -= wgt * x;
                    }
                }
                for j in 0..r {
                    a.set(r, j, beta * grouped_apply(cfg, dot(k.row(start + j), wr) * scale)?);
                }
            }
        }
        let inv = tri_inverse_logdepth(&a)?;
        let uc = inv.matmul(&p)?;
        for r in 0..c {
            let urow = uc.row(r);
            if urow.iter().any(|x| !x.is_finite()) {
                return Err(Error::Explosion { step: start + r });
            }
            u.row_mut(start + r).copy_from_slice(urow);
        }
    }
    Ok(u.slice_rows(0, t))
}
