//! DeltaFormer: softmax-style recall over delta-rule derived values.
//!
//! `u_t = α v_t − β Σ_{i<t} κ₁(k_i, w_t) u_i` and `o_t = Σ_{i≤t} κ₂(k_i, q_t) u_i`.
//! Three ways to get `U` are provided: a step-by-step recurrence, one
//! unit-lower triangular solve `U = (I + A)⁻¹ αV`, and a chunked variant that
//! inverts small diagonal blocks with the log-depth doubling iteration.
//!
//! Dot products are multiplied by `1/√d` when `scale_dots` is set; that factor
//! is the temperature, so kernels inside this module default to τ = 1.

mod chunked;
mod grouped;
mod naive;

pub use chunked::compute_u_chunked;
pub use grouped::{fit_round_coefficients, grouped_kappa1};
pub use naive::{compute_u_naive, KuCache};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::numerics::{dot, tri_solve_unit_lower, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WSource {
    SameAsKey,
    SeparateProjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeU {
    None,
    /// κ₁ normalised over the strict past, `Z₁ = Σ_{i<t} exp(s_{ti})`.
    SoftmaxZ,
    /// Each `u_t` rescaled to unit RMS (sequential path only).
    RmsNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaFormerConfig {
    pub kappa1: KernelSpec,
    pub kappa2: KernelSpec,
    pub alpha: f64,
    pub beta: f64,
    pub w_source: WSource,
    /// `a_1..a_G`: κ₁ becomes `Σ_j a_j κ(k, j·w)`.
    pub group_weights: Vec<f64>,
    pub normalize_u: NormalizeU,
    pub chunk_size: usize,
    pub scale_dots: bool,
}

impl Default for DeltaFormerConfig {
    fn default() -> Self {
        Self {
            kappa1: KernelSpec::softmax(),
            kappa2: KernelSpec::softmax(),
            alpha: 1.0,
            beta: 1.0,
            w_source: WSource::SameAsKey,
            group_weights: vec![1.0],
            normalize_u: NormalizeU::SoftmaxZ,
            chunk_size: 32,
            scale_dots: true,
        }
    }
}

impl DeltaFormerConfig {
    /// Unnormalised κ₁ / κ₂ pair with no dot scaling, as used by the exact
    /// tracking construction.
    pub fn unnormalized(kappa1: KernelSpec, kappa2: KernelSpec) -> Self {
        Self {
            kappa1,
            kappa2,
            normalize_u: NormalizeU::None,
            scale_dots: false,
            ..Self::default()
        }
    }

    pub fn group_heads(&self) -> usize {
        self.group_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.kappa1.validate()?;
        self.kappa2.validate()?;
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::InvalidConfig("alpha and beta must be finite".into()));
        }
        if self.group_weights.is_empty() {
            return Err(Error::InvalidConfig("group_weights must not be empty".into()));
        }
        if !self.chunk_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "chunk_size {} is not a power of two",
                self.chunk_size
            )));
        }
        let softmax_like = matches!(self.kappa1, KernelSpec::SoftmaxRow { .. } | KernelSpec::Exp { .. });
        match self.normalize_u {
            NormalizeU::SoftmaxZ if !softmax_like => {
                return Err(Error::InvalidConfig(format!(
                    "SoftmaxZ normalisation needs an exp-type kappa1, got {}",
                    self.kappa1.name()
                )))
            }
            NormalizeU::SoftmaxZ if self.group_heads() != 1 => {
                return Err(Error::InvalidConfig(
                    "SoftmaxZ normalisation supports a single group head".into(),
                ))
            }
            NormalizeU::None | NormalizeU::RmsNorm if matches!(self.kappa1, KernelSpec::SoftmaxRow { .. }) => {
                return Err(Error::InvalidConfig(
                    "a SoftmaxRow kappa1 requires SoftmaxZ normalisation".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    fn dot_scale<T: Scalar>(&self, d: usize) -> T {
        if self.scale_dots {
            T::lit(1.0 / (d as f64).sqrt())
        } else {
            T::one()
        }
    }
}

/// q, k, v (and optionally separate write keys w), one row per position.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch<T> {
    pub q: Matrix<T>,
    pub k: Matrix<T>,
    pub v: Matrix<T>,
    pub w: Option<Matrix<T>>,
}

impl<T: Scalar> SequenceBatch<T> {
    pub fn new(q: Matrix<T>, k: Matrix<T>, v: Matrix<T>) -> Result<Self> {
        let s = Self { q, k, v, w: None };
        s.check()?;
        Ok(s)
    }

    pub fn with_w(mut self, w: Matrix<T>) -> Result<Self> {
        self.w = Some(w);
        self.check()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.k.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self) -> Result<()> {
        let t = self.k.rows();
        let mut shapes = vec![("q", &self.q), ("v", &self.v)];
        if let Some(w) = &self.w {
            shapes.push(("w", w));
        }
        for (_, m) in &shapes {
            if m.rows() != t {
                return Err(Error::DimMismatch {
                    op: "SequenceBatch",
                    left: self.k.shape(),
                    right: m.shape(),
                });
            }
        }
        if self.q.cols() != self.k.cols() || self.w.as_ref().is_some_and(|w| w.cols() != self.k.cols()) {
            return Err(Error::DimMismatch {
                op: "SequenceBatch",
                left: self.k.shape(),
                right: self.q.shape(),
            });
        }
        Ok(())
    }

    /// The write keys `w` actually used under `cfg`.
    pub fn write_keys(&self, cfg: &DeltaFormerConfig) -> Result<&Matrix<T>> {
        match cfg.w_source {
            WSource::SameAsKey => Ok(&self.k),
            WSource::SeparateProjection => self
                .w
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("SeparateProjection needs w".into())),
        }
    }
}

/// `β·κ₁(k_i, w)` for every cached key `i`, normalised per `cfg`. This is the
/// single definition of the erase coefficients; all three solvers use it.
pub(crate) fn erase_row<T: Scalar>(cfg: &DeltaFormerConfig, keys: &[&[T]], w: &[T], out: &mut Vec<T>) -> Result<()> {
    out.clear();
    let d = w.len();
    let scale: T = cfg.dot_scale(d);
    let beta = T::lit(cfg.beta);
    match cfg.normalize_u {
        NormalizeU::SoftmaxZ => {
            let inv_tau = T::lit(1.0 / cfg.kappa1.tau().unwrap_or(1.0));
            for k in keys {
                out.push(dot(k, w) * scale * inv_tau);
            }
            if out.is_empty() {
                return Ok(());
            }
            let m = out.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for x in out.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in out.iter_mut() {
                *x = beta * *x / z;
            }
        }
        NormalizeU::None | NormalizeU::RmsNorm => {
            for k in keys {
                let s = dot(k, w) * scale;
                out.push(beta * grouped_apply(cfg, s)?);
            }
        }
    }
    Ok(())
}

#[inline]
fn grouped_apply<T: Scalar>(cfg: &DeltaFormerConfig, s: T) -> Result<T> {
    if cfg.group_weights.len() == 1 && cfg.group_weights[0] == 1.0 {
        return cfg.kappa1.apply(s, 1);
    }
    let mut acc = T::zero();
    for (j, &a) in cfg.group_weights.iter().enumerate() {
        acc += T::lit(a) * cfg.kappa1.apply(T::lit((j + 1) as f64) * s, 1)?;
    }
    Ok(acc)
}

/// Strictly lower `A` with `A[t,i] = β·κ₁(k_i, w_t)` (normalised per `cfg`).
pub fn erase_matrix<T: Scalar>(cfg: &DeltaFormerConfig, seq: &SequenceBatch<T>) -> Result<Matrix<T>> {
    cfg.validate()?;
    let w = seq.write_keys(cfg)?;
    let t = seq.len();
    let keys: Vec<&[T]> = (0..t).map(|i| seq.k.row(i)).collect();
    let mut a = Matrix::zeros(t, t);
    let mut row = Vec::with_capacity(t);
    for i in 1..t {
        erase_row(cfg, &keys[..i], w.row(i), &mut row)?;
        a.row_mut(i)[..i].copy_from_slice(&row);
    }
    Ok(a)
}

fn first_bad_row<T: Scalar>(m: &Matrix<T>) -> Option<usize> {
    (0..m.rows()).find(|&i| m.row(i).iter().any(|x| !x.is_finite()))
}

/// `U = (I + A)⁻¹ αV` in one triangular solve.
pub fn compute_u_inverse<T: Scalar>(cfg: &DeltaFormerConfig, seq: &SequenceBatch<T>) -> Result<Matrix<T>> {
    if cfg.normalize_u == NormalizeU::RmsNorm {
        return Err(Error::Unsupported(
            "RmsNorm on u is only defined for the sequential path".into(),
        ));
    }
    let a = erase_matrix(cfg, seq)?;
    if let Some(step) = first_bad_row(&a) {
        return Err(Error::Explosion { step });
    }
    let u = tri_solve_unit_lower(&a, &seq.v.scale(T::lit(cfg.alpha)))?;
    match first_bad_row(&u) {
        Some(step) => Err(Error::Explosion { step }),
        None => Ok(u),
    }
}

/// `o_t = Σ_{i≤t} κ₂(k_i, q_t) u_i`, softmax-normalised for a SoftmaxRow κ₂.
pub fn readout<T: Scalar>(cfg: &DeltaFormerConfig, seq: &SequenceBatch<T>, u: &Matrix<T>) -> Result<Matrix<T>> {
    if u.rows() != seq.len() {
        return Err(Error::DimMismatch {
            op: "readout",
            left: seq.k.shape(),
            right: u.shape(),
        });
    }
    let t = seq.len();
    let mut out = Matrix::zeros(t, u.cols());
    let mut weights = Vec::with_capacity(t);
    for i in 0..t {
        readout_weights(cfg, (0..=i).map(|j| seq.k.row(j)), seq.q.row(i), &mut weights)?;
        let row = out.row_mut(i);
        for (j, &wgt) in weights.iter().enumerate() {
            for (o, &x) in row.iter_mut().zip(u.row(j)) {
                *o += wgt * x;
            }
        }
    }
    Ok(out)
}

pub(crate) fn readout_weights<'a, T: Scalar>(
    cfg: &DeltaFormerConfig,
    keys: impl Iterator<Item = &'a [T]>,
    q: &[T],
    out: &mut Vec<T>,
) -> Result<()> {
    out.clear();
    let scale: T = cfg.dot_scale(q.len());
    match cfg.kappa2 {
        KernelSpec::SoftmaxRow { tau } => {
            let inv_tau = T::lit(1.0 / tau.unwrap_or(1.0));
            out.extend(keys.map(|k| dot(k, q) * scale * inv_tau));
            crate::numerics::softmax::softmax_in_place(out);
        }
        spec => {
            for k in keys {
                out.push(spec.apply(dot(k, q) * scale, 1)?);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
