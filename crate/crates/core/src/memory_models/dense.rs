use super::{MemoryModel, MemoryState, RecurrentSpec, StepInput};
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};
use crate::scalar::Scalar;

/// `(A_t, B_t, C_t)` for the step that would follow `state`.
pub struct Terms<T> {
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub c: Matrix<T>,
}

struct Prepared<T> {
    phi: Vec<T>,
    /// Index of the step being taken (≥ 1).
    t: usize,
}

fn prepare<T: Scalar>(spec: &RecurrentSpec, state: &MemoryState<T>, input: &StepInput<T>) -> Result<Prepared<T>> {
    let (dv, df) = state.s.shape();
    spec.validate(dv)?;
    let phi = spec.feature_map.apply(&input.k)?;
    if phi.len() != df || input.v.len() != dv {
        return Err(Error::DimMismatch {
            op: "memory update",
            left: (dv, df),
            right: (input.v.len(), phi.len()),
        });
    }
    Ok(Prepared { phi, t: state.t + 1 })
}

fn outer<T: Scalar>(v: &[T], k: &[T], scale: T) -> Matrix<T> {
    Matrix::from_fn(v.len(), k.len(), |i, j| scale * v[i] * k[j])
}

fn diag<T: Scalar>(d: impl Iterator<Item = T>) -> Matrix<T> {
    let d: Vec<T> = d.collect();
    Matrix::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { T::zero() })
}

pub fn recurrence_terms<T: Scalar>(
    spec: &RecurrentSpec,
    state: &MemoryState<T>,
    input: &StepInput<T>,
) -> Result<Terms<T>> {
    let p = prepare(spec, state, input)?;
    let (dv, df) = state.s.shape();
    let tf = p.t as f64;
    let decay = (tf - 1.0) / tf;
    let write = outer(&input.v, &p.phi, T::one());
    let lambda = || spec.gate_lambda.iter().map(|&l| T::lit(l));
    let (a, b, c) = match spec.model {
        MemoryModel::LinearAttn | MemoryModel::SoftmaxNoNorm => (Matrix::identity(dv), Matrix::identity(df), write),
        MemoryModel::GatedLinearAttn => (diag(lambda()), Matrix::identity(df), write),
        MemoryModel::DeltaNet | MemoryModel::DeltaNetMomentum => {
            let b = Matrix::identity(df).sub(&outer(&p.phi, &p.phi, T::one()))?;
            let c = match (&state.momentum, spec.model) {
                (Some(prev), MemoryModel::DeltaNetMomentum) => prev.scale(T::lit(spec.momentum_eta)).add(&write)?,
                _ => write,
            };
            (Matrix::identity(dv), b, c)
        }
        MemoryModel::SoftmaxNorm => (
            Matrix::identity(dv).scale(T::lit(decay)),
            Matrix::identity(df),
            write.scale(T::lit(1.0 / tf)),
        ),
        MemoryModel::GatedSoftmaxNorm => (
            diag(lambda().map(|l| l * T::lit(decay))),
            Matrix::identity(df),
            write.scale(T::lit(1.0 / tf)),
        ),
    };
    Ok(Terms { a, b, c })
}

/// One step of `S_t = A_t S_{t−1} B_t + C_t`.
pub fn update<T: Scalar>(spec: &RecurrentSpec, state: &MemoryState<T>, input: &StepInput<T>) -> Result<MemoryState<T>> {
    let Terms { a, b, c } = recurrence_terms(spec, state, input)?;
    let s = a.matmul(&state.s)?.matmul(&b)?.add(&c)?;
    let t = state.t + 1;
    if !s.is_finite() {
        return Err(Error::Explosion { step: t });
    }
    let momentum = (spec.model == MemoryModel::DeltaNetMomentum).then_some(c);
    Ok(MemoryState { s, t, momentum })
}

fn inner<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    Ok(a.hadamard(b)?.sum())
}

/// `½tr(SᵀS) − ½tr(SᵀASB) − tr(CᵀS)` with `S = state.s`.
pub fn general_loss<T: Scalar>(spec: &RecurrentSpec, state: &MemoryState<T>, input: &StepInput<T>) -> Result<T> {
    let Terms { a, b, c } = recurrence_terms(spec, state, input)?;
    let s = &state.s;
    let half = T::lit(0.5);
    let asb = a.matmul(s)?.matmul(&b)?;
    Ok(half * inner(s, s)? - half * inner(s, &asb)? - inner(&c, s)?)
}

fn row_sq_norms<T: Scalar>(s: &Matrix<T>) -> Vec<T> {
    (0..s.rows()).map(|r| dot(s.row(r), s.row(r))).collect()
}

fn tabulated<T: Scalar>(
    spec: &RecurrentSpec,
    state: &MemoryState<T>,
    input: &StepInput<T>,
    printed: bool,
) -> Result<T> {
    let p = prepare(spec, state, input)?;
    let s = &state.s;
    let sk: Vec<T> = (0..s.rows()).map(|r| dot(s.row(r), &p.phi)).collect();
    let read = dot(&sk, &input.v);
    let half = T::lit(0.5);
    let tf = p.t as f64;
    let lambda = |r: usize| T::lit(spec.gate_lambda[r]);
    Ok(match spec.model {
        MemoryModel::LinearAttn | MemoryModel::SoftmaxNoNorm => -read,
        MemoryModel::GatedLinearAttn => {
            let decay: T = row_sq_norms(s)
                .iter()
                .enumerate()
                .map(|(r, &n)| (T::one() - lambda(r)) * n)
                .sum();
            -read + half * decay
        }
        MemoryModel::DeltaNet => half * sk.iter().zip(&input.v).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>(),
        MemoryModel::DeltaNetMomentum => {
            let c = recurrence_terms(spec, state, input)?.c;
            half * dot(&sk, &sk) - inner(&c, s)?
        }
        MemoryModel::SoftmaxNorm => T::lit(1.0 / tf) * (half * inner(s, s)? - read),
        MemoryModel::GatedSoftmaxNorm => {
            let norms = row_sq_norms(s);
            let penalty: T = if printed {
                norms
                    .iter()
                    .enumerate()
                    .map(|(r, &n)| (T::one() - lambda(r)) * n)
                    .sum::<T>()
                    * T::lit(1.0 / tf)
            } else {
                let decay = T::lit((tf - 1.0) / tf);
                norms
                    .iter()
                    .enumerate()
                    .map(|(r, &n)| (T::one() - decay * lambda(r)) * n)
                    .sum::<T>()
            };
            half * penalty - T::lit(1.0 / tf) * read
        }
    })
}

/// Per-step objective whose single unit-rate gradient step is [`update`].
///
/// Rows match the tabulated forms (DeltaNet's exceeds
/// [`general_loss`] by the constant `½‖v‖²`). For the gated softmax row the
/// penalty is `½Σ_r (1 − λ_r (t−1)/t)‖S_r‖²`, which is what its `A_t`
/// implies; the commonly quoted `(1/2t)Σ_r(1 − λ_r)‖S_r‖²` is available from
/// [`table_loss_as_printed`].
pub fn loss_eval<T: Scalar>(spec: &RecurrentSpec, state: &MemoryState<T>, input: &StepInput<T>) -> Result<T> {
    tabulated(spec, state, input, false)
}

/// Like [`loss_eval`] but with the gated softmax penalty as usually printed.
pub fn table_loss_as_printed<T: Scalar>(
    spec: &RecurrentSpec,
    state: &MemoryState<T>,
    input: &StepInput<T>,
) -> Result<T> {
    tabulated(spec, state, input, true)
}

/// Max entrywise gap between [`update`] and `S − ∂L/∂S`, the gradient taken
/// by central differences of `loss` with step `eps`.
pub fn gradient_step_check<T: Scalar>(
    spec: &RecurrentSpec,
    state: &MemoryState<T>,
    input: &StepInput<T>,
    eps: f64,
) -> Result<T> {
    gradient_step_check_with(spec, state, input, eps, loss_eval)
}

/// [`gradient_step_check`] against an arbitrary objective.
pub fn gradient_step_check_with<T: Scalar>(
    spec: &RecurrentSpec,
    state: &MemoryState<T>,
    input: &StepInput<T>,
    eps: f64,
    loss: fn(&RecurrentSpec, &MemoryState<T>, &StepInput<T>) -> Result<T>,
) -> Result<T> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference eps must be positive, got {eps}"
        )));
    }
    let next = update(spec, state, input)?;
    let h = T::lit(eps);
    let mut probe = state.clone();
    let mut worst = T::zero();
    let (rows, cols) = state.s.shape();
    for r in 0..rows {
        for c in 0..cols {
            let x = state.s.get(r, c);
            probe.s.set(r, c, x + h);
            let up = loss(spec, &probe, input)?;
            probe.s.set(r, c, x - h);
            let down = loss(spec, &probe, input)?;
            probe.s.set(r, c, x);
            let grad = (up - down) / (h + h);
            worst = worst.max((next.s.get(r, c) - (x - grad)).abs());
        }
    }
    Ok(worst)
}

/// `(step, ‖S_step‖_F)` from the initial state through every input.
pub fn norm_trace<T: Scalar>(
    spec: &RecurrentSpec,
    init: &MemoryState<T>,
    inputs: &[StepInput<T>],
) -> Result<Vec<(usize, f64)>> {
    let mut state = init.clone();
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push((state.t, state.s.frobenius().as_f64()));
    for input in inputs {
        state = update(spec, &state, input)?;
        out.push((state.t, state.s.frobenius().as_f64()));
    }
    Ok(out)
}
