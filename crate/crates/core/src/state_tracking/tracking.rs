use super::keys::KeyEnsemble;
use super::trace::{permutation_oracle, SwapTrace};
use crate::deltaformer::{DeltaFormerConfig, KuCache, SequenceBatch};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::numerics::Matrix;

/// κ₁ = κ₂ used for a tracking run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackingKernel {
    /// Lattice rounding with the ensemble's ε as guard.
    Lattice,
    /// Plain dot product, no rounding.
    Linear,
}

impl TrackingKernel {
    fn spec(self, eps: f64) -> KernelSpec {
        match self {
            Self::Lattice => KernelSpec::Lattice { eps },
            Self::Linear => KernelSpec::Linear,
        }
    }
}

/// Read `position` once `after_step` swaps have been applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadRequest {
    pub after_step: usize,
    pub position: usize,
}

impl ReadRequest {
    /// One read of `position` after every swap (steps 1..=swaps).
    pub fn each_step(position: usize, swaps: usize) -> Vec<Self> {
        (1..=swaps).map(|after_step| Self { after_step, position }).collect()
    }

    /// Every position after every step, including the initial state.
    pub fn everything(n: usize, swaps: usize) -> Vec<Self> {
        (0..=swaps)
            .flat_map(|after_step| (0..n).map(move |position| Self { after_step, position }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadResult {
    pub step: usize,
    pub read_index: usize,
    pub recalled: Vec<f64>,
    pub expected: Vec<f64>,
    /// Bit-level equality with the oracle value.
    pub exact: bool,
    /// The largest recalled coordinate is the oracle's largest.
    pub argmax_correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingReport {
    pub reads: Vec<ReadResult>,
    pub max_cache_len: usize,
}

impl TrackingReport {
    pub fn exact_count(&self) -> usize {
        self.reads.iter().filter(|r| r.exact).count()
    }

    pub fn argmax_count(&self) -> usize {
        self.reads.iter().filter(|r| r.argmax_correct).count()
    }

    pub fn all_exact(&self) -> bool {
        self.exact_count() == self.reads.len()
    }

    pub fn error_rate(&self) -> f64 {
        if self.reads.is_empty() {
            return 0.0;
        }
        1.0 - self.argmax_count() as f64 / self.reads.len() as f64
    }
}

fn check_trace(ensemble: &KeyEnsemble, trace: &SwapTrace) -> Result<()> {
    trace.validate()?;
    if trace.n != ensemble.n() {
        return Err(Error::InvalidConfig(format!(
            "trace has {} positions, ensemble has {} keys",
            trace.n,
            ensemble.n()
        )));
    }
    Ok(())
}

/// n initial writes `(k_i, v_i)`, then one `(k_hi − k_lo, 0)` write per swap;
/// `q = w = k`.
pub fn encode_swaps(ensemble: &KeyEnsemble, trace: &SwapTrace) -> Result<SequenceBatch<f64>> {
    check_trace(ensemble, trace)?;
    let (n, d, dv) = (trace.n, ensemble.d(), trace.initial_values.cols());
    let len = n + trace.swaps.len();
    let k = Matrix::from_fn(len, d, |t, j| {
        if t < n {
            ensemble.keys.get(t, j)
        } else {
            let s = trace.swaps[t - n];
            ensemble.keys.get(s.hi, j) - ensemble.keys.get(s.lo, j)
        }
    });
    let v = Matrix::from_fn(len, dv, |t, j| if t < n { trace.initial_values.get(t, j) } else { 0.0 });
    SequenceBatch::new(k.clone(), k, v)
}

fn argmax(x: &[f64]) -> Option<usize> {
    x.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Replays `trace` through a KU cache and answers `reads` with query-only
/// lookups. With `read_all_every = Some(m)` the cache is rebuilt every `m`
/// swaps from the n values it currently recalls.
pub fn run_tracking(
    ensemble: &KeyEnsemble,
    trace: &SwapTrace,
    reads: &[ReadRequest],
    read_all_every: Option<usize>,
    kernel: TrackingKernel,
) -> Result<TrackingReport> {
    check_trace(ensemble, trace)?;
    if read_all_every == Some(0) {
        return Err(Error::InvalidConfig("read_all_every must be positive".into()));
    }
    if let Some(r) = reads
        .iter()
        .find(|r| r.after_step > trace.swaps.len() || r.position >= trace.n)
    {
        return Err(Error::InvalidConfig(format!("read {r:?} is outside the trace")));
    }
    let n = trace.n;
    let perms = permutation_oracle(n, &trace.swaps)?;
    let spec = kernel.spec(ensemble.epsilon);
    let mut cache = KuCache::<f64>::new(DeltaFormerConfig::unnormalized(spec, spec))?;
    let key = |i: usize| ensemble.key(i);

    for i in 0..n {
        cache.push(key(i), trace.initial_values.row(i), key(i))?;
    }
    let mut max_cache_len = cache.len();
    let mut sorted: Vec<&ReadRequest> = reads.iter().collect();
    sorted.sort_by_key(|r| r.after_step);
    let mut pending = sorted.into_iter().peekable();
    let mut results = Vec::with_capacity(reads.len());
    let mut diff = vec![0.0; ensemble.d()];
    let zero = vec![0.0; trace.initial_values.cols()];

    for (step, perm) in perms.iter().enumerate().take(trace.swaps.len() + 1) {
        if step > 0 {
            let s = trace.swaps[step - 1];
            for (o, (a, b)) in diff.iter_mut().zip(key(s.hi).iter().zip(key(s.lo))) {
                *o = a - b;
            }
            cache.push(&diff, &zero, &diff)?;
            max_cache_len = max_cache_len.max(cache.len());
        }
        while let Some(r) = pending.next_if(|r| r.after_step == step) {
            let recalled = cache.read(key(r.position))?;
            let expected = trace.initial_values.row(perm[r.position]).to_vec();
            let exact = recalled
                .iter()
                .zip(&expected)
                .all(|(a, b)| a.to_bits() == b.to_bits() || a == b);
            let argmax_correct = argmax(&recalled) == argmax(&expected);
            results.push(ReadResult {
                step,
                read_index: r.position,
                recalled,
                expected,
                exact,
                argmax_correct,
            });
        }
        if let Some(m) = read_all_every {
            if step > 0 && step % m == 0 {
                let values = (0..n).map(|i| cache.read(key(i))).collect::<Result<Vec<_>>>()?;
                cache.clear();
                for (i, v) in values.iter().enumerate() {
                    cache.push(key(i), v, key(i))?;
                }
            }
        }
    }
    Ok(TrackingReport {
        reads: results,
        max_cache_len,
    })
}
