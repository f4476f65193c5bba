use super::{erase_row, readout_weights, DeltaFormerConfig, NormalizeU, SequenceBatch};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// The (k, u) history, grown one write at a time.
#[derive(Debug, Clone)]
pub struct KuCache<T> {
    cfg: DeltaFormerConfig,
    keys: Vec<Vec<T>>,
    us: Vec<Vec<T>>,
    scratch: Vec<T>,
}

impl<T: Scalar> KuCache<T> {
    pub fn new(cfg: DeltaFormerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            keys: Vec::new(),
            us: Vec::new(),
            scratch: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn clear(&mut self) {
        self.keys.clear();
        self.us.clear();
    }

    pub fn config(&self) -> &DeltaFormerConfig {
        &self.cfg
    }

    /// Appends `(k, u)` with `u = α v − Σ_i β κ₁(k_i, w) u_i`; returns `u`.
    pub fn push(&mut self, k: &[T], v: &[T], w: &[T]) -> Result<&[T]> {
        let step = self.keys.len();
        let keys: Vec<&[T]> = self.keys.iter().map(Vec::as_slice).collect();
        erase_row(&self.cfg, &keys, w, &mut self.scratch)?;
        let alpha = T::lit(self.cfg.alpha);
        let mut u: Vec<T> = v.iter().map(|&x| alpha * x).collect();
        for (&c, prev) in self.scratch.iter().zip(&self.us) {
            if c == T::zero() {
                continue;
            }
            for (o, &p) in u.iter_mut().zip(prev) {
                *o -= c * p;
            }
        }
        if self.cfg.normalize_u == NormalizeU::RmsNorm {
            let n = T::lit(u.len() as f64);
            let rms = (u.iter().map(|&x| x * x).sum::<T>() / n + T::lit(1e-12)).sqrt();
            for x in &mut u {
                *x /= rms;
            }
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::Explosion { step });
        }
        self.keys.push(k.to_vec());
        self.us.push(u);
        Ok(self.us.last().map(Vec::as_slice).unwrap_or(&[]))
    }

    /// Query-only read over everything cached so far; writes nothing.
    pub fn read(&self, q: &[T]) -> Result<Vec<T>> {
        let mut weights = Vec::with_capacity(self.len());
        readout_weights(&self.cfg, self.keys.iter().map(Vec::as_slice), q, &mut weights)?;
        let dv = self.us.first().map_or(0, Vec::len);
        let mut o = vec![T::zero(); dv];
        for (&wgt, u) in weights.iter().zip(&self.us) {
            if wgt == T::zero() {
                continue;
            }
            for (x, &y) in o.iter_mut().zip(u) {
                *x += wgt * y;
            }
        }
        Ok(o)
    }

    pub fn u_matrix(&self) -> Matrix<T> {
        let dv = self.us.first().map_or(0, Vec::len);
        Matrix::from_fn(self.us.len(), dv, |i, j| self.us[i][j])
    }
}

/// Step-by-step recurrence, the reference for the other two paths.
pub fn compute_u_naive<T: Scalar>(cfg: &DeltaFormerConfig, seq: &SequenceBatch<T>) -> Result<Matrix<T>> {
    let w = seq.write_keys(cfg)?;
    let mut cache = KuCache::new(cfg.clone())?;
    for t in 0..seq.len() {
        cache.push(seq.k.row(t), seq.v.row(t), w.row(t))?;
    }
    Ok(cache.u_matrix())
}
