//! Almost-orthogonal key ensembles.
//!
//! Each attempt draws Gaussian rows, normalises them and accepts if the
//! largest off-diagonal |k_iᵀk_j| is within target. Plain draws essentially
//! never meet a tight target once n is comparable to d (the typical coherence
//! of n random unit vectors is about √(4 ln n / d)), so a rejected draw is
//! first pushed apart by a short coherence-reduction pass: every pair whose
//! |dot| exceeds 95% of the target is nudged apart along the other row, then
//! rows are renormalised. The attempt is accepted only if that pass reaches
//! the target.

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct KeyEnsemble {
    /// n × d, unit rows.
    pub keys: Matrix<f64>,
    /// Realised max off-diagonal |k_iᵀk_j|.
    pub epsilon: f64,
}

const REFINE_ITERS: usize = 3000;
const REFINE_STEP: f64 = 0.05;
const REFINE_MARGIN: f64 = 0.95;

impl KeyEnsemble {
    /// The first n standard basis vectors of R^d (ε = 0).
    pub fn orthonormal(n: usize, d: usize) -> Result<Self> {
        if n > d {
            return Err(Error::InvalidConfig(format!(
                "{n} orthonormal keys do not fit in dimension {d}"
            )));
        }
        Ok(Self {
            keys: Matrix::from_fn(n, d, |i, j| if i == j { 1.0 } else { 0.0 }),
            epsilon: 0.0,
        })
    }

    /// Wraps existing keys after checking they are unit rows.
    pub fn from_keys(keys: Matrix<f64>) -> Result<Self> {
        for i in 0..keys.rows() {
            let norm = dot(keys.row(i), keys.row(i)).sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!("key {i} has norm {norm}")));
            }
        }
        let epsilon = coherence(&keys);
        Ok(Self { keys, epsilon })
    }

    pub fn n(&self) -> usize {
        self.keys.rows()
    }

    pub fn d(&self) -> usize {
        self.keys.cols()
    }

    pub fn key(&self, i: usize) -> &[f64] {
        self.keys.row(i)
    }
}

/// Largest off-diagonal |k_iᵀk_j|.
pub fn coherence(keys: &Matrix<f64>) -> f64 {
    let n = keys.rows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max(dot(keys.row(i), keys.row(j)).abs());
        }
    }
    worst
}

fn normalize_rows(m: &mut Matrix<f64>) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let norm = dot(row, row).sqrt();
        for x in row.iter_mut() {
            *x /= norm;
        }
    }
}

fn refine(x: &mut Matrix<f64>, target: f64) -> f64 {
    let n = x.rows();
    let thr = REFINE_MARGIN * target;
    let mut best = f64::INFINITY;
    for _ in 0..REFINE_ITERS {
        let g = x.matmul_bt(x).expect("square gram");
        let mut worst = 0.0f64;
        let push = Matrix::from_fn(n, n, |i, j| {
            if i == j {
                return 0.0;
            }
            let v = g.get(i, j);
            worst = worst.max(v.abs());
            if v.abs() > thr {
                v - v.signum() * thr
            } else {
                0.0
            }
        });
        best = best.min(worst);
        if worst <= target {
            return worst;
        }
        let step = push.matmul(x).expect("shapes agree");
        for (o, s) in x.data_mut().iter_mut().zip(step.data()) {
            *o -= REFINE_STEP * s;
        }
        normalize_rows(x);
    }
    best.min(coherence(x))
}

/// Draws `n` unit keys in dimension `d` with pairwise |dot| ≤ `eps_target`.
pub fn generate_keys(n: usize, d: usize, eps_target: f64, rng: &mut Rng, max_attempts: usize) -> Result<KeyEnsemble> {
    if !(eps_target > 0.0 && eps_target < 0.125) {
        return Err(Error::InvalidConfig(format!(
            "eps_target must be in (0, 1/8), got {eps_target}"
        )));
    }
    if n == 0 || d == 0 {
        return Err(Error::InvalidConfig("n and d must be positive".into()));
    }
    let mut best = f64::INFINITY;
    for _ in 0..max_attempts {
        let mut x = rng.gaussian_matrix::<f64>(n, d, 1.0);
        normalize_rows(&mut x);
        let mut eps = coherence(&x);
        if eps > eps_target {
            eps = refine(&mut x, eps_target);
        }
        best = best.min(eps);
        if eps <= eps_target {
            let epsilon = coherence(&x);
            return Ok(KeyEnsemble { keys: x, epsilon });
        }
    }
    Err(Error::Infeasible { n, d, best_eps: best })
}
