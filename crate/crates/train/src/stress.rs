//! Swap tracking with the write path frozen to the almost-orthogonal
//! construction; only the read path trains.
//!
//! Each sequence writes `(k_i, e_i)` for the `n` positions, then
//! `(k_hi − k_lo, 0)` per swap, and `u` is computed once with κ₁. The read
//! after swap `s` is `o = Σ_{i ≤ n+s} round(k_i·q) u_i` (straight-through
//! gradient), scored as `γ·o + b` against the element now at position 0.
//! Trainable: `q`, `γ`, `b`.

use deltamem_core::deltaformer::{compute_u_naive, DeltaFormerConfig};
use deltamem_core::kernels::KernelSpec;
use deltamem_core::numerics::dot;
use deltamem_core::state_tracking::{encode_swaps, generate_keys, permutation_oracle, KeyEnsemble, SwapTrace};
use deltamem_core::{Matrix, Rng};

use crate::config::TrainConfig;
use crate::error::{TrainError, TrainResult};
use crate::optim::{lr_at, AdamW};
use crate::train::StepLog;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeySource {
    /// `generate_keys` with this coherence target.
    Generated { eps_target: f64 },
    /// Standard basis vectors; needs `n ≤ d`.
    Orthonormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutInit {
    /// `q = k_0`, `γ = scale`, `b = 0`: the exact construction.
    Construction,
    /// `q ~ N(0, 1/d)`, `γ = scale`, `b = 0`.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressOptions {
    pub keys: KeySource,
    pub readout: ReadoutInit,
    /// Initial logit scale `γ`.
    pub scale: f64,
    /// Held-out sequences for the before/after accuracy.
    pub eval_sequences: usize,
    pub max_key_attempts: usize,
}

impl Default for StressOptions {
    fn default() -> Self {
        Self {
            keys: KeySource::Generated { eps_target: 0.12 },
            readout: ReadoutInit::Construction,
            scale: 10.0,
            eval_sequences: 8,
            max_key_attempts: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressReport {
    pub kappa1: KernelSpec,
    /// Largest |k_i·k_j| of the ensemble.
    pub epsilon: f64,
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    /// Per-step loss and accuracy on the training pool.
    pub curve: Vec<StepLog>,
}

/// One frozen sequence: keys, derived values and the label after each swap.
struct Frozen {
    k: Matrix<f64>,
    u: Matrix<f64>,
    labels: Vec<usize>,
}

fn freeze(ens: &KeyEnsemble, swaps: usize, kappa1: &KernelSpec, rng: &mut Rng) -> TrainResult<Frozen> {
    let n = ens.n();
    let trace = SwapTrace::random(n, swaps, rng)?;
    let seq = encode_swaps(ens, &trace)?;
    let cfg = DeltaFormerConfig::unnormalized(*kappa1, KernelSpec::Linear);
    let u = compute_u_naive(&cfg, &seq)?;
    let perms = permutation_oracle(n, &trace.swaps)?;
    Ok(Frozen {
        k: seq.k,
        u,
        labels: perms[1..].iter().map(|p| p[0]).collect(),
    })
}

#[derive(Clone)]
struct Readout {
    q: Matrix<f64>,
    gamma: Matrix<f64>,
    bias: Matrix<f64>,
}

impl Readout {
    fn params(&self) -> Vec<Matrix<f64>> {
        vec![self.q.clone(), self.gamma.clone(), self.bias.clone()]
    }

    fn set(&mut self, p: Vec<Matrix<f64>>) {
        let mut it = p.into_iter();
        self.q = it.next().expect("q");
        self.gamma = it.next().expect("gamma");
        self.bias = it.next().expect("bias");
    }
}

#[derive(Default)]
struct Pass {
    loss: f64,
    correct: usize,
    total: usize,
}

/// Loss over all reads of `seqs` (mean), and optionally the gradient.
fn pass(r: &Readout, seqs: &[Frozen], n: usize, grads: Option<&mut [Matrix<f64>; 3]>) -> Pass {
    let total: usize = seqs.iter().map(|s| s.labels.len()).sum();
    let inv_total = 1.0 / total.max(1) as f64;
    let gamma = r.gamma.get(0, 0);
    let q = r.q.row(0);
    let b = r.bias.row(0);
    let mut out = Pass {
        total,
        ..Default::default()
    };
    let mut acc_q = vec![0.0; q.len()];
    let mut acc_gamma = 0.0;
    let mut acc_b = vec![0.0; n];
    let want = grads.is_some();
    for s in seqs {
        let len = s.k.rows();
        let c: Vec<f64> = (0..len).map(|i| dot(s.k.row(i), q).round()).collect();
        let mut o = vec![0.0; n];
        let mut d_o = if want {
            Matrix::zeros(len, n)
        } else {
            Matrix::zeros(0, 0)
        };
        let mut p = vec![0.0; n];
        for (t, &ct) in c.iter().enumerate() {
            if ct != 0.0 {
                for (x, &y) in o.iter_mut().zip(s.u.row(t)) {
                    *x += ct * y;
                }
            }
            if t < n {
                continue;
            }
            let y = s.labels[t - n];
            for ((pj, &oj), &bj) in p.iter_mut().zip(&o).zip(b) {
                *pj = gamma * oj + bj;
            }
            let best = crate::model::argmax(&p);
            out.correct += usize::from(best == y);
            let m = p[best];
            let z: f64 = p.iter().map(|&x| (x - m).exp()).sum();
            out.loss += (m + z.ln() - p[y]) * inv_total;
            if want {
                let row = d_o.row_mut(t);
                for (j, pj) in p.iter().enumerate() {
                    let g = ((pj - m).exp() / z - f64::from(u8::from(j == y))) * inv_total;
                    acc_gamma += g * o[j];
                    acc_b[j] += g;
                    row[j] = gamma * g;
                }
            }
        }
        if want {
            let mut h = vec![0.0; n];
            for t in (0..len).rev() {
                if t >= n {
                    for (x, &y) in h.iter_mut().zip(d_o.row(t)) {
                        *x += y;
                    }
                }
                let dc = dot(s.u.row(t), &h);
                if dc != 0.0 {
                    for (x, &k) in acc_q.iter_mut().zip(s.k.row(t)) {
                        *x += dc * k;
                    }
                }
            }
        }
    }
    if let Some(g) = grads {
        g[0] = Matrix::from_vec(1, acc_q.len(), acc_q).expect("q shape");
        g[1] = Matrix::scalar(acc_gamma);
        g[2] = Matrix::from_vec(1, n, acc_b).expect("bias shape");
    }
    out
}

/// [`stress_fixed_kv_with`] under default options.
pub fn stress_fixed_kv(
    n: usize,
    d: usize,
    train_len: usize,
    kappa1: KernelSpec,
    tcfg: &TrainConfig,
) -> TrainResult<StressReport> {
    stress_fixed_kv_with(n, d, train_len, kappa1, tcfg, &StressOptions::default())
}

/// Trains the read path for `tcfg.epochs` full-batch steps over a pool of
/// `tcfg.batch` frozen sequences of `train_len` swaps.
pub fn stress_fixed_kv_with(
    n: usize,
    d: usize,
    train_len: usize,
    kappa1: KernelSpec,
    tcfg: &TrainConfig,
    opts: &StressOptions,
) -> TrainResult<StressReport> {
    tcfg.validate()?;
    if train_len == 0 || opts.eval_sequences == 0 {
        return Err(TrainError::Config(
            "train_len and eval_sequences must be positive".into(),
        ));
    }
    let root = Rng::new(tcfg.seed);
    let ens = match opts.keys {
        KeySource::Generated { eps_target } => {
            generate_keys(n, d, eps_target, &mut root.split(10), opts.max_key_attempts)?
        }
        KeySource::Orthonormal => KeyEnsemble::orthonormal(n, d)?,
    };
    let mut data_rng = root.split(11);
    let pool = (0..tcfg.batch)
        .map(|_| freeze(&ens, train_len, &kappa1, &mut data_rng))
        .collect::<TrainResult<Vec<_>>>()?;
    let mut eval_rng = root.split(12);
    let held = (0..opts.eval_sequences)
        .map(|_| freeze(&ens, train_len, &kappa1, &mut eval_rng))
        .collect::<TrainResult<Vec<_>>>()?;

    let q = match opts.readout {
        ReadoutInit::Construction => Matrix::from_vec(1, d, ens.key(0).to_vec())?,
        ReadoutInit::Random => root.split(13).gaussian_matrix(1, d, 1.0 / (d as f64).sqrt()),
    };
    let mut r = Readout {
        q,
        gamma: Matrix::scalar(opts.scale),
        bias: Matrix::zeros(1, n),
    };
    let accuracy = |r: &Readout, seqs: &[Frozen]| {
        let p = pass(r, seqs, n, None);
        p.correct as f64 / p.total.max(1) as f64
    };
    let initial_accuracy = accuracy(&r, &held);
    let mut params = r.params();
    let mut opt = AdamW::for_config(&params, tcfg);
    let mut curve = Vec::with_capacity(tcfg.epochs);
    for step in 0..tcfg.epochs {
        let lr = lr_at(tcfg.schedule, tcfg.lr, tcfg.warmup_steps, step, tcfg.epochs);
        let mut g = [Matrix::zeros(0, 0), Matrix::zeros(0, 0), Matrix::zeros(0, 0)];
        let p = pass(&r, &pool, n, Some(&mut g));
        curve.push(StepLog {
            step,
            loss: p.loss,
            accuracy: p.correct as f64 / p.total.max(1) as f64,
            cur_len: train_len,
            lr,
        });
        opt.step(&mut params, &g, lr);
        r.set(params.clone());
    }
    Ok(StressReport {
        kappa1,
        epsilon: ens.epsilon,
        initial_accuracy,
        final_accuracy: accuracy(&r, &held),
        curve,
    })
}
