//! Embedding → residual attention blocks → unembedding, differentiated on the
//! core tape.
//!
//! Parameter names: `emb`, `unemb`, and per layer `l{i}.` followed by
//! `wq bq wk bk wv bv wo bo`, plus `ww bw mix alpha beta` for DeltaFormer
//! blocks (`ww`/`bw` only with a separate write projection). `mix` holds one
//! weight per query head; κ₁ of the heads sharing a key/value head is averaged
//! with these weights before the solve.

use deltamem_core::deltaformer::{DeltaFormerConfig, NormalizeU, WSource};
use deltamem_core::kernels::KernelSpec;
use deltamem_core::numerics::{ElemKernel, Mask, Tape, Var};
use deltamem_core::{Matrix, Rng};
use rayon::prelude::*;

use crate::config::{Attention, ModelConfig, Positions};
use crate::data::Example;
use crate::error::{TrainError, TrainResult};
use crate::params::ParamSet;

const HEAD_NORM_EPS: f64 = 1e-6;

/// Loss statistics, plus gradients when they were requested.
type PassResult = (BatchStats, Option<Vec<Matrix<f64>>>);

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

/// Per-layer intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub q: Matrix<f64>,
    pub k: Matrix<f64>,
    pub v: Matrix<f64>,
    /// Write keys (DeltaFormer only; equals `k` when they are shared).
    pub w: Option<Matrix<f64>>,
    /// Derived values, one matrix per key/value head (DeltaFormer only).
    pub u: Vec<Matrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
}

impl BatchStats {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

fn uniform(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix<f64> {
    let b = 1.0 / (fan_in as f64).sqrt();
    rng.uniform_matrix(rows, cols, -b, b)
}

/// Random parameters for `cfg`: N(0,1) embeddings, U(±1/√fan_in) projections.
pub fn build_model(cfg: &ModelConfig, rng: &mut Rng) -> TrainResult<Model> {
    cfg.validate()?;
    let d = cfg.dim;
    let kv = cfg.kv_dim();
    let mut p = ParamSet::new();
    p.push("emb", rng.gaussian_matrix(cfg.vocab_in, d, 1.0))?;
    for l in 0..cfg.n_layers {
        let name = |s: &str| format!("l{l}.{s}");
        p.push(name("wq"), uniform(rng, d, d, d))?;
        p.push(name("bq"), uniform(rng, 1, d, d))?;
        p.push(name("wk"), uniform(rng, d, kv, d))?;
        p.push(name("bk"), uniform(rng, 1, kv, d))?;
        p.push(name("wv"), uniform(rng, d, kv, d))?;
        p.push(name("bv"), uniform(rng, 1, kv, d))?;
        p.push(name("wo"), uniform(rng, d, d, d))?;
        p.push(name("bo"), uniform(rng, 1, d, d))?;
        if let Attention::DeltaFormer(df) = &cfg.attention {
            if df.w_source == WSource::SeparateProjection {
                p.push(name("ww"), uniform(rng, d, d, d))?;
                p.push(name("bw"), uniform(rng, 1, d, d))?;
            }
            p.push(name("mix"), rng.gaussian_matrix(1, cfg.num_q_heads, 1.0))?;
            p.push(name("alpha"), Matrix::scalar(df.alpha))?;
            p.push(name("beta"), Matrix::scalar(df.beta))?;
        }
    }
    p.push("unemb", uniform(rng, d, cfg.vocab_out, d))?;
    Ok(Model {
        cfg: cfg.clone(),
        params: p,
    })
}

/// Number of scalars `build_model` would allocate for `cfg`.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.dim;
    let kv = cfg.kv_dim();
    let mut per_layer = 2 * (d * d + d) + 2 * (d * kv + kv);
    if let Attention::DeltaFormer(df) = &cfg.attention {
        if df.w_source == WSource::SeparateProjection {
            per_layer += d * d + d;
        }
        per_layer += cfg.num_q_heads + 2;
    }
    cfg.vocab_in * d + cfg.n_layers * per_layer + d * cfg.vocab_out
}

enum Kernel1 {
    Elem(ElemKernel<f64>, bool),
    Softmax(f64),
}

fn elem_kernel(spec: &KernelSpec, ste: bool) -> Kernel1 {
    let inv = |tau: Option<f64>| 1.0 / tau.unwrap_or(1.0);
    match *spec {
        KernelSpec::Linear => Kernel1::Elem(ElemKernel::Identity, false),
        KernelSpec::Exp { tau } => Kernel1::Elem(ElemKernel::Exp { inv_tau: inv(tau) }, false),
        KernelSpec::Relu => Kernel1::Elem(ElemKernel::Relu, false),
        KernelSpec::Solu { tau } => Kernel1::Elem(ElemKernel::Solu { inv_tau: inv(tau) }, false),
        KernelSpec::Round { decimals } => Kernel1::Elem(ElemKernel::RoundSte { decimals }, !ste),
        KernelSpec::Lattice { .. } => Kernel1::Elem(ElemKernel::RoundSte { decimals: 0 }, !ste),
        KernelSpec::SoftmaxRow { tau } => Kernel1::Softmax(inv(tau)),
    }
}

fn kappa1_kernel(df: &DeltaFormerConfig, ste: bool) -> Kernel1 {
    match (df.normalize_u, &df.kappa1) {
        (NormalizeU::SoftmaxZ, KernelSpec::Exp { tau }) => Kernel1::Softmax(1.0 / tau.unwrap_or(1.0)),
        (_, spec) => elem_kernel(spec, ste),
    }
}

fn apply_kernel(tape: &mut Tape<f64>, scores: Var, k: &Kernel1, mask: Mask) -> Var {
    match *k {
        Kernel1::Softmax(inv_tau) => {
            let s = if inv_tau == 1.0 {
                scores
            } else {
                tape.scale(scores, inv_tau)
            };
            tape.softmax(s, mask)
        }
        // scores are already zero outside the mask
        Kernel1::Elem(ElemKernel::Identity, _) => scores,
        Kernel1::Elem(e, detach) => {
            let y = tape.kernel(scores, e, mask);
            if detach {
                let frozen = tape.value(y).clone();
                tape.constant(frozen)
            } else {
                y
            }
        }
    }
}

impl Model {
    pub fn from_params(cfg: &ModelConfig, params: ParamSet) -> TrainResult<Self> {
        cfg.validate()?;
        let reference = build_model(cfg, &mut Rng::new(0))?;
        if reference.params.names() != params.names()
            || reference
                .params
                .values()
                .iter()
                .zip(params.values())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(TrainError::Checkpoint(
                "parameter layout does not match the configuration".into(),
            ));
        }
        Ok(Self {
            cfg: cfg.clone(),
            params,
        })
    }

    /// Registers every parameter on `tape` (as trainable leaves when
    /// `trainable`) and returns their variables in parameter order.
    pub fn register(&self, tape: &mut Tape<f64>, trainable: bool) -> Vec<Var> {
        self.params
            .values()
            .iter()
            .map(|m| {
                if trainable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect()
    }

    fn var(&self, vars: &[Var], name: &str) -> TrainResult<Var> {
        self.params
            .index(name)
            .map(|i| vars[i])
            .ok_or_else(|| TrainError::Config(format!("missing parameter {name}")))
    }

    /// Logits (`T × vocab_out`) for one token sequence.
    pub fn forward(
        &self,
        tape: &mut Tape<f64>,
        vars: &[Var],
        tokens: &[usize],
        mut trace: Option<&mut Vec<LayerTrace>>,
    ) -> TrainResult<Var> {
        let cfg = &self.cfg;
        let hd = cfg.head_dim();
        let g = cfg.group_size();
        let inv_sqrt = 1.0 / (hd as f64).sqrt();
        let mut x = tape.gather(self.var(vars, "emb")?, tokens)?;
        for l in 0..cfg.n_layers {
            let v = |s: &str| self.var(vars, &format!("l{l}.{s}"));
            let proj = |tape: &mut Tape<f64>, w: Var, b: Var| -> TrainResult<Var> {
                let m = tape.matmul(x, w)?;
                Ok(tape.add_row(m, b)?)
            };
            let mut q = proj(tape, v("wq")?, v("bq")?)?;
            let mut k = proj(tape, v("wk")?, v("bk")?)?;
            let vals = proj(tape, v("wv")?, v("bv")?)?;
            if let Positions::Rope { base } = cfg.positions {
                q = tape.rope(q, hd, base)?;
                k = tape.rope(k, hd, base)?;
            }
            let mut lt = LayerTrace {
                q: tape.value(q).clone(),
                k: tape.value(k).clone(),
                v: tape.value(vals).clone(),
                w: None,
                u: Vec::new(),
            };
            let k_heads = (0..cfg.num_kv_heads)
                .map(|j| tape.slice_cols(k, j * hd, hd))
                .collect::<Result<Vec<_>, _>>()?;
            let v_heads = (0..cfg.num_kv_heads)
                .map(|j| tape.slice_cols(vals, j * hd, hd))
                .collect::<Result<Vec<_>, _>>()?;

            // values each query head reads from, and how it reads them
            let (read_vals, kappa2, dot_scale): (Vec<Var>, Kernel1, f64) = match &cfg.attention {
                Attention::Standard => (v_heads.clone(), Kernel1::Softmax(1.0), inv_sqrt),
                Attention::Linear => (v_heads.clone(), Kernel1::Elem(ElemKernel::Identity, false), inv_sqrt),
                Attention::DeltaFormer(df) => {
                    let scale = if df.scale_dots { inv_sqrt } else { 1.0 };
                    let w = match df.w_source {
                        WSource::SeparateProjection => Some(proj(tape, v("ww")?, v("bw")?)?),
                        WSource::SameAsKey => None,
                    };
                    lt.w = Some(w.map_or_else(|| lt.k.clone(), |w| tape.value(w).clone()));
                    let k1 = kappa1_kernel(df, cfg.straight_through_round);
                    let (mix, alpha, beta) = (v("mix")?, v("alpha")?, v("beta")?);
                    let mut us = Vec::with_capacity(cfg.num_kv_heads);
                    for (j, (&kj, &vj)) in k_heads.iter().zip(&v_heads).enumerate() {
                        let mut acc: Option<Var> = None;
                        for h in j * g..(j + 1) * g {
                            let wh = match w {
                                Some(w) => tape.slice_cols(w, h * hd, hd)?,
                                None => kj,
                            };
                            let s = tape.scores(wh, kj, scale, Mask::CausalStrict)?;
                            let a = apply_kernel(tape, s, &k1, Mask::CausalStrict);
                            // β·mix_h/G folded into one scalar
                            let m = tape.slice_cols(mix, h, 1)?;
                            let m = tape.mul(m, beta)?;
                            let m = tape.scale(m, 1.0 / g as f64);
                            let a = tape.scale_by(a, m)?;
                            acc = Some(match acc {
                                Some(prev) => tape.add(prev, a)?,
                                None => a,
                            });
                        }
                        let ba = acc.expect("group size is positive");
                        let av = tape.scale_by(vj, alpha)?;
                        let u = tape.tri_solve(ba, av)?;
                        lt.u.push(tape.value(u).clone());
                        us.push(u);
                    }
                    (us, elem_kernel(&df.kappa2, cfg.straight_through_round), scale)
                }
            };

            let mut outs = Vec::with_capacity(cfg.num_q_heads);
            for h in 0..cfg.num_q_heads {
                let j = h / g;
                let qh = tape.slice_cols(q, h * hd, hd)?;
                let s = tape.scores(qh, k_heads[j], dot_scale, Mask::CausalInclusive)?;
                let a = apply_kernel(tape, s, &kappa2, Mask::CausalInclusive);
                let mut o = tape.matmul(a, read_vals[j])?;
                if cfg.head_rms_norm {
                    o = tape.rms_norm(o, HEAD_NORM_EPS);
                }
                outs.push(o);
            }
            let cat = if outs.len() == 1 {
                outs[0]
            } else {
                tape.concat_cols(&outs)?
            };
            let y = tape.matmul(cat, v("wo")?)?;
            let y = tape.add_row(y, v("bo")?)?;
            x = tape.add(x, y)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(lt);
            }
        }
        Ok(tape.matmul(x, self.var(vars, "unemb")?)?)
    }

    pub fn logits(&self, tokens: &[usize]) -> TrainResult<Matrix<f64>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let out = self.forward(&mut tape, &vars, tokens, None)?;
        Ok(tape.value(out).clone())
    }

    pub fn trace(&self, tokens: &[usize]) -> TrainResult<(Matrix<f64>, Vec<LayerTrace>)> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let mut layers = Vec::new();
        let out = self.forward(&mut tape, &vars, tokens, Some(&mut layers))?;
        Ok((tape.value(out).clone(), layers))
    }

    fn check_example(&self, ex: &Example) -> TrainResult<()> {
        if ex.tokens.len() != ex.targets.len() || ex.tokens.is_empty() {
            return Err(TrainError::Config("example needs one target slot per token".into()));
        }
        if ex.tokens.iter().any(|&t| t >= self.cfg.vocab_in)
            || ex.targets.iter().flatten().any(|&t| t >= self.cfg.vocab_out)
        {
            return Err(TrainError::Config("token or target outside the vocabulary".into()));
        }
        Ok(())
    }

    /// Loss of one example scaled by `weight`, its stats, and (when `grads`)
    /// the gradient of the scaled loss.
    fn example_pass(&self, ex: &Example, weight: f64, grads: bool) -> TrainResult<PassResult> {
        self.check_example(ex)?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, grads);
        let logits = self.forward(&mut tape, &vars, &ex.tokens, None)?;
        let rows: Vec<usize> = ex
            .targets
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|_| i))
            .collect();
        let labels: Vec<usize> = ex.targets.iter().flatten().copied().collect();
        let mut stats = BatchStats {
            total: rows.len(),
            ..Default::default()
        };
        if rows.is_empty() {
            return Ok((
                stats,
                grads.then(|| {
                    self.params
                        .values()
                        .iter()
                        .map(|m| Matrix::zeros(m.rows(), m.cols()))
                        .collect()
                }),
            ));
        }
        let lm = tape.value(logits);
        stats.correct = rows
            .iter()
            .zip(&labels)
            .filter(|&(&r, &y)| argmax(lm.row(r)) == y)
            .count();
        let picked = if rows.len() == ex.tokens.len() {
            logits
        } else {
            tape.gather(logits, &rows)?
        };
        let ce = tape.cross_entropy(picked, &labels)?;
        let scaled = tape.scale(ce, weight * rows.len() as f64);
        stats.loss = tape.value(scaled).get(0, 0);
        if !grads {
            return Ok((stats, None));
        }
        let mut g = tape.backward(scaled)?;
        let out = vars
            .iter()
            .zip(self.params.values())
            .map(|(&v, m)| g.take(v).unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols())))
            .collect();
        Ok((stats, Some(out)))
    }

    fn run_batch(&self, batch: &[Example], grads: bool, threads: Option<usize>) -> TrainResult<PassResult> {
        let total: usize = batch.iter().map(Example::labelled).sum();
        let weight = if total == 0 { 0.0 } else { 1.0 / total as f64 };
        let per: Vec<TrainResult<PassResult>> = match threads {
            None | Some(1) => batch.iter().map(|ex| self.example_pass(ex, weight, grads)).collect(),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
                pool.install(|| {
                    batch
                        .par_iter()
                        .map(|ex| self.example_pass(ex, weight, grads))
                        .collect()
                })
            }
        };
        let mut stats = BatchStats::default();
        let mut sum: Option<Vec<Matrix<f64>>> = None;
        for r in per {
            let (s, g) = r?;
            stats.loss += s.loss;
            stats.correct += s.correct;
            stats.total += s.total;
            if let Some(g) = g {
                match &mut sum {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                    None => sum = Some(g),
                }
            }
        }
        Ok((stats, sum))
    }

    /// Mean cross-entropy over every labelled position of `batch`, and its
    /// gradient in parameter order.
    pub fn loss_and_grads(
        &self,
        batch: &[Example],
        threads: Option<usize>,
    ) -> TrainResult<(BatchStats, Vec<Matrix<f64>>)> {
        let (stats, g) = self.run_batch(batch, true, threads)?;
        let g = g.unwrap_or_else(|| {
            self.params
                .values()
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect()
        });
        Ok((stats, g))
    }

    pub fn evaluate(&self, batch: &[Example], threads: Option<usize>) -> TrainResult<BatchStats> {
        Ok(self.run_batch(batch, false, threads)?.0)
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
