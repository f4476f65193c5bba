use deltamem_core::deltaformer::{DeltaFormerConfig, NormalizeU, WSource};
use deltamem_core::kernels::KernelSpec;

use crate::error::{TrainError, TrainResult};

#[derive(Debug, Clone, PartialEq)]
pub enum Attention {
    /// Causal softmax attention.
    Standard,
    /// Causal unnormalised `q·k` attention.
    Linear,
    /// Delta-rule derived values `u = (I + βA)⁻¹ αV` read with κ₂.
    /// `alpha` and `beta` of the config are the initial values of the
    /// trainable scalars.
    DeltaFormer(DeltaFormerConfig),
}

impl Attention {
    /// DeltaFormer attention as the toy models train it: scaled dots, a
    /// separate write-key projection, and the softmax normaliser over the
    /// strict past when κ₁ is a row softmax.
    pub fn deltaformer(kappa1: KernelSpec, kappa2: KernelSpec) -> Self {
        let mut df = DeltaFormerConfig::unnormalized(kappa1, kappa2);
        if matches!(kappa1, KernelSpec::SoftmaxRow { .. }) {
            df.normalize_u = NormalizeU::SoftmaxZ;
        }
        df.scale_dots = true;
        df.w_source = WSource::SeparateProjection;
        Attention::DeltaFormer(df)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Attention::Standard => "standard",
            Attention::Linear => "linear",
            Attention::DeltaFormer(_) => "deltaformer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Positions {
    /// Rotary embedding on queries and keys.
    Rope {
        base: f64,
    },
    NoPE,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_in: usize,
    pub vocab_out: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub num_q_heads: usize,
    pub num_kv_heads: usize,
    pub attention: Attention,
    pub positions: Positions,
    /// Round kernels pass gradients straight through; when off they are treated
    /// as constants in the backward pass.
    pub straight_through_round: bool,
    /// RMS-normalise each head's output before the output projection.
    pub head_rms_norm: bool,
}

impl ModelConfig {
    /// The 1-layer swap-tracking model: dim 12, 4 query heads sharing one
    /// key/value head, κ₁ = Round, κ₂ = softmax, no positions.
    pub fn toy_swap(n: usize) -> Self {
        Self {
            vocab_in: deltamem_core::tasks::swap_vocab(n),
            vocab_out: n,
            dim: 12,
            n_layers: 1,
            num_q_heads: 4,
            num_kv_heads: 1,
            attention: Attention::deltaformer(KernelSpec::Round { decimals: 0 }, KernelSpec::softmax()),
            positions: Positions::NoPE,
            straight_through_round: true,
            head_rms_norm: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.num_q_heads.max(1)
    }

    pub fn kv_dim(&self) -> usize {
        self.head_dim() * self.num_kv_heads
    }

    pub fn group_size(&self) -> usize {
        self.num_q_heads / self.num_kv_heads.max(1)
    }

    pub fn validate(&self) -> TrainResult<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.vocab_in == 0 || self.vocab_out == 0 || self.dim == 0 || self.n_layers == 0 {
            return bad("vocab sizes, dim and n_layers must be positive".into());
        }
        if self.num_q_heads == 0 || self.num_kv_heads == 0 {
            return bad("head counts must be positive".into());
        }
        if !self.dim.is_multiple_of(self.num_q_heads) {
            return bad(format!(
                "dim {} is not divisible by {} query heads",
                self.dim, self.num_q_heads
            ));
        }
        if !self.num_q_heads.is_multiple_of(self.num_kv_heads) {
            return bad(format!(
                "{} kv heads do not divide {} query heads",
                self.num_kv_heads, self.num_q_heads
            ));
        }
        if let Positions::Rope { base } = self.positions {
            if !self.head_dim().is_multiple_of(2) {
                return bad(format!("RoPE needs an even head dim, got {}", self.head_dim()));
            }
            if !(base > 1.0 && base.is_finite()) {
                return bad(format!("RoPE base must exceed 1, got {base}"));
            }
        }
        if let Attention::DeltaFormer(df) = &self.attention {
            df.validate()?;
            if df.normalize_u == NormalizeU::RmsNorm {
                return bad("RmsNorm on u has no matrix form; use None or SoftmaxZ".into());
            }
            if matches!(df.kappa2, KernelSpec::Lattice { .. }) {
                return bad("use Round rather than Lattice for a trainable kappa2".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Linear warm-up to `lr`, then linear decay to zero at the last step.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curriculum {
    None,
    /// Double the sequence length after any step whose accuracy exceeds
    /// `threshold`, starting at `start_len` and capped at `max_len`.
    DoubleAt {
        threshold: f64,
        start_len: usize,
        max_len: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub schedule: Schedule,
    /// One batch per epoch, so this is also the number of optimizer steps.
    pub epochs: usize,
    pub batch: usize,
    pub curriculum: Curriculum,
    /// Sequence length when there is no curriculum (swap task only).
    pub seq_len: usize,
    pub seed: u64,
    /// Draw a fresh batch every step. When off, one batch is drawn per
    /// sequence length and reused.
    pub resample: bool,
    /// Stop once a step at the final length reaches this accuracy.
    pub target_accuracy: Option<f64>,
    /// Worker threads for the per-sample loop; `None` runs on the caller's
    /// thread. Gradients are reduced in sample order either way.
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 0.01,
            warmup_steps: 128,
            schedule: Schedule::Linear,
            epochs: 4000,
            batch: 128,
            curriculum: Curriculum::None,
            seq_len: 16,
            seed: 42,
            resample: true,
            target_accuracy: None,
            threads: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> TrainResult<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("lr and weight_decay must be finite and non-negative".into());
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if let Curriculum::DoubleAt {
            threshold,
            start_len,
            max_len,
        } = self.curriculum
        {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return bad(format!("curriculum threshold must be in (0, 1], got {threshold}"));
            }
            if start_len == 0 || start_len > max_len {
                return bad(format!(
                    "curriculum lengths must satisfy 0 < start ({start_len}) <= max ({max_len})"
                ));
            }
        } else if self.seq_len == 0 {
            return bad("seq_len must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        Ok(())
    }

    pub fn initial_len(&self) -> usize {
        match self.curriculum {
            Curriculum::DoubleAt { start_len, .. } => start_len,
            Curriculum::None => self.seq_len,
        }
    }

    pub fn final_len(&self) -> usize {
        match self.curriculum {
            Curriculum::DoubleAt { max_len, .. } => max_len,
            Curriculum::None => self.seq_len,
        }
    }
}
