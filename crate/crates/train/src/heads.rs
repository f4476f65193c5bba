//! Final validation loss against head count at fixed width, for softmax and
//! linear attention with per-head RMS normalisation, on the pair-recall LM.

use deltamem_core::Rng;

use crate::config::{Attention, ModelConfig, Positions, TrainConfig};
use crate::data::Task;
use crate::error::TrainResult;
use crate::model::build_model;
use crate::train::{evaluate_task, train};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadAttention {
    SoftmaxRmsNorm,
    LinearRmsNorm,
}

impl HeadAttention {
    pub fn name(self) -> &'static str {
        match self {
            HeadAttention::SoftmaxRmsNorm => "softmax",
            HeadAttention::LinearRmsNorm => "linear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadTradeoffSetup {
    pub dim: usize,
    pub n_layers: usize,
    pub task: Task,
    pub eval_batch: usize,
}

impl Default for HeadTradeoffSetup {
    fn default() -> Self {
        Self {
            dim: 32,
            n_layers: 1,
            task: Task::PairRecall {
                keys: 16,
                values: 4,
                reads: 48,
            },
            eval_batch: 128,
        }
    }
}

impl HeadTradeoffSetup {
    /// The short training budget the trade-off tables are produced with.
    pub fn quick_train_config() -> TrainConfig {
        TrainConfig {
            epochs: 300,
            batch: 32,
            warmup_steps: 30,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadRow {
    pub heads: usize,
    pub kind: HeadAttention,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

pub fn head_tradeoff_tiny(heads_list: &[usize], kind: HeadAttention, tcfg: &TrainConfig) -> TrainResult<Vec<HeadRow>> {
    head_tradeoff_with(heads_list, kind, tcfg, &HeadTradeoffSetup::default())
}

/// One model per entry of `heads_list`, all from the same seed and data.
pub fn head_tradeoff_with(
    heads_list: &[usize],
    kind: HeadAttention,
    tcfg: &TrainConfig,
    setup: &HeadTradeoffSetup,
) -> TrainResult<Vec<HeadRow>> {
    let task = setup.task;
    heads_list
        .iter()
        .map(|&heads| {
            let cfg = ModelConfig {
                vocab_in: task.vocab_in(),
                vocab_out: task.vocab_out(),
                dim: setup.dim,
                n_layers: setup.n_layers,
                num_q_heads: heads,
                num_kv_heads: heads,
                attention: match kind {
                    HeadAttention::SoftmaxRmsNorm => Attention::Standard,
                    HeadAttention::LinearRmsNorm => Attention::Linear,
                },
                positions: Positions::NoPE,
                straight_through_round: true,
                head_rms_norm: true,
            };
            let mut model = build_model(&cfg, &mut Rng::new(tcfg.seed))?;
            train(&mut model, &task, tcfg)?;
            let eval = evaluate_task(&model, &task, 0, setup.eval_batch, tcfg.seed)?;
            Ok(HeadRow {
                heads,
                kind,
                final_loss: eval.loss,
                final_accuracy: eval.accuracy(),
            })
        })
        .collect()
}

/// Whether the expected ordering between the fewest and most heads holds:
/// fewer heads no worse for linear attention, no better for softmax.
/// `None` when the table has fewer than two distinct head counts.
pub fn expected_ordering(rows: &[HeadRow]) -> Option<bool> {
    let lo = rows.iter().min_by_key(|r| r.heads)?;
    let hi = rows.iter().max_by_key(|r| r.heads)?;
    if lo.heads == hi.heads {
        return None;
    }
    Some(match lo.kind {
        HeadAttention::LinearRmsNorm => lo.final_loss <= hi.final_loss,
        HeadAttention::SoftmaxRmsNorm => lo.final_loss >= hi.final_loss,
    })
}
