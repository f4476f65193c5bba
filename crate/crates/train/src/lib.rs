//! Deterministic toy training on the core tape: model assembly, AdamW with a
//! warm-up/decay schedule, length curriculum, the frozen-construction stress
//! test, and the head-count trade-off.

pub mod config;
pub mod data;
pub mod error;
pub mod heads;
pub mod model;
pub mod optim;
pub mod params;
pub mod stress;
pub mod train;

pub use config::{Attention, Curriculum, ModelConfig, Positions, Schedule, TrainConfig};
pub use data::{Example, Task};
pub use error::{TrainError, TrainResult};
pub use heads::{expected_ordering, head_tradeoff_tiny, head_tradeoff_with, HeadAttention, HeadRow, HeadTradeoffSetup};
pub use model::{build_model, param_count, BatchStats, LayerTrace, Model};
pub use optim::{lr_at, AdamW};
pub use params::ParamSet;
pub use stress::{stress_fixed_kv, stress_fixed_kv_with, KeySource, ReadoutInit, StressOptions, StressReport};
pub use train::{compare_dag, evaluate_task, matched_baseline, train, DagComparison, StepLog, TrainLog};
