//! Recurrent associative memories of the form `S_t = A_t S_{t−1} B_t + C_t`.
//!
//! Every row of the family is a single gradient step on a per-step objective
//! `L_t(S_{t−1})`; [`gradient_step_check`] verifies that numerically. Dense
//! states hold `S` explicitly over a finite feature map; [`HistoryMemory`]
//! keeps `(k, v, weight)` triples and evaluates any kernel lazily.
//!
//! Gates act on the left: `diag(λ)` scales rows of `S`, i.e. the d_v axis.

mod dense;
mod feature;
mod history;
mod optimum;

pub use dense::{
    general_loss, gradient_step_check, gradient_step_check_with, loss_eval, norm_trace, recurrence_terms,
    table_loss_as_printed, update,
};
pub use feature::FeatureMap;
pub use history::HistoryMemory;
pub use optimum::analytical_optimum;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemoryModel {
    LinearAttn,
    GatedLinearAttn,
    DeltaNet,
    DeltaNetMomentum,
    SoftmaxNoNorm,
    SoftmaxNorm,
    GatedSoftmaxNorm,
}

impl MemoryModel {
    pub const ALL: [MemoryModel; 7] = [
        Self::LinearAttn,
        Self::GatedLinearAttn,
        Self::DeltaNet,
        Self::DeltaNetMomentum,
        Self::SoftmaxNoNorm,
        Self::SoftmaxNorm,
        Self::GatedSoftmaxNorm,
    ];

    pub fn is_gated(self) -> bool {
        matches!(self, Self::GatedLinearAttn | Self::GatedSoftmaxNorm)
    }

    pub fn is_softmax(self) -> bool {
        matches!(self, Self::SoftmaxNoNorm | Self::SoftmaxNorm | Self::GatedSoftmaxNorm)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::LinearAttn => "linear_attn",
            Self::GatedLinearAttn => "gated_linear_attn",
            Self::DeltaNet => "deltanet",
            Self::DeltaNetMomentum => "deltanet_momentum",
            Self::SoftmaxNoNorm => "softmax_no_norm",
            Self::SoftmaxNorm => "softmax_norm",
            Self::GatedSoftmaxNorm => "gated_softmax_norm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentSpec {
    pub model: MemoryModel,
    /// Per-row gate in (0, 1)^{d_v}; gated rows only.
    pub gate_lambda: Vec<f64>,
    /// Momentum coefficient in (0, 1); momentum row only.
    pub momentum_eta: f64,
    /// φ applied to keys. Non-softmax rows normally use the identity.
    pub feature_map: FeatureMap,
}

impl RecurrentSpec {
    pub fn new(model: MemoryModel) -> Self {
        Self {
            model,
            gate_lambda: Vec::new(),
            momentum_eta: 0.9,
            feature_map: FeatureMap::Identity,
        }
    }

    pub fn with_gate(mut self, lambda: Vec<f64>) -> Self {
        self.gate_lambda = lambda;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.momentum_eta = eta;
        self
    }

    pub fn with_feature_map(mut self, fm: FeatureMap) -> Self {
        self.feature_map = fm;
        self
    }

    pub fn validate(&self, d_v: usize) -> Result<()> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if self.model.is_gated() {
            if self.gate_lambda.len() != d_v {
                return Err(Error::InvalidConfig(format!(
                    "gate_lambda has {} entries, d_v is {d_v}",
                    self.gate_lambda.len()
                )));
            }
            if let Some(bad) = self.gate_lambda.iter().find(|&&l| !open_unit(l)) {
                return Err(Error::InvalidConfig(format!("gate entry {bad} outside (0, 1)")));
            }
        }
        if self.model == MemoryModel::DeltaNetMomentum && !open_unit(self.momentum_eta) {
            return Err(Error::InvalidConfig(format!(
                "momentum eta {} outside (0, 1)",
                self.momentum_eta
            )));
        }
        self.feature_map.validate()
    }
}

/// `S_t` (d_v × d_feat), the step counter, and the momentum accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState<T> {
    pub s: Matrix<T>,
    pub t: usize,
    /// `C_{t}` of the momentum row; `None` until its first update.
    pub momentum: Option<Matrix<T>>,
}

impl<T: Scalar> MemoryState<T> {
    pub fn zeros(d_v: usize, d_feat: usize) -> Self {
        Self::from_matrix(Matrix::zeros(d_v, d_feat))
    }

    pub fn from_matrix(s: Matrix<T>) -> Self {
        Self {
            s,
            t: 0,
            momentum: None,
        }
    }

    /// Plain recall `S φ(q)`.
    pub fn recall(&self, fm: &FeatureMap, q: &[T]) -> Result<Vec<T>> {
        let phi = fm.apply(q)?;
        if phi.len() != self.s.cols() {
            return Err(Error::DimMismatch {
                op: "recall",
                left: self.s.shape(),
                right: (phi.len(), 1),
            });
        }
        Ok((0..self.s.rows())
            .map(|r| crate::numerics::dot(self.s.row(r), &phi))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInput<T> {
    pub k: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> StepInput<T> {
    pub fn new(k: Vec<T>, v: Vec<T>) -> Result<Self> {
        if k.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("step input".into()));
        }
        Ok(Self { k, v })
    }
}
