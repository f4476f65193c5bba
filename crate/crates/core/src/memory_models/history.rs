use super::{MemoryModel, RecurrentSpec, StepInput};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::numerics::dot;

/// Memory kept as `(k_i, v_i, w_i)` triples; recall is `Σ w_i κ(k_i, q) v_i`.
///
/// Lets the softmax rows run with the exact exponential kernel instead of a
/// truncated feature map. Scalar schedules go into the weights; gates scale
/// the stored values.
#[derive(Debug, Clone)]
pub struct HistoryMemory {
    spec: RecurrentSpec,
    kernel: KernelSpec,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    weights: Vec<f64>,
    t: usize,
}

impl HistoryMemory {
    pub fn new(spec: RecurrentSpec, kernel: KernelSpec) -> Result<Self> {
        kernel.validate()?;
        if spec.model == MemoryModel::DeltaNetMomentum {
            return Err(Error::Unsupported("momentum has no history representation".into()));
        }
        if matches!(kernel, KernelSpec::SoftmaxRow { .. }) {
            return Err(Error::Unsupported(
                "history memories take an unnormalised kernel".into(),
            ));
        }
        Ok(Self {
            spec,
            kernel,
            keys: Vec::new(),
            values: Vec::new(),
            weights: Vec::new(),
            t: 0,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    fn kappa(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.kernel.apply(dot(a, b), a.len())
    }

    pub fn update(&mut self, input: &StepInput<f64>) -> Result<()> {
        if let Some(k0) = self.keys.first() {
            if k0.len() != input.k.len() || self.values[0].len() != input.v.len() {
                return Err(Error::DimMismatch {
                    op: "HistoryMemory::update",
                    left: (self.values[0].len(), k0.len()),
                    right: (input.v.len(), input.k.len()),
                });
            }
        }
        self.spec.validate(input.v.len())?;
        self.t += 1;
        let tf = self.t as f64;
        let model = self.spec.model;
        if matches!(model, MemoryModel::SoftmaxNorm | MemoryModel::GatedSoftmaxNorm) {
            let decay = (tf - 1.0) / tf;
            self.weights.iter_mut().for_each(|w| *w *= decay);
        }
        if model.is_gated() {
            for v in &mut self.values {
                for (x, &l) in v.iter_mut().zip(&self.spec.gate_lambda) {
                    *x *= l;
                }
            }
        }
        let mut v = input.v.clone();
        if model == MemoryModel::DeltaNet {
            for i in 0..self.len() {
                let c = self.weights[i] * self.kappa(&self.keys[i], &input.k)?;
                for (x, &u) in v.iter_mut().zip(&self.values[i]) {
                    *x -= c * u;
                }
            }
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Explosion { step: self.t });
        }
        let w = match model {
            MemoryModel::SoftmaxNorm | MemoryModel::GatedSoftmaxNorm => 1.0 / tf,
            _ => 1.0,
        };
        self.keys.push(input.k.clone());
        self.values.push(v);
        self.weights.push(w);
        Ok(())
    }

    pub fn recall(&self, q: &[f64]) -> Result<Vec<f64>> {
        let dv = self.values.first().map_or(0, Vec::len);
        let mut out = vec![0.0; dv];
        for ((k, v), &w) in self.keys.iter().zip(&self.values).zip(&self.weights) {
            let c = w * self.kappa(k, q)?;
            for (o, &x) in out.iter_mut().zip(v) {
                *o += c * x;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_norm_weights_are_uniform() {
        let mut h = HistoryMemory::new(RecurrentSpec::new(MemoryModel::SoftmaxNorm), KernelSpec::exp()).unwrap();
        for t in 1..=7 {
            h.update(&StepInput::new(vec![t as f64 * 0.1, 0.2], vec![1.0]).unwrap())
                .unwrap();
            for &w in h.weights() {
                assert!((w - 1.0 / t as f64).abs() < 1e-15);
            }
            assert_eq!(*h.weights().last().unwrap(), 1.0 / t as f64);
        }
    }

    #[test]
    fn rejects_momentum() {
        assert!(HistoryMemory::new(RecurrentSpec::new(MemoryModel::DeltaNetMomentum), KernelSpec::Linear).is_err());
    }
}
