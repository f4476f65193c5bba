use deltamem_core::Matrix;

use crate::config::{Schedule, TrainConfig};

/// Learning rate after `step` completed steps out of `total`.
pub fn lr_at(schedule: Schedule, base: f64, warmup: usize, step: usize, total: usize) -> f64 {
    match schedule {
        Schedule::Linear => {
            if step < warmup {
                base * step as f64 / warmup as f64
            } else if total <= warmup {
                base
            } else {
                base * ((total - step.min(total)) as f64 / (total - warmup) as f64).max(0.0)
            }
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(shapes: &[Matrix<f64>], weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: shapes.iter().map(|p| vec![0.0; p.data().len()]).collect(),
            v: shapes.iter().map(|p| vec![0.0; p.data().len()]).collect(),
            t: 0,
        }
    }

    pub fn for_config(params: &[Matrix<f64>], tcfg: &TrainConfig) -> Self {
        Self::new(params, tcfg.weight_decay)
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Matrix<f64>], grads: &[Matrix<f64>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &gx), mx), vx) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *x -= lr * self.weight_decay * *x;
                *mx = self.beta1 * *mx + (1.0 - self.beta1) * gx;
                *vx = self.beta2 * *vx + (1.0 - self.beta2) * gx * gx;
                let mhat = *mx / bc1;
                let vhat = *vx / bc2;
                *x -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
