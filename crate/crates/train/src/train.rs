use std::io::Write;

use deltamem_core::Rng;

use crate::config::{Attention, Curriculum, ModelConfig, Positions, TrainConfig};
use crate::data::{Example, Task};
use crate::error::{TrainError, TrainResult};
use crate::model::{build_model, param_count, BatchStats, Model};
use crate::optim::{lr_at, AdamW};

/// RNG stream for training batches; held-out data uses [`EVAL_STREAM`].
const DATA_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub cur_len: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&StepLog> {
        self.steps.last()
    }

    /// First step at length `len` whose accuracy is at least `acc`.
    pub fn first_reaching(&self, len: usize, acc: f64) -> Option<&StepLog> {
        self.steps.iter().find(|s| s.cur_len == len && s.accuracy >= acc)
    }

    pub fn lengths(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for s in &self.steps {
            if out.last() != Some(&s.cur_len) {
                out.push(s.cur_len);
            }
        }
        out
    }

    /// `step,loss,accuracy,cur_len,lr` with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> TrainResult<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "loss", "accuracy", "cur_len", "lr"])?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                format!("{:e}", s.loss),
                s.accuracy.to_string(),
                s.cur_len.to_string(),
                format!("{:e}", s.lr),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn task_len(task: &Task, tcfg: &TrainConfig) -> TrainResult<(usize, usize)> {
    match (task.fixed_len(), tcfg.curriculum) {
        (Some(_), Curriculum::DoubleAt { .. }) => Err(TrainError::Config(format!(
            "the {} task has a fixed length; a curriculum does not apply",
            task.name()
        ))),
        (Some(l), Curriculum::None) => Ok((l, l)),
        (None, _) => Ok((tcfg.initial_len(), tcfg.final_len())),
    }
}

fn check_vocab(model: &Model, task: &Task) -> TrainResult<()> {
    if model.cfg.vocab_in != task.vocab_in() || model.cfg.vocab_out != task.vocab_out() {
        return Err(TrainError::Config(format!(
            "model vocab ({}, {}) does not match task vocab ({}, {})",
            model.cfg.vocab_in,
            model.cfg.vocab_out,
            task.vocab_in(),
            task.vocab_out()
        )));
    }
    Ok(())
}

/// Trains `model` in place. Every step draws a batch at the current length,
/// logs its loss and accuracy before the update, then applies AdamW.
pub fn train(model: &mut Model, task: &Task, tcfg: &TrainConfig) -> TrainResult<TrainLog> {
    tcfg.validate()?;
    task.validate()?;
    check_vocab(model, task)?;
    let (mut cur_len, final_len) = task_len(task, tcfg)?;
    let mut rng = Rng::new(tcfg.seed).split(DATA_STREAM);
    let mut opt = AdamW::for_config(model.params.values(), tcfg);
    let mut log = TrainLog::default();
    let mut cached: Option<(usize, Vec<Example>)> = None;
    for step in 0..tcfg.epochs {
        let batch = match &cached {
            Some((len, b)) if !tcfg.resample && *len == cur_len => b.clone(),
            _ => {
                let b = task.sample(cur_len, tcfg.batch, &mut rng)?;
                cached = Some((cur_len, b.clone()));
                b
            }
        };
        let lr = lr_at(tcfg.schedule, tcfg.lr, tcfg.warmup_steps, step, tcfg.epochs);
        let (stats, grads) = model.loss_and_grads(&batch, tcfg.threads)?;
        log.steps.push(StepLog {
            step,
            loss: stats.loss,
            accuracy: stats.accuracy(),
            cur_len,
            lr,
        });
        if !stats.loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::Diverged {
                step,
                log: Box::new(log),
            });
        }
        opt.step(model.params.values_mut(), &grads, lr);
        let acc = stats.accuracy();
        if tcfg.target_accuracy.is_some_and(|t| cur_len == final_len && acc >= t) {
            break;
        }
        if let Curriculum::DoubleAt { threshold, max_len, .. } = tcfg.curriculum {
            if acc > threshold && cur_len < max_len {
                cur_len = (cur_len * 2).min(max_len);
            }
        }
    }
    Ok(log)
}

/// Loss and accuracy on `batch` fresh samples drawn from a stream that
/// training never touches.
pub fn evaluate_task(model: &Model, task: &Task, len: usize, batch: usize, seed: u64) -> TrainResult<BatchStats> {
    check_vocab(model, task)?;
    let mut rng = Rng::new(seed).split(EVAL_STREAM);
    let data = task.sample(task.fixed_len().unwrap_or(len), batch, &mut rng)?;
    model.evaluate(&data, None)
}

/// The narrowest standard-attention configuration with at least as many
/// parameters as `cfg`, varying the width in steps of the head count.
pub fn matched_baseline(cfg: &ModelConfig) -> TrainResult<ModelConfig> {
    cfg.validate()?;
    let target = param_count(cfg);
    let step = cfg.num_q_heads;
    (step..=4 * cfg.dim.max(step))
        .step_by(step)
        .map(|dim| ModelConfig {
            dim,
            attention: Attention::Standard,
            ..cfg.clone()
        })
        .filter(|c| !matches!(c.positions, Positions::Rope { .. }) || c.head_dim() % 2 == 0)
        .find(|c| param_count(c) >= target)
        .ok_or_else(|| TrainError::Config("no baseline width fits the constraints".into()))
}

#[derive(Debug, Clone)]
pub struct DagComparison {
    pub delta_params: usize,
    pub baseline_params: usize,
    pub delta_log: TrainLog,
    pub baseline_log: TrainLog,
    pub delta_eval: BatchStats,
    pub baseline_eval: BatchStats,
}

/// Trains `delta_cfg` and its matched standard baseline on `Dag(n)` with the
/// same budget, data seed and held-out set.
pub fn compare_dag(
    n: usize,
    delta_cfg: &ModelConfig,
    tcfg: &TrainConfig,
    eval_batch: usize,
) -> TrainResult<DagComparison> {
    let task = Task::Dag { n };
    let base_cfg = matched_baseline(delta_cfg)?;
    let run = |cfg: &ModelConfig| -> TrainResult<(TrainLog, BatchStats)> {
        let mut m = build_model(cfg, &mut Rng::new(tcfg.seed))?;
        let log = train(&mut m, &task, tcfg)?;
        let eval = evaluate_task(&m, &task, n, eval_batch, tcfg.seed)?;
        Ok((log, eval))
    };
    let (delta_log, delta_eval) = run(delta_cfg)?;
    let (baseline_log, baseline_eval) = run(&base_cfg)?;
    Ok(DagComparison {
        delta_params: param_count(delta_cfg),
        baseline_params: param_count(&base_cfg),
        delta_log,
        baseline_log,
        delta_eval,
        baseline_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch: 4,
            seq_len: 6,
            warmup_steps: 2,
            ..Default::default()
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut m = build_model(&ModelConfig::toy_swap(5), &mut Rng::new(1)).unwrap();
        let log = train(&mut m, &Task::Swap { n: 5 }, &quick(3)).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,loss,accuracy,cur_len,lr");
        assert_eq!(lines.len(), 4);
        assert_eq!(log.lengths(), vec![6]);
    }

    #[test]
    fn vocab_mismatch_rejected() {
        let mut m = build_model(&ModelConfig::toy_swap(5), &mut Rng::new(1)).unwrap();
        assert!(train(&mut m, &Task::Swap { n: 4 }, &quick(1)).is_err());
    }

    #[test]
    fn fixed_length_task_rejects_curriculum() {
        let cfg = ModelConfig {
            vocab_in: Task::Dag { n: 8 }.vocab_in(),
            vocab_out: 2,
            ..ModelConfig::toy_swap(5)
        };
        let mut m = build_model(&cfg, &mut Rng::new(1)).unwrap();
        let t = TrainConfig {
            curriculum: Curriculum::DoubleAt {
                threshold: 0.9,
                start_len: 4,
                max_len: 8,
            },
            ..quick(1)
        };
        assert!(train(&mut m, &Task::Dag { n: 8 }, &t).is_err());
        let log = train(&mut m, &Task::Dag { n: 8 }, &quick(2)).unwrap();
        assert_eq!(log.lengths(), vec![8]);
    }

    #[test]
    fn divergence_returns_log() {
        let mut m = build_model(&ModelConfig::toy_swap(5), &mut Rng::new(1)).unwrap();
        m.params.get_mut("unemb").unwrap().data_mut()[0] = f64::NAN;
        match train(&mut m, &Task::Swap { n: 5 }, &quick(5)) {
            Err(TrainError::Diverged { step, log }) => {
                assert_eq!(step, 0);
                assert_eq!(log.steps.len(), 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn baseline_is_narrowest_at_least_as_large() {
        let delta = ModelConfig {
            vocab_in: 34,
            vocab_out: 2,
            dim: 32,
            num_q_heads: 4,
            num_kv_heads: 4,
            ..ModelConfig::toy_swap(5)
        };
        let base = matched_baseline(&delta).unwrap();
        assert_eq!(base.attention, Attention::Standard);
        assert!(param_count(&base) >= param_count(&delta));
        let narrower = ModelConfig {
            dim: base.dim - base.num_q_heads,
            ..base.clone()
        };
        assert!(param_count(&narrower) < param_count(&delta));
    }
}
