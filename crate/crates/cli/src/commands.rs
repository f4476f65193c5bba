use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use deltamem_core::deltaformer::{
    compute_u_chunked, compute_u_inverse, compute_u_naive, DeltaFormerConfig, SequenceBatch,
};
use deltamem_core::kernels::{capacity_curve, KernelSpec};
use deltamem_core::memory_models::{
    gradient_step_check, FeatureMap, MemoryModel, MemoryState, RecurrentSpec, StepInput,
};
use deltamem_core::state_tracking::{generate_keys, run_tracking, ReadRequest, SwapTrace, TrackingKernel};
use deltamem_core::{Matrix, Rng};
use deltamem_train::{
    build_model, evaluate_task, expected_ordering, head_tradeoff_with, train as train_model, Attention, Curriculum,
    HeadAttention, HeadTradeoffSetup, ModelConfig, Positions, StepLog, Task, TrainConfig, TrainLog,
};

use crate::error::CliError;
use crate::kernel::KernelName;
use crate::manifest::{unix_now, RunManifest};
use crate::settings::{List, Settings};
use crate::{Common, EquivalenceArgs, HeadArgs, SnrArgs, TrackArgs, TrainArgs};

/// Where a command's files go. Without a directory, the main CSV goes to
/// stdout and nothing else is written.
struct RunDir {
    dir: Option<PathBuf>,
    written: Vec<PathBuf>,
}

impl RunDir {
    fn new(dir: Option<PathBuf>) -> Result<Self, CliError> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(Self {
            dir,
            written: Vec::new(),
        })
    }

    fn file(&mut self, path: &Path) -> Result<Box<dyn Write>, CliError> {
        self.written.push(path.to_path_buf());
        Ok(Box::new(BufWriter::new(File::create(path)?)))
    }

    /// `name` inside the run directory, or stdout.
    fn csv(&mut self, name: &str) -> Result<csv::Writer<Box<dyn Write>>, CliError> {
        let sink = match self.dir.clone() {
            Some(d) => self.file(&d.join(name))?,
            None => Box::new(io::stdout()),
        };
        Ok(csv::Writer::from_writer(sink))
    }

    fn finish(self, manifest: RunManifest) -> Result<(), CliError> {
        if let Some(d) = &self.dir {
            manifest.write(d, &self.written)?;
        }
        Ok(())
    }
}

fn start(common: &Common, command: &str) -> Result<(Settings, RunDir, u64, u64), CliError> {
    let mut settings = Settings::load(common.config.as_deref(), command)?;
    let started = unix_now();
    let seed = settings.value("seed", common.seed, 0u64)?;
    let dir = settings.optional("out-dir", common.out_dir.as_ref().map(|p| p.display().to_string()))?;
    Ok((settings, RunDir::new(dir.map(PathBuf::from))?, seed, started))
}

/// Shortest round-trip text, switching to scientific notation for very
/// small or very large magnitudes.
fn num(x: f64) -> String {
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&x.abs()) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn positive(name: &str, v: usize) -> Result<usize, CliError> {
    if v == 0 {
        Err(CliError::Usage(format!("--{name} must be positive")))
    } else {
        Ok(v)
    }
}

pub fn snr(a: SnrArgs) -> Result<(), CliError> {
    let (mut s, mut run, seed, started) = start(&a.common, "snr")?;
    let kernel = s.value("kernel", a.kernel, KernelName::Linear)?.require(
        "kernel",
        &[KernelName::Linear, KernelName::Exp, KernelName::Relu, KernelName::Solu],
    )?;
    let dk = positive("dk", s.required("dk", a.dk)?)?;
    let n_list = s.value("n-list", a.n_list, List(vec![16, 32, 64]))?;
    let trials = positive("trials", s.value("trials", a.trials, 2000)?)?;
    let tau = s.optional("tau", a.tau)?;
    let out = s.optional("out", a.out.map(|p| p.display().to_string()))?;
    let config = s.finish()?;

    let spec = kernel.spec(tau, 2);
    let rows = capacity_curve(&spec, dk, &n_list.0, trials, &Rng::new(seed))?;
    let mut w = match out {
        Some(p) => csv::Writer::from_writer(run.file(Path::new(&p))?),
        None => run.csv("snr.csv")?,
    };
    w.write_record(["kernel", "dk", "n", "closed_form", "mc_mean", "mc_stderr"])?;
    for r in &rows {
        w.write_record([
            kernel.to_string(),
            dk.to_string(),
            r.n.to_string(),
            r.closed_form.map(num).unwrap_or_default(),
            num(r.mc_mean),
            num(r.mc_stderr),
        ])?;
    }
    w.flush()?;
    drop(w);
    eprintln!("snr: {} rows for kernel {kernel}, dk {dk}", rows.len());
    run.finish(RunManifest::new("snr", config, seed, started))
}

fn random_sequence(rng: &mut Rng, t: usize, d: usize, key_scale: f64) -> Result<SequenceBatch<f64>, CliError> {
    let q = rng.gaussian_matrix(t, d, 1.0);
    let k = rng.gaussian_matrix(t, d, key_scale);
    let v = rng.gaussian_matrix(t, d, 1.0);
    Ok(SequenceBatch::new(q, k, v)?)
}

fn relative_gap(reference: &Matrix<f64>, other: &Matrix<f64>) -> Result<f64, CliError> {
    Ok(reference.max_abs_diff(other)? / reference.max_abs().max(1.0))
}

const GRAD_DK: usize = 3;
const GRAD_DV: usize = 4;
const GRAD_TOL: f64 = 1e-6;

/// Worst relative gap between each memory update and a gradient step on its
/// loss, over random states and inputs.
fn gradient_rows(model: MemoryModel, trials: usize, rng: &mut Rng) -> Result<f64, CliError> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut spec = RecurrentSpec::new(model)
            .with_gate((0..GRAD_DV).map(|_| 0.05 + 0.9 * rng.uniform()).collect())
            .with_eta(0.05 + 0.9 * rng.uniform());
        if model.is_softmax() {
            spec = spec.with_feature_map(FeatureMap::TaylorExp { order: 2, tau: 1.5 });
        }
        let df = spec.feature_map.dim(GRAD_DK);
        let mut state = MemoryState::from_matrix(rng.gaussian_matrix(GRAD_DV, df, 1.0));
        state.t = rng.below(20);
        if model == MemoryModel::DeltaNetMomentum && state.t > 0 {
            state.momentum = Some(rng.gaussian_matrix(GRAD_DV, df, 1.0));
        }
        let input = StepInput::new(rng.gaussian_vec(GRAD_DK, 0.6), rng.gaussian_vec(GRAD_DV, 1.0))?;
        worst = worst.max(gradient_step_check(&spec, &state, &input, 1e-6)?);
    }
    Ok(worst)
}

pub fn equivalence(a: EquivalenceArgs) -> Result<(), CliError> {
    let (mut s, mut run, seed, started) = start(&a.common, "equivalence")?;
    let t = positive("t", s.value("t", a.t, 1024)?)?;
    let chunk = positive("chunk", s.value("chunk", a.chunk, 32)?)?;
    let kernel = s.value("kernel1", a.kernel1, KernelName::SoftmaxZ)?.require(
        "kernel1",
        &[
            KernelName::SoftmaxZ,
            KernelName::Exp,
            KernelName::Linear,
            KernelName::Relu,
            KernelName::Solu,
        ],
    )?;
    let trials = positive("trials", s.value("trials", a.trials, 1)?)?;
    let d = positive("d", s.value("d", a.d, 16)?)?;
    let key_scale = s.value("key-scale", a.key_scale, 1.0)?;
    let tol = s.value("tol", a.tol, 1e-5)?;
    let config = s.finish()?;

    let cfg = match kernel {
        KernelName::SoftmaxZ => DeltaFormerConfig {
            chunk_size: chunk,
            ..Default::default()
        },
        k => DeltaFormerConfig {
            chunk_size: chunk,
            ..DeltaFormerConfig::unnormalized(k.spec(None, 2), KernelSpec::softmax())
        },
    };
    cfg.validate()?;

    let rng = Rng::new(seed);
    let (mut inv_gap, mut chunk_gap, mut cross_gap) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..trials {
        let seq = random_sequence(&mut rng.split(trial as u64), t, d, key_scale)?;
        let naive = compute_u_naive(&cfg, &seq)?;
        let inv = compute_u_inverse(&cfg, &seq)?;
        let chunked = compute_u_chunked(&cfg, &seq)?;
        inv_gap = inv_gap.max(relative_gap(&naive, &inv)?);
        chunk_gap = chunk_gap.max(relative_gap(&naive, &chunked)?);
        cross_gap = cross_gap.max(relative_gap(&inv, &chunked)?);
    }
    let mut rows = vec![
        ("u_naive_vs_inverse".to_string(), inv_gap, tol),
        ("u_naive_vs_chunked".to_string(), chunk_gap, tol),
        ("u_inverse_vs_chunked".to_string(), cross_gap, tol),
    ];
    let mut grad_rng = rng.split(u64::MAX);
    for model in MemoryModel::ALL {
        rows.push((
            format!("gradient_step_{}", model.name()),
            gradient_rows(model, 20 * trials, &mut grad_rng)?,
            GRAD_TOL,
        ));
    }

    let mut w = run.csv("equivalence.csv")?;
    w.write_record(["check", "max_discrepancy", "tolerance", "pass"])?;
    let mut failed = Vec::new();
    for (name, gap, tol) in &rows {
        let pass = *gap < *tol;
        if !pass {
            failed.push(name.clone());
        }
        w.write_record([name.clone(), num(*gap), num(*tol), pass.to_string()])?;
        eprintln!(
            "{name}: {gap:.3e} (tol {tol:.0e}) {}",
            if pass { "pass" } else { "FAIL" }
        );
    }
    w.flush()?;
    drop(w);
    run.finish(RunManifest::new("equivalence", config, seed, started))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("over tolerance: {}", failed.join(", "))))
    }
}

pub fn track(a: TrackArgs) -> Result<(), CliError> {
    let (mut s, mut run, seed, started) = start(&a.common, "track")?;
    let n = s.value("n", a.n, 5)?;
    let d = positive("d", s.value("d", a.d, 12)?)?;
    let swaps = s.value("swaps", a.swaps, 16)?;
    let eps = s.value("eps", a.eps, 0.12)?;
    let compact = s.optional("compact-every", a.compact_every)?;
    let kernel = s
        .value("kernel1", a.kernel1, KernelName::Round)?
        .require("kernel1", &[KernelName::Round, KernelName::Linear])?;
    let config = s.finish()?;

    let rng = Rng::new(seed);
    let ensemble = generate_keys(n, d, eps, &mut rng.split(0), 20)?;
    let trace = SwapTrace::random(n, swaps, &mut rng.split(1))?;
    let reads = if swaps == 0 {
        ReadRequest::everything(n, 0)
    } else {
        ReadRequest::each_step(0, swaps)
    };
    let tk = match kernel {
        KernelName::Round => TrackingKernel::Lattice,
        _ => TrackingKernel::Linear,
    };
    let report = run_tracking(&ensemble, &trace, &reads, compact, tk)?;

    let mut w = run.csv("track.csv")?;
    w.write_record(["read", "step", "position", "exact", "argmax_correct"])?;
    for (r, req) in report.reads.iter().zip(&reads) {
        w.write_record([
            r.read_index.to_string(),
            r.step.to_string(),
            req.position.to_string(),
            r.exact.to_string(),
            r.argmax_correct.to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);
    let total = report.reads.len();
    eprintln!(
        "track: kernel {kernel}, eps {:.4}, exact {}/{total}, argmax {}/{total}, max cache {}",
        ensemble.epsilon,
        report.exact_count(),
        report.argmax_count(),
        report.max_cache_len
    );
    run.finish(RunManifest::new("track", config, seed, started))?;
    if kernel == KernelName::Round && !report.all_exact() {
        return Err(CliError::Failed(format!(
            "{} of {total} reads inexact",
            total - report.exact_count()
        )));
    }
    Ok(())
}

fn parse_curriculum(text: &str) -> Result<Curriculum, CliError> {
    if text.eq_ignore_ascii_case("none") {
        return Ok(Curriculum::None);
    }
    let bad = || CliError::Usage(format!("--curriculum expects start:max:threshold, got {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    let [start, max, threshold] = parts[..] else {
        return Err(bad());
    };
    Ok(Curriculum::DoubleAt {
        start_len: start.parse().map_err(|_| bad())?,
        max_len: max.parse().map_err(|_| bad())?,
        threshold: threshold.parse().map_err(|_| bad())?,
    })
}

fn write_log(run: &mut RunDir, log: &TrainLog) -> Result<(), CliError> {
    match run.dir.clone() {
        Some(d) => log.write_csv(run.file(&d.join("log.csv"))?)?,
        None => log.write_csv(io::stdout())?,
    }
    Ok(())
}

pub fn train(a: TrainArgs, threads: Option<usize>) -> Result<(), CliError> {
    let (mut s, mut run, seed, started) = start(&a.common, "train")?;
    let task_name = s.value("task", a.task, "swap".to_string())?;
    let n = s.value("n", a.n, 5)?;
    let task = match task_name.as_str() {
        "swap" => Task::Swap { n },
        "dag" => Task::Dag { n },
        other => return Err(CliError::Usage(format!("--task must be swap or dag, got {other:?}"))),
    };
    let attn_name = s.value("attn", a.attn, "deltaformer".to_string())?;
    let k1 = s.value("kernel1", a.kernel1, KernelName::Round)?.require(
        "kernel1",
        &[
            KernelName::Round,
            KernelName::Linear,
            KernelName::Relu,
            KernelName::Exp,
            KernelName::Solu,
            KernelName::Softmax,
        ],
    )?;
    let k2 = s.value("kernel2", a.kernel2, KernelName::Softmax)?.require(
        "kernel2",
        &[
            KernelName::Softmax,
            KernelName::Linear,
            KernelName::Round,
            KernelName::Relu,
        ],
    )?;
    let decimals = s.value("round-decimals", a.round_decimals, 2)?;
    let attention = match attn_name.as_str() {
        "standard" => Attention::Standard,
        "linear" => Attention::Linear,
        "deltaformer" => Attention::deltaformer(k1.spec(None, decimals), k2.spec(None, decimals)),
        other => {
            return Err(CliError::Usage(format!(
                "--attn must be standard, linear or deltaformer, got {other:?}"
            )))
        }
    };
    let default_curriculum = match task {
        Task::Swap { .. } => "32:256:0.99",
        _ => "none",
    };
    let curriculum = parse_curriculum(&s.value("curriculum", a.curriculum, default_curriculum.to_string())?)?;
    let pos = s.value("pos", a.pos, "nope".to_string())?;
    let positions = match pos.as_str() {
        "nope" => Positions::NoPE,
        "rope" => Positions::Rope {
            base: s.value("rope-base", a.rope_base, 10000.0)?,
        },
        other => return Err(CliError::Usage(format!("--pos must be rope or nope, got {other:?}"))),
    };
    let defaults = TrainConfig::default();
    let tcfg = TrainConfig {
        lr: s.value("lr", a.lr, defaults.lr)?,
        weight_decay: s.value("weight-decay", a.weight_decay, defaults.weight_decay)?,
        warmup_steps: s.value("warmup", a.warmup, defaults.warmup_steps)?,
        epochs: s.value("steps", a.steps, defaults.epochs)?,
        batch: s.value("batch", a.batch, defaults.batch)?,
        curriculum,
        seq_len: s.value("seq-len", a.seq_len, defaults.seq_len)?,
        seed,
        target_accuracy: s.optional("target-accuracy", a.target_accuracy)?,
        threads,
        ..defaults
    };
    let toy = ModelConfig::toy_swap(5);
    let cfg = ModelConfig {
        vocab_in: task.vocab_in(),
        vocab_out: task.vocab_out(),
        dim: s.value("dim", a.dim, toy.dim)?,
        n_layers: s.value("layers", a.layers, toy.n_layers)?,
        num_q_heads: s.value("heads", a.heads, toy.num_q_heads)?,
        num_kv_heads: s.value("kv-heads", a.kv_heads, toy.num_kv_heads)?,
        attention,
        positions,
        ..toy
    };
    let eval_batch = positive("eval-batch", s.value("eval-batch", a.eval_batch, 128)?)?;
    let config = s.finish()?;
    task.validate()?;
    cfg.validate()?;

    let mut model = build_model(&cfg, &mut Rng::new(seed))?;
    let final_len = match task.fixed_len() {
        Some(l) => l,
        None => tcfg.final_len(),
    };

    if tcfg.epochs == 0 {
        tcfg.validate()?;
        let initial = evaluate_task(&model, &task, tcfg.initial_len(), eval_batch, seed)?;
        eprintln!(
            "initial_loss {} (ln vocab_out = {})",
            initial.loss,
            (task.vocab_out() as f64).ln()
        );
        let log = TrainLog {
            steps: vec![StepLog {
                step: 0,
                loss: initial.loss,
                accuracy: initial.accuracy(),
                cur_len: task.fixed_len().unwrap_or(tcfg.initial_len()),
                lr: 0.0,
            }],
        };
        write_log(&mut run, &log)?;
        return run.finish(RunManifest::new("train", config, seed, started));
    }

    let log = match train_model(&mut model, &task, &tcfg) {
        Ok(log) => log,
        Err(deltamem_train::TrainError::Diverged { step, log }) => {
            write_log(&mut run, &log)?;
            run.finish(RunManifest::new("train", config, seed, started))?;
            return Err(CliError::Failed(format!("training diverged at step {step}")));
        }
        Err(e) => return Err(e.into()),
    };
    write_log(&mut run, &log)?;
    if let Some(d) = run.dir.clone() {
        let mut out = run.file(&d.join("checkpoint.bin"))?;
        model.params.write_checkpoint(&mut out)?;
        out.flush()?;
    }
    let eval = evaluate_task(&model, &task, final_len, eval_batch, seed)?;
    let last = log.last().cloned();
    eprintln!(
        "train: {} steps, final length {}, eval loss {:.4}, eval accuracy {:.4} at length {final_len}",
        log.steps.len(),
        last.map(|l| l.cur_len).unwrap_or(0),
        eval.loss,
        eval.accuracy()
    );
    run.finish(RunManifest::new("train", config, seed, started))?;
    match tcfg.target_accuracy {
        Some(t) if log.first_reaching(final_len, t).is_none() => Err(CliError::Failed(format!(
            "accuracy {t} not reached at length {final_len}"
        ))),
        _ => Ok(()),
    }
}

pub fn headtradeoff(a: HeadArgs, threads: Option<usize>) -> Result<(), CliError> {
    let (mut s, mut run, seed, started) = start(&a.common, "headtradeoff")?;
    let heads = s.value("heads", a.heads, List(vec![1, 4, 8]))?;
    let kind = match s.value("attn", a.attn, "linear".to_string())?.as_str() {
        "linear" => HeadAttention::LinearRmsNorm,
        "softmax" => HeadAttention::SoftmaxRmsNorm,
        other => {
            return Err(CliError::Usage(format!(
                "--attn must be linear or softmax, got {other:?}"
            )))
        }
    };
    let base = HeadTradeoffSetup::default();
    let Task::PairRecall { keys, values, reads } = base.task else {
        unreachable!("the default trade-off task is pair recall")
    };
    let setup = HeadTradeoffSetup {
        dim: s.value("dim", a.dim, base.dim)?,
        task: Task::PairRecall {
            keys: s.value("keys", a.keys, keys)?,
            values: s.value("values", a.values, values)?,
            reads: s.value("reads", a.reads, reads)?,
        },
        eval_batch: positive("eval-batch", s.value("eval-batch", a.eval_batch, base.eval_batch)?)?,
        ..base
    };
    let quick = HeadTradeoffSetup::quick_train_config();
    let tcfg = TrainConfig {
        epochs: s.value("steps", a.steps, quick.epochs)?,
        batch: s.value("batch", a.batch, quick.batch)?,
        lr: s.value("lr", a.lr, quick.lr)?,
        seed,
        threads,
        ..quick
    };
    let config = s.finish()?;
    for &h in &heads.0 {
        if h == 0 || !setup.dim.is_multiple_of(h) {
            return Err(CliError::Usage(format!(
                "head count {h} does not divide dim {}",
                setup.dim
            )));
        }
    }

    let rows = head_tradeoff_with(&heads.0, kind, &tcfg, &setup)?;
    let mut w = run.csv("heads.csv")?;
    w.write_record(["heads", "attention", "final_loss", "final_accuracy"])?;
    for r in &rows {
        w.write_record([
            r.heads.to_string(),
            r.kind.name().to_string(),
            num(r.final_loss),
            num(r.final_accuracy),
        ])?;
    }
    w.flush()?;
    drop(w);
    let ordering = match expected_ordering(&rows) {
        Some(true) => "holds",
        Some(false) => "violated",
        None => "n/a",
    };
    eprintln!("headtradeoff: {} rows, expected ordering {ordering}", rows.len());
    run.finish(RunManifest::new("headtradeoff", config, seed, started))
}
