//! Objective, optimizer, training loop, checkpoints and gradient checks.

mod adam;
mod checkpoint;
mod config;
mod data;
mod gradcheck;
mod loss;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::{
    check_model_config, load_checkpoint, read_meta, resolve_checkpoint, save_checkpoint, CheckpointMeta,
    LoadedCheckpoint, OptimizerState, RngState, CHECKPOINT_FORMAT,
};
pub use config::{DataSource, TrainConfig, PROFILES};
pub use data::{batch_tensors, BatchSource, FixedSetSource, GeneratorSource};
pub use gradcheck::{grad_check, GradCheckReport, GroupError};
pub use loss::{elbo_loss, gaussian_kl, reconstruction_nll, LossBreakdown, Phase, PriorSpec, BCE_EPS};

pub use crate::model::reparameterize;
use crate::datasets::sequence_rng;
use crate::error::{Error, Result};
use crate::model::{Ddpae, Sampling};

const NOISE_STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub total: f64,
    pub prediction_nll: f64,
    pub reconstruction_nll: f64,
    pub kl_content: f64,
    pub kl_initial_pose: f64,
    pub kl_beta: f64,
    pub kl_pred_beta: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub phase: Phase,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    /// Seconds since this process started training.
    pub wall_time: f64,
}

impl MetricsRecord {
    /// The record without its clock fields, for reproducibility checks.
    pub fn without_clock(&self) -> Self {
        Self {
            timestamp: 0.0,
            wall_time: 0.0,
            ..self.clone()
        }
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Learning rate in effect for zero-based update `index`.
pub fn learning_rate(config: &TrainConfig, index: u64) -> f64 {
    if index < config.lr_decay_iteration() {
        config.lr_initial
    } else {
        config.lr_final
    }
}

pub fn phase_at(config: &TrainConfig, index: u64) -> Phase {
    if index < config.phase_switch_iteration() {
        Phase::Both
    } else {
        Phase::PredictionOnly
    }
}

/// Latent-noise stream for zero-based update `index`.
pub fn noise_rng(seed: u64, index: u64) -> rand_chacha::ChaCha8Rng {
    sequence_rng(seed ^ NOISE_STREAM_SALT, index)
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub final_iteration: u64,
    pub last_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub last_record: Option<MetricsRecord>,
}

/// Loss and gradients of one batch.
pub struct StepResult {
    pub loss: Tensor,
    pub breakdown: LossBreakdown,
    pub grads: Vec<Option<Tensor>>,
    pub grad_norm: f64,
}

/// Forward and backward pass for zero-based update `index`.
pub fn compute_step(model: &Ddpae, config: &TrainConfig, inputs: &Tensor, targets: &Tensor, index: u64) -> Result<StepResult> {
    let mut rng = noise_rng(config.seed, index);
    let out = model.forward(inputs, targets.dim(1)?, &mut Sampling::Random(&mut rng))?;
    let (loss, breakdown) = elbo_loss(
        &out,
        inputs,
        targets,
        &config.priors,
        phase_at(config, index),
        config.kl_weight,
    )?;
    if !breakdown.is_finite() {
        return Ok(StepResult {
            loss,
            breakdown,
            grads: Vec::new(),
            grad_norm: f64::NAN,
        });
    }
    let store = loss.backward()?;
    let mut sq = 0.0;
    let mut grads = Vec::with_capacity(model.params().vars().len());
    for (_, var) in model.params().vars() {
        let g = store.get(var.as_tensor()).cloned();
        if let Some(g) = &g {
            sq += g.to_dtype(candle_core::DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
        grads.push(g);
    }
    Ok(StepResult {
        loss,
        breakdown,
        grads,
        grad_norm: sq.sqrt(),
    })
}

fn keep_log_prefix(path: &Path, before: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<String> = read_metrics(path)?
        .into_iter()
        .filter(|r| r.iteration <= before)
        .map(|r| serde_json::to_string(&r))
        .collect::<std::result::Result<_, _>>()?;
    let mut text = kept.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    crate::datasets::write_atomic(path, text.as_bytes())
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Run (or continue) training.
///
/// Writes `metrics.jsonl` with one record per update and checkpoints under
/// `checkpoints/` every `checkpoint_every` updates and at the end. A
/// non-finite loss or gradient stops the run with [`Error::NonFinite`],
/// leaving the last good checkpoint in place.
pub fn train(config: &TrainConfig, source: &dyn BatchSource, opts: &TrainOptions) -> Result<TrainSummary> {
    config.validate()?;
    let ckpt_dir = opts.out_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let metrics_path = opts.out_dir.join(METRICS_FILE);

    let (model, mut optimizer, start) = match &opts.resume {
        Some(path) => {
            let loaded = load_checkpoint(path)?;
            check_model_config(&config.model, &loaded.meta.config.model)?;
            if loaded.meta.config.seed != config.seed {
                return Err(Error::Checkpoint {
                    field: "seed".into(),
                    detail: format!("checkpoint has {}, config has {}", loaded.meta.config.seed, config.seed),
                });
            }
            keep_log_prefix(&metrics_path, loaded.meta.iteration)?;
            (loaded.model, loaded.optimizer, loaded.meta.iteration)
        }
        None => {
            let model = Ddpae::new(config.model.clone(), config.seed)?;
            let optimizer = Adam::new(model.params().vars())?;
            if metrics_path.exists() {
                fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
            }
            (model, optimizer, 0)
        }
    };

    let mut checkpoints = Vec::new();
    let mut last_checkpoint = if start == 0 && opts.resume.is_none() {
        let p = save_checkpoint(&ckpt_dir, &model, &optimizer, config, 0)?;
        checkpoints.push(p.clone());
        p
    } else {
        resolve_checkpoint(opts.resume.as_deref().unwrap_or(&ckpt_dir))?
    };

    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;
    let clock = Instant::now();
    let mut last_record = None;
    let dtype = model.dtype();

    for index in start..config.iterations {
        let iteration = index + 1;
        let batch = source.batch(index, config.batch_size)?;
        let (inputs, targets) = batch_tensors(&batch, dtype)?;
        let step = compute_step(&model, config, &inputs, &targets, index)?;
        if !step.breakdown.is_finite() || !step.grad_norm.is_finite() {
            return Err(Error::NonFinite {
                iteration,
                last_checkpoint: Some(last_checkpoint.clone()),
            });
        }
        let lr = learning_rate(config, index);
        optimizer.step(model.params().vars(), &step.grads, lr)?;

        let b = step.breakdown;
        let record = MetricsRecord {
            iteration,
            total: b.total,
            prediction_nll: b.prediction_nll,
            reconstruction_nll: b.reconstruction_nll,
            kl_content: b.kl_content,
            kl_initial_pose: b.kl_initial_pose,
            kl_beta: b.kl_beta,
            kl_pred_beta: b.kl_pred_beta,
            grad_norm: step.grad_norm,
            lr,
            phase: phase_at(config, index),
            timestamp: unix_now(),
            wall_time: clock.elapsed().as_secs_f64(),
        };
        writeln!(log, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(&metrics_path, e))?;
        if iteration % 100 == 0 || iteration == config.iterations {
            log::info!("iteration {iteration}/{}: loss {:.3}", config.iterations, b.total);
        } else {
            log::debug!("iteration {iteration}: loss {:.3}", b.total);
        }
        last_record = Some(record);

        if iteration % config.checkpoint_every == 0 || iteration == config.iterations {
            log.flush().map_err(|e| Error::io(&metrics_path, e))?;
            last_checkpoint = save_checkpoint(&ckpt_dir, &model, &optimizer, config, iteration)?;
            checkpoints.push(last_checkpoint.clone());
        }
    }
    log.flush().map_err(|e| Error::io(&metrics_path, e))?;
    Ok(TrainSummary {
        final_iteration: config.iterations.max(start),
        last_checkpoint,
        metrics_path,
        checkpoints,
        last_record,
    })
}
