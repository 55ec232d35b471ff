use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use crate::datasets::{sha256_hex, write_atomic};
use crate::error::{Error, Result};
use crate::model::{Ddpae, ModelConfig};
use crate::nn::params::{check_manifest, tensors_from_le_bytes, tensors_to_le_bytes, ParamSpec};

pub const CHECKPOINT_FORMAT: &str = "ddpae-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const META_FILE: &str = "checkpoint.json";
const PARAMS_FILE: &str = "params.bin";
const OPTIMIZER_FILE: &str = "optimizer.bin";
const LATEST_FILE: &str = "latest";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub sha256: String,
}

/// Random-number state needed to continue a run: every stream is derived
/// from `seed` and the iteration index, so the next iteration suffices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_iteration: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub iteration: u64,
    pub config: TrainConfig,
    pub params: Vec<ParamSpec>,
    pub params_sha256: String,
    pub optimizer: OptimizerState,
    pub rng: RngState,
}

fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt-{iteration:08}")
}

/// Write model and optimizer state under `dir/ckpt-<iteration>` and point
/// `dir/latest` at it. Each file is written to a temporary name first.
pub fn save_checkpoint(
    dir: &Path,
    model: &Ddpae,
    optimizer: &Adam,
    config: &TrainConfig,
    iteration: u64,
) -> Result<PathBuf> {
    let target = dir.join(checkpoint_name(iteration));
    let staging = dir.join(format!("{}.tmp", checkpoint_name(iteration)));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

    let params = model.params().to_le_bytes()?;
    let (m, v) = optimizer.moments();
    let moments = tensors_to_le_bytes(m.iter().chain(v.iter()))?;
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        iteration,
        config: config.clone(),
        params: model.params().manifest(),
        params_sha256: sha256_hex(&params),
        optimizer: OptimizerState {
            step: optimizer.steps(),
            beta1: optimizer.beta1,
            beta2: optimizer.beta2,
            eps: optimizer.eps,
            sha256: sha256_hex(&moments),
        },
        rng: RngState {
            seed: config.seed,
            next_iteration: iteration,
        },
    };
    write_atomic(&staging.join(PARAMS_FILE), &params)?;
    write_atomic(&staging.join(OPTIMIZER_FILE), &moments)?;
    write_atomic(&staging.join(META_FILE), &serde_json::to_vec_pretty(&meta)?)?;
    if target.exists() {
        fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
    }
    fs::rename(&staging, &target).map_err(|e| Error::io(&target, e))?;
    write_atomic(&dir.join(LATEST_FILE), checkpoint_name(iteration).as_bytes())?;
    Ok(target)
}

/// Resolve a checkpoint argument: either a checkpoint directory or a run
/// directory whose `latest` file names one.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join(META_FILE).exists() {
        return Ok(path.to_path_buf());
    }
    for dir in [path.to_path_buf(), path.join("checkpoints")] {
        let latest = dir.join(LATEST_FILE);
        if latest.exists() {
            let name = fs::read_to_string(&latest).map_err(|e| Error::io(&latest, e))?;
            return Ok(dir.join(name.trim()));
        }
    }
    Err(Error::Load {
        what: "checkpoint".into(),
        path: path.to_path_buf(),
        reason: format!("no {META_FILE} or {LATEST_FILE} found"),
    })
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::Load {
        what: "checkpoint".into(),
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes)?;
    if meta.format != CHECKPOINT_FORMAT || meta.version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            path,
            expected: format!("{CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}"),
            found: format!("{} v{}", meta.format, meta.version),
        });
    }
    Ok(meta)
}

fn read_verified(path: &Path, sha: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if sha256_hex(&bytes) != sha {
        return Err(Error::Checkpoint {
            field: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            detail: "digest mismatch".into(),
        });
    }
    Ok(bytes)
}

/// Name the first field where two model configs differ.
pub fn check_model_config(expected: &ModelConfig, found: &ModelConfig) -> Result<()> {
    let a = serde_json::to_value(expected)?;
    let b = serde_json::to_value(found)?;
    if let (Some(a), Some(b)) = (a.as_object(), b.as_object()) {
        for (key, va) in a {
            if b.get(key) != Some(va) {
                return Err(Error::Checkpoint {
                    field: format!("model.{key}"),
                    detail: format!("checkpoint has {}, expected {va}", b.get(key).cloned().unwrap_or_default()),
                });
            }
        }
    }
    Ok(())
}

/// A model rebuilt from disk together with its optimizer and metadata.
pub struct LoadedCheckpoint {
    pub model: Ddpae,
    pub optimizer: Adam,
    pub meta: CheckpointMeta,
    pub path: PathBuf,
}

/// Rebuild the model and optimizer stored at `path`, validating every
/// parameter name and shape.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let dir = resolve_checkpoint(path)?;
    let meta = read_meta(&dir)?;
    let model = Ddpae::new(meta.config.model.clone(), meta.config.seed)?;
    check_manifest(&model.params().manifest(), &meta.params)?;
    let params = read_verified(&dir.join(PARAMS_FILE), &meta.params_sha256)?;
    model.params().load_le_bytes(&meta.params, &params)?;

    let mut optimizer = Adam::new(model.params().vars())?;
    let moments = read_verified(&dir.join(OPTIMIZER_FILE), &meta.optimizer.sha256)?;
    let specs: Vec<ParamSpec> = meta.params.iter().chain(meta.params.iter()).cloned().collect();
    let mut tensors = tensors_from_le_bytes(&specs, model.dtype(), &moments)?;
    let v = tensors.split_off(meta.params.len());
    optimizer.restore(meta.optimizer.step, tensors, v)?;
    optimizer.beta1 = meta.optimizer.beta1;
    optimizer.beta2 = meta.optimizer.beta2;
    optimizer.eps = meta.optimizer.eps;
    Ok(LoadedCheckpoint {
        model,
        optimizer,
        meta,
        path: dir,
    })
}
