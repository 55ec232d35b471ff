use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::loss::PriorSpec;
use crate::datasets::{BallConfig, DatasetConfig, MovingMnistConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Where training clips come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DataSource {
    /// Fresh clips from the generator every iteration.
    OnTheFly,
    /// Clips drawn from a pre-generated fixed set.
    FixedSet { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub profile: Option<String>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub priors: PriorSpec,
    pub iterations: u64,
    pub batch_size: usize,
    #[serde(default = "defaults::lr_initial")]
    pub lr_initial: f64,
    #[serde(default = "defaults::lr_final")]
    pub lr_final: f64,
    /// Iteration at which the learning rate drops; defaults to the midpoint.
    #[serde(default)]
    pub lr_decay_at: Option<u64>,
    /// First iteration trained on the prediction loss alone; defaults to the
    /// midpoint. Set it to `iterations` to keep both losses throughout.
    #[serde(default)]
    pub phase_switch: Option<u64>,
    #[serde(default = "defaults::kl_weight")]
    pub kl_weight: f64,
    pub seed: u64,
    #[serde(default = "defaults::checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default = "defaults::data_source")]
    pub data: DataSource,
}

mod defaults {
    use super::DataSource;
    pub fn lr_initial() -> f64 {
        1e-3
    }
    pub fn lr_final() -> f64 {
        1e-4
    }
    pub fn kl_weight() -> f64 {
        1.0
    }
    pub fn checkpoint_every() -> u64 {
        1000
    }
    pub fn data_source() -> DataSource {
        DataSource::OnTheFly
    }
}

/// Names accepted by [`TrainConfig::profile`].
/// Encoder width used by the desk profiles; keeps one 15k-iteration run
/// within a few CPU hours.
pub const DESK_BASE_CHANNELS: usize = 8;

pub const PROFILES: &[&str] = &["mnist-1", "mnist-2", "mnist-var", "balls-4", "mnist-2-full"];

impl TrainConfig {
    /// Named configuration. Desk profiles train 15k iterations at batch 32;
    /// `mnist-2-full` is the 200k-iteration schedule.
    pub fn profile(name: &str) -> Result<Self> {
        let desk = |n: usize| {
            let mut m = ModelConfig::new(64, n);
            m.base_channels = DESK_BASE_CHANNELS;
            m
        };
        let mnist = |digits: Vec<usize>, n: usize| {
            (
                DatasetConfig::MovingMnist(MovingMnistConfig::with_digits(digits)),
                desk(n),
                PriorSpec::with_scale(2.0),
            )
        };
        let (dataset, model, priors, iterations) = match name {
            "mnist-1" => {
                let (d, m, p) = mnist(vec![1], 1);
                (d, m, p, 15_000)
            }
            "mnist-2" => {
                let (d, m, p) = mnist(vec![2], 2);
                (d, m, p, 15_000)
            }
            "mnist-var" => {
                let (d, m, p) = mnist(vec![1, 2, 3], 3);
                (d, m, p, 15_000)
            }
            "mnist-2-full" => {
                let (d, mut m, p) = mnist(vec![2], 2);
                m.base_channels = 64;
                (d, m, p, 200_000)
            }
            "balls-4" => {
                let d = DatasetConfig::BouncingBalls(BallConfig {
                    frame_size: 64,
                    ..BallConfig::default()
                });
                let mut m = desk(4);
                m.initial_scale = 4.0;
                (d, m, PriorSpec::with_scale(4.0), 15_000)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown profile {other:?}; expected one of {}",
                    PROFILES.join(", ")
                )))
            }
        };
        Ok(Self {
            profile: Some(name.to_string()),
            dataset,
            model,
            priors,
            iterations,
            batch_size: 32,
            lr_initial: defaults::lr_initial(),
            lr_final: defaults::lr_final(),
            lr_decay_at: None,
            phase_switch: None,
            kl_weight: defaults::kl_weight(),
            seed: 0,
            checkpoint_every: defaults::checkpoint_every(),
            data: DataSource::OnTheFly,
        })
    }

    pub fn lr_decay_iteration(&self) -> u64 {
        self.lr_decay_at.unwrap_or(self.iterations / 2)
    }

    pub fn phase_switch_iteration(&self) -> u64 {
        self.phase_switch.unwrap_or(self.iterations / 2)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.priors.validate()?;
        if self.dataset.frame_size() != self.model.frame_size {
            return Err(Error::Config(format!(
                "dataset frame size {} differs from model frame size {}",
                self.dataset.frame_size(),
                self.model.frame_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for (name, lr) in [("lr_initial", self.lr_initial), ("lr_final", self.lr_final)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.phase_switch_iteration() > self.iterations {
            return Err(Error::Config(format!(
                "phase_switch {} exceeds iterations {}",
                self.phase_switch_iteration(),
                self.iterations
            )));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config(format!("kl_weight {} must be nonnegative", self.kl_weight)));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        crate::datasets::sha256_hex(&json)
    }
}
