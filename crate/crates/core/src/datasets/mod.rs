//! Benchmark video generators and on-disk dataset formats.
//!
//! Two synthetic benchmarks are provided: Moving MNIST (digits drifting with
//! wall reflection) and Bouncing Balls (equal-mass elastic discs). Both can be
//! sampled on the fly from a seed or frozen into a fixed set on disk.

mod balls;
mod fixed_set;
mod mnist;
mod npy;

pub use balls::{
    render_balls, simulate_bouncing_balls, step_physics, BallConfig, BallState, BallTrajectory,
};
pub use fixed_set::{
    generate_fixed_set, load_fixed_set, load_manifest, FixedSet, FixedSetManifest, HEADER_LEN,
    MAGIC,
};
pub use mnist::{
    load_idx_images, reflect_axis, render_digit_frame, sample_moving_mnist, DigitTrack,
    MnistDigits, MovingMnistConfig, DIGIT_SIZE,
};
pub use npy::load_canonical_mnist_test;

pub use fixed_set::{sha256_hex, write_atomic};

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grayscale clip of `input_len` observed frames followed by `pred_len`
/// frames to be predicted. Frames are stored row-major, frame after frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    frames: Vec<f32>,
    input_len: usize,
    pred_len: usize,
    size: usize,
}

impl VideoSequence {
    pub fn new(frames: Vec<f32>, input_len: usize, pred_len: usize, size: usize) -> Result<Self> {
        if input_len == 0 || pred_len == 0 {
            return Err(Error::Contract(format!(
                "video needs at least one input and one target frame (got T={input_len}, K={pred_len})"
            )));
        }
        if !size.is_power_of_two() || size < 8 {
            return Err(Error::Contract(format!(
                "frame size must be a power of two >= 8, got {size}"
            )));
        }
        let expected = (input_len + pred_len) * size * size;
        if frames.len() != expected {
            return Err(Error::Contract(format!(
                "expected {expected} intensities, got {}",
                frames.len()
            )));
        }
        if let Some(v) = frames.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            frames,
            input_len,
            pred_len,
            size,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn pred_len(&self) -> usize {
        self.pred_len
    }

    pub fn n_frames(&self) -> usize {
        self.input_len + self.pred_len
    }

    /// Frame side length in pixels (frames are square).
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.size * self.size;
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn frames(&self) -> &[f32] {
        &self.frames
    }

    pub fn inputs(&self) -> &[f32] {
        &self.frames[..self.input_len * self.size * self.size]
    }

    pub fn targets(&self) -> &[f32] {
        &self.frames[self.input_len * self.size * self.size..]
    }

    /// Re-split the same frames into a different observed/predicted window.
    pub fn with_split(self, input_len: usize, pred_len: usize) -> Result<Self> {
        if input_len + pred_len != self.n_frames() {
            return Err(Error::Contract(format!(
                "split {input_len}+{pred_len} does not cover {} frames",
                self.n_frames()
            )));
        }
        Self::new(self.frames, input_len, pred_len, self.size)
    }
}

/// Which benchmark a sample or fixed set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    MovingMnist,
    BouncingBalls,
}

impl DatasetKind {
    pub(crate) fn code(self) -> u32 {
        match self {
            DatasetKind::MovingMnist => 0,
            DatasetKind::BouncingBalls => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(DatasetKind::MovingMnist),
            1 => Some(DatasetKind::BouncingBalls),
            _ => None,
        }
    }
}

/// Serializable description of a sequence generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetConfig {
    MovingMnist(MovingMnistConfig),
    BouncingBalls(BallConfig),
}

impl DatasetConfig {
    pub fn kind(&self) -> DatasetKind {
        match self {
            DatasetConfig::MovingMnist(_) => DatasetKind::MovingMnist,
            DatasetConfig::BouncingBalls(_) => DatasetKind::BouncingBalls,
        }
    }

    pub fn frame_size(&self) -> usize {
        match self {
            DatasetConfig::MovingMnist(c) => c.frame_size,
            DatasetConfig::BouncingBalls(c) => c.frame_size,
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            DatasetConfig::MovingMnist(c) => c.input_len,
            DatasetConfig::BouncingBalls(c) => c.input_len,
        }
    }

    pub fn pred_len(&self) -> usize {
        match self {
            DatasetConfig::MovingMnist(c) => c.pred_len,
            DatasetConfig::BouncingBalls(c) => c.pred_len,
        }
    }
}

/// One generated clip with the per-frame centers (in pixels) of every object.
#[derive(Debug, Clone)]
pub struct Sample {
    pub video: VideoSequence,
    /// `object_centers[t][k]` is the center of object `k` at frame `t`.
    pub object_centers: Vec<Vec<[f64; 2]>>,
}

/// A seeded sequence source: a dataset config plus whatever assets it needs.
#[derive(Debug, Clone)]
pub enum Generator {
    MovingMnist {
        config: MovingMnistConfig,
        digits: Arc<MnistDigits>,
    },
    BouncingBalls(BallConfig),
}

impl Generator {
    pub fn config(&self) -> DatasetConfig {
        match self {
            Generator::MovingMnist { config, .. } => DatasetConfig::MovingMnist(config.clone()),
            Generator::BouncingBalls(c) => DatasetConfig::BouncingBalls(c.clone()),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<Sample> {
        match self {
            Generator::MovingMnist { config, digits } => {
                let (video, tracks) = sample_moving_mnist(config, digits, rng)?;
                let half = DIGIT_SIZE as f64 / 2.0;
                let object_centers = (0..video.n_frames())
                    .map(|t| {
                        tracks
                            .iter()
                            .map(|d| [d.positions[t][0] + half, d.positions[t][1] + half])
                            .collect()
                    })
                    .collect();
                Ok(Sample {
                    video,
                    object_centers,
                })
            }
            Generator::BouncingBalls(config) => {
                let traj = simulate_bouncing_balls(config, rng)?;
                let scale = config.frame_size as f64 / config.arena_size;
                let object_centers = traj
                    .states
                    .iter()
                    .map(|s| {
                        s.positions
                            .iter()
                            .map(|p| [p[0] * scale, p[1] * scale])
                            .collect()
                    })
                    .collect();
                Ok(Sample {
                    video: traj.rendered,
                    object_centers,
                })
            }
        }
    }

    /// Sample number `index` of the stream identified by `seed`.
    pub fn sample_indexed(&self, seed: u64, index: u64) -> Result<Sample> {
        let mut rng = sequence_rng(seed, index);
        self.sample(&mut rng)
    }
}

/// Which MNIST image file digits are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MnistSplit {
    Train,
    Test,
}

impl MnistSplit {
    pub fn file_name(self) -> &'static str {
        match self {
            MnistSplit::Train => "train-images-idx3-ubyte",
            MnistSplit::Test => "t10k-images-idx3-ubyte",
        }
    }
}

/// Locate an MNIST image file under `data_dir` (either directly or in an
/// `mnist/` subdirectory).
pub fn mnist_path(data_dir: &Path, split: MnistSplit) -> PathBuf {
    let nested = data_dir.join("mnist").join(split.file_name());
    if nested.exists() {
        nested
    } else {
        data_dir.join(split.file_name())
    }
}

impl Generator {
    /// Build a generator, loading digits from `data_dir` when the config
    /// needs them.
    pub fn from_config(config: &DatasetConfig, data_dir: Option<&Path>, split: MnistSplit) -> Result<Self> {
        match config {
            DatasetConfig::BouncingBalls(c) => {
                c.validate()?;
                Ok(Generator::BouncingBalls(c.clone()))
            }
            DatasetConfig::MovingMnist(c) => {
                let dir = data_dir.ok_or_else(|| {
                    Error::Config("Moving MNIST needs a data directory holding the MNIST image files".into())
                })?;
                let digits = load_idx_images(mnist_path(dir, split))?;
                Ok(Generator::MovingMnist {
                    config: c.clone(),
                    digits: Arc::new(digits),
                })
            }
        }
    }
}

/// Independent RNG stream for sequence `index` under `seed`.
pub fn sequence_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
