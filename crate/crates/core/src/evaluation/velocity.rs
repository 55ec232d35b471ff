//! Positions, finite-difference velocities and velocity accuracy.

use serde::{Deserialize, Serialize};

use super::matching::Assignment;
use crate::error::{Error, Result};
use crate::model::PoseVector;

/// Speeds below this are excluded from the relative magnitude error.
pub const MIN_SPEED: f64 = 1e-6;

/// Per-frame positions in `[0, 1]^2` frame coordinates, `[x, y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionTrack {
    pub positions: Vec<[f64; 2]>,
}

impl PositionTrack {
    /// Coordinates are clamped to `[0, 1]`.
    pub fn new(positions: Vec<[f64; 2]>) -> Self {
        let positions = positions
            .into_iter()
            .map(|p| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)])
            .collect();
        Self { positions }
    }

    /// Track from pixel-space centers in a `size` x `size` frame.
    pub fn from_pixels(centers: impl IntoIterator<Item = [f64; 2]>, size: usize) -> Self {
        let s = size as f64;
        Self::new(centers.into_iter().map(|c| [c[0] / s, c[1] / s]).collect())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Window centers of a pose trajectory mapped from `[-1, 1]` to `[0, 1]`.
pub fn extract_positions(poses: &[PoseVector]) -> PositionTrack {
    PositionTrack::new(
        poses
            .iter()
            .map(|p| [(p.tx + 1.0) / 2.0, (p.ty + 1.0) / 2.0])
            .collect(),
    )
}

/// Central difference `p[t + 1] - p[t - 1]`.
pub fn velocity(track: &PositionTrack, t: usize) -> Result<[f64; 2]> {
    if t == 0 || t + 1 >= track.len() {
        return Err(Error::Range(format!(
            "velocity at frame {t} needs neighbours inside a track of {} frames",
            track.len()
        )));
    }
    let (a, b) = (track.positions[t - 1], track.positions[t + 1]);
    Ok([b[0] - a[0], b[1] - a[1]])
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Velocity accuracy accumulated over matched objects and sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityMetrics {
    /// Frame index of every evaluated timestep.
    pub frames: Vec<usize>,
    pub magnitude_error_sum: Vec<f64>,
    pub magnitude_count: Vec<usize>,
    pub cosine_sum: Vec<f64>,
    pub cosine_count: Vec<usize>,
    /// Terms dropped because the true speed was below [`MIN_SPEED`].
    pub skipped: Vec<usize>,
}

impl VelocityMetrics {
    pub fn new(frames: Vec<usize>) -> Self {
        let n = frames.len();
        Self {
            frames,
            magnitude_error_sum: vec![0.0; n],
            magnitude_count: vec![0; n],
            cosine_sum: vec![0.0; n],
            cosine_count: vec![0; n],
            skipped: vec![0; n],
        }
    }

    /// Mean relative magnitude error per timestep.
    pub fn magnitude_error(&self) -> Vec<Option<f64>> {
        mean(&self.magnitude_error_sum, &self.magnitude_count)
    }

    /// Mean cosine similarity per timestep.
    pub fn cosine(&self) -> Vec<Option<f64>> {
        mean(&self.cosine_sum, &self.cosine_count)
    }

    pub fn total_skipped(&self) -> usize {
        self.skipped.iter().sum()
    }

    /// Fold another accumulator over the same frames into this one.
    pub fn merge(&mut self, other: &VelocityMetrics) -> Result<()> {
        if self.frames != other.frames {
            return Err(Error::Contract("velocity metrics over different frames".into()));
        }
        for k in 0..self.frames.len() {
            self.magnitude_error_sum[k] += other.magnitude_error_sum[k];
            self.magnitude_count[k] += other.magnitude_count[k];
            self.cosine_sum[k] += other.cosine_sum[k];
            self.cosine_count[k] += other.cosine_count[k];
            self.skipped[k] += other.skipped[k];
        }
        Ok(())
    }
}

fn mean(sum: &[f64], count: &[usize]) -> Vec<Option<f64>> {
    sum.iter()
        .zip(count)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect()
}

/// Relative speed error and direction cosine of every matched pair at every
/// frame of `frames`. Cosine is also skipped for a zero predicted velocity.
pub fn velocity_metrics(
    predicted: &[PositionTrack],
    truth: &[PositionTrack],
    assignment: &Assignment,
    frames: &[usize],
) -> Result<VelocityMetrics> {
    let mut out = VelocityMetrics::new(frames.to_vec());
    for (i, b) in assignment.pairs() {
        let (p, g) = match (predicted.get(i), truth.get(b)) {
            (Some(p), Some(g)) => (p, g),
            _ => return Err(Error::Contract(format!("assignment pair ({i}, {b}) out of range"))),
        };
        for (k, &t) in frames.iter().enumerate() {
            let vh = velocity(p, t)?;
            let v = velocity(g, t)?;
            let (nh, n) = (norm(vh), norm(v));
            if n < MIN_SPEED {
                out.skipped[k] += 1;
                continue;
            }
            out.magnitude_error_sum[k] += (nh - n).abs() / n;
            out.magnitude_count[k] += 1;
            if nh > 0.0 {
                let c = (vh[0] * v[0] + vh[1] * v[1]) / (nh * n);
                out.cosine_sum[k] += c.clamp(-1.0, 1.0);
                out.cosine_count[k] += 1;
            }
        }
    }
    Ok(out)
}
