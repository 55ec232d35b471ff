use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VideoSequence;
use crate::error::{Error, Result};

/// Side length of an MNIST digit image.
pub const DIGIT_SIZE: usize = 28;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// Digit images in [0, 1], each `DIGIT_SIZE * DIGIT_SIZE` row-major.
#[derive(Debug, Clone)]
pub struct MnistDigits {
    pixels: Vec<f32>,
    count: usize,
}

impl MnistDigits {
    pub fn from_pixels(pixels: Vec<f32>) -> Result<Self> {
        let n = DIGIT_SIZE * DIGIT_SIZE;
        if pixels.is_empty() || pixels.len() % n != 0 {
            return Err(Error::Contract(format!(
                "digit buffer length {} is not a positive multiple of {n}",
                pixels.len()
            )));
        }
        Ok(Self {
            count: pixels.len() / n,
            pixels,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = DIGIT_SIZE * DIGIT_SIZE;
        &self.pixels[i * n..(i + 1) * n]
    }
}

/// Read an IDX3 ubyte image file (`train-images-idx3-ubyte` and friends).
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<MnistDigits> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Load {
        what: "MNIST IDX images",
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let format_err = |found: String| Error::Format {
        path: path.to_path_buf(),
        expected: "IDX3 ubyte images (magic 0x00000803, 28x28)".into(),
        found,
    };
    if bytes.len() < 16 {
        return Err(format_err(format!("{} bytes", bytes.len())));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
    let (magic, count, rows, cols) = (word(0), word(4) as usize, word(8), word(12));
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(format!("magic {magic:#010x}")));
    }
    if rows as usize != DIGIT_SIZE || cols as usize != DIGIT_SIZE {
        return Err(format_err(format!("{rows}x{cols} images")));
    }
    let body = &bytes[16..];
    if body.len() != count * DIGIT_SIZE * DIGIT_SIZE {
        return Err(format_err(format!(
            "{} payload bytes for {count} images",
            body.len()
        )));
    }
    MnistDigits::from_pixels(body.iter().map(|&b| b as f32 / 255.0).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingMnistConfig {
    /// Number of digits per sequence, drawn uniformly from this list.
    pub n_digits: Vec<usize>,
    pub frame_size: usize,
    pub input_len: usize,
    pub pred_len: usize,
    pub speed_min: f64,
    pub speed_max: f64,
}

impl Default for MovingMnistConfig {
    fn default() -> Self {
        Self {
            n_digits: vec![2],
            frame_size: 64,
            input_len: 10,
            pred_len: 10,
            speed_min: 2.0,
            speed_max: 5.0,
        }
    }
}

impl MovingMnistConfig {
    pub fn with_digits(n_digits: Vec<usize>) -> Self {
        Self {
            n_digits,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_digits.is_empty() || self.n_digits.contains(&0) {
            return Err(Error::Config(format!(
                "n_digits must be a non-empty list of positive counts, got {:?}",
                self.n_digits
            )));
        }
        if !(0.0 <= self.speed_min && self.speed_min <= self.speed_max) {
            return Err(Error::Config(format!(
                "invalid speed range [{}, {}]",
                self.speed_min, self.speed_max
            )));
        }
        let travel = self.frame_size as f64 - DIGIT_SIZE as f64;
        if travel < 2.0 * self.speed_max {
            return Err(Error::Config(format!(
                "frame size {} leaves {travel} px of travel, need at least twice the max speed {}",
                self.frame_size, self.speed_max
            )));
        }
        Ok(())
    }
}

/// One digit's motion through a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitTrack {
    pub digit_image: Vec<f32>,
    /// Top-left corner per frame, `[x, y]` in pixels.
    pub positions: Vec<[f64; 2]>,
    /// Initial velocity in pixels per frame.
    pub velocity: [f64; 2],
}

/// Advance one axis by one frame inside `[0, limit]`.
///
/// If the step would leave the interval the velocity flips first, so the
/// displacement magnitude is the same on every frame.
pub fn reflect_axis(pos: f64, vel: f64, limit: f64) -> (f64, f64) {
    let next = pos + vel;
    if next < 0.0 || next > limit {
        (pos - vel, -vel)
    } else {
        (next, vel)
    }
}

/// Generate one Moving MNIST clip and the digit tracks that produced it.
pub fn sample_moving_mnist(
    config: &MovingMnistConfig,
    digits: &MnistDigits,
    rng: &mut ChaCha8Rng,
) -> Result<(VideoSequence, Vec<DigitTrack>)> {
    config.validate()?;
    if digits.is_empty() {
        return Err(Error::Config("no MNIST digits loaded".into()));
    }
    let n_frames = config.input_len + config.pred_len;
    let limit = (config.frame_size - DIGIT_SIZE) as f64;
    let n_digits = config.n_digits[rng.random_range(0..config.n_digits.len())];

    let mut tracks = Vec::with_capacity(n_digits);
    for _ in 0..n_digits {
        let idx = rng.random_range(0..digits.len());
        let speed = if config.speed_max > config.speed_min {
            rng.random_range(config.speed_min..config.speed_max)
        } else {
            config.speed_min
        };
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let velocity = [speed * angle.cos(), speed * angle.sin()];
        let mut pos = [rng.random_range(0.0..=limit), rng.random_range(0.0..=limit)];
        let mut vel = velocity;
        let mut positions = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            positions.push(pos);
            for axis in 0..2 {
                let (p, v) = reflect_axis(pos[axis], vel[axis], limit);
                pos[axis] = p;
                vel[axis] = v;
            }
        }
        tracks.push(DigitTrack {
            digit_image: digits.image(idx).to_vec(),
            positions,
            velocity,
        });
    }

    let mut frames = Vec::with_capacity(n_frames * config.frame_size * config.frame_size);
    for t in 0..n_frames {
        frames.extend(render_digit_frame(&tracks, t, config.frame_size));
    }
    let video = VideoSequence::new(frames, config.input_len, config.pred_len, config.frame_size)?;
    Ok((video, tracks))
}

/// Compose frame `t`: pixel-wise sum of the digits at their rounded
/// positions, clamped to [0, 1].
pub fn render_digit_frame(tracks: &[DigitTrack], t: usize, size: usize) -> Vec<f32> {
    let mut frame = vec![0f32; size * size];
    for track in tracks {
        let x0 = track.positions[t][0].round() as usize;
        let y0 = track.positions[t][1].round() as usize;
        for r in 0..DIGIT_SIZE {
            let row = &track.digit_image[r * DIGIT_SIZE..(r + 1) * DIGIT_SIZE];
            let out = &mut frame[(y0 + r) * size + x0..(y0 + r) * size + x0 + DIGIT_SIZE];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    for v in &mut frame {
        *v = v.clamp(0.0, 1.0);
    }
    frame
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn blob_digits() -> MnistDigits {
        let mut px = vec![0f32; 2 * DIGIT_SIZE * DIGIT_SIZE];
        for r in 8..20 {
            for c in 10..18 {
                px[r * DIGIT_SIZE + c] = 1.0;
                px[DIGIT_SIZE * DIGIT_SIZE + r * DIGIT_SIZE + c] = 0.7;
            }
        }
        MnistDigits::from_pixels(px).unwrap()
    }

    #[test]
    fn two_digit_sequence_has_twenty_frames() {
        let digits = blob_digits();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (video, tracks) =
            sample_moving_mnist(&MovingMnistConfig::default(), &digits, &mut rng).unwrap();
        assert_eq!(video.n_frames(), 20);
        assert_eq!(video.size(), 64);
        assert_eq!(tracks.len(), 2);
        assert!(tracks.iter().all(|t| t.positions.len() == 20));
    }

    #[test]
    fn static_digit_gives_identical_frames() {
        let digits = blob_digits();
        let config = MovingMnistConfig {
            n_digits: vec![1],
            speed_min: 0.0,
            speed_max: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (video, _) = sample_moving_mnist(&config, &digits, &mut rng).unwrap();
        for t in 1..video.n_frames() {
            assert_eq!(video.frame(t), video.frame(0));
        }
    }

    #[test]
    fn wall_hit_reverses_velocity() {
        let limit = 36.0;
        let (p, v) = reflect_axis(limit, 3.0, limit);
        assert_eq!((p, v), (33.0, -3.0));
        // Replay the 1-D recurrence pixel by pixel against an unfolded oracle:
        // a point bouncing in [0, L] with constant speed never leaves it and
        // moves exactly |v| every frame.
        let (mut p, mut v) = (34.5, 3.0);
        for _ in 0..200 {
            let (np, nv) = reflect_axis(p, v, limit);
            assert!((0.0..=limit).contains(&np));
            assert!(((np - p).abs() - 3.0).abs() < 1e-12);
            assert_eq!(nv.abs(), 3.0);
            p = np;
            v = nv;
        }
    }

    #[test]
    fn missing_idx_file_names_path() {
        let err = load_idx_images("/nonexistent/train-images-idx3-ubyte").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/train-images-idx3-ubyte"));
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imgs");
        let mut bytes = vec![];
        for w in [IDX_IMAGES_MAGIC, 2, 28, 28] {
            bytes.extend(w.to_be_bytes());
        }
        bytes.extend((0..2 * 784).map(|i| (i % 256) as u8));
        std::fs::write(&path, &bytes).unwrap();
        let digits = load_idx_images(&path).unwrap();
        assert_eq!(digits.len(), 2);
        assert_eq!(digits.image(0)[255], 1.0);

        bytes[3] = 0x01;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_idx_images(&path), Err(Error::Format { .. })));
    }
}
