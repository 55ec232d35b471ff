//! Single-file 8-bit storage for frozen datasets.
//!
//! Layout of the data file (all integers little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 8    | magic `DDPAEFS\0`             |
//! | 8      | 4    | format version (1)            |
//! | 12     | 4    | dataset kind (0 mnist, 1 balls) |
//! | 16     | 4    | number of sequences           |
//! | 20     | 4    | frames per sequence           |
//! | 24     | 4    | frame height                  |
//! | 28     | 4    | frame width                   |
//! | 32     | 4    | input frames T                |
//! | 36     | 4    | predicted frames K            |
//! | 40     | 8    | generation seed               |
//! | 48     | 16   | reserved, zero                |
//!
//! followed by `n * frames * height * width` bytes, intensity `round(255 x)`.
//! Two sidecars sit next to it: `<file>.tracks` with per-frame object centers
//! and `<file>.json`, a manifest carrying the generator config, seed and digests.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetConfig, DatasetKind, Generator, VideoSequence};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"DDPAEFS\0";
pub const HEADER_LEN: usize = 64;
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSetManifest {
    pub format: String,
    pub version: u32,
    pub kind: DatasetKind,
    pub config: DatasetConfig,
    pub seed: u64,
    pub n_sequences: usize,
    pub n_frames: usize,
    pub frame_size: usize,
    pub input_len: usize,
    pub pred_len: usize,
    pub data_file: String,
    pub data_sha256: String,
    pub tracks_file: String,
    pub tracks_sha256: String,
}

#[derive(Debug, Clone)]
pub struct FixedSet {
    pub kind: DatasetKind,
    pub seed: u64,
    pub sequences: Vec<VideoSequence>,
    /// Per sequence, per frame, per object center in pixels.
    pub object_centers: Vec<Vec<Vec<[f64; 2]>>>,
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Write `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = sidecar(path, "tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Lowercase hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Generate `n_sequences` clips deterministically from `seed` and store them at `path`.
pub fn generate_fixed_set(
    generator: &Generator,
    n_sequences: usize,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<FixedSetManifest> {
    let path = path.as_ref();
    let config = generator.config();
    let (size, t_in, k_out) = (config.frame_size(), config.input_len(), config.pred_len());
    let n_frames = t_in + k_out;

    let mut data = Vec::with_capacity(HEADER_LEN + n_sequences * n_frames * size * size);
    data.extend_from_slice(&MAGIC);
    for word in [
        VERSION,
        config.kind().code(),
        n_sequences as u32,
        n_frames as u32,
        size as u32,
        size as u32,
        t_in as u32,
        k_out as u32,
    ] {
        data.extend_from_slice(&word.to_le_bytes());
    }
    data.extend_from_slice(&seed.to_le_bytes());
    data.resize(HEADER_LEN, 0);

    let mut tracks = Vec::new();
    for i in 0..n_sequences {
        let sample = generator.sample_indexed(seed, i as u64)?;
        data.extend(sample.video.frames().iter().map(|&v| quantize(v)));
        let n_objects = sample.object_centers.first().map_or(0, |f| f.len());
        tracks.extend_from_slice(&(n_objects as u32).to_le_bytes());
        for frame in &sample.object_centers {
            for c in frame {
                tracks.extend_from_slice(&c[0].to_le_bytes());
                tracks.extend_from_slice(&c[1].to_le_bytes());
            }
        }
    }

    let tracks_path = sidecar(path, "tracks");
    write_atomic(path, &data)?;
    write_atomic(&tracks_path, &tracks)?;
    let file_name = |p: &Path| {
        p.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let manifest = FixedSetManifest {
        format: "ddpae-fixed-set".into(),
        version: VERSION,
        kind: config.kind(),
        config,
        seed,
        n_sequences,
        n_frames,
        frame_size: size,
        input_len: t_in,
        pred_len: k_out,
        data_file: file_name(path),
        data_sha256: sha256_hex(&data),
        tracks_file: file_name(&tracks_path),
        tracks_sha256: sha256_hex(&tracks),
    };
    write_atomic(&sidecar(path, "json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Load a set written by [`generate_fixed_set`]. The tracks sidecar is optional.
pub fn load_fixed_set(path: impl AsRef<Path>) -> Result<FixedSet> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |found: String| Error::Format {
        path: path.to_path_buf(),
        expected: "ddpae fixed-set file (64-byte header, 8-bit frames)".into(),
        found,
    };
    if data.len() < HEADER_LEN || data[..8] != MAGIC {
        return Err(bad("missing magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(data[i..i + 4].try_into().unwrap()) as usize;
    let version = word(8) as u32;
    if version != VERSION {
        return Err(bad(format!("version {version}")));
    }
    let kind = DatasetKind::from_code(word(12) as u32)
        .ok_or_else(|| bad(format!("dataset kind {}", word(12))))?;
    let (n, n_frames, h, w, t_in, k_out) =
        (word(16), word(20), word(24), word(28), word(32), word(36));
    let seed = u64::from_le_bytes(data[40..48].try_into().unwrap());
    if h != w || t_in + k_out != n_frames {
        return Err(bad(format!(
            "frames {n_frames} (T={t_in}, K={k_out}) of {h}x{w}"
        )));
    }
    let per_seq = n_frames * h * w;
    if data.len() != HEADER_LEN + n * per_seq {
        return Err(bad(format!(
            "{} bytes for {n} sequences of {per_seq} pixels",
            data.len()
        )));
    }
    let sequences = data[HEADER_LEN..]
        .chunks_exact(per_seq)
        .map(|chunk| {
            let frames = chunk.iter().map(|&b| b as f32 / 255.0).collect();
            VideoSequence::new(frames, t_in, k_out, h)
        })
        .collect::<Result<Vec<_>>>()?;

    let tracks_path = sidecar(path, "tracks");
    let object_centers = match std::fs::read(&tracks_path) {
        Ok(bytes) => parse_tracks(&bytes, n, n_frames).ok_or_else(|| Error::Format {
            path: tracks_path.clone(),
            expected: format!("object tracks for {n} sequences of {n_frames} frames"),
            found: format!("{} bytes", bytes.len()),
        })?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(tracks_path, e)),
    };
    Ok(FixedSet {
        kind,
        seed,
        sequences,
        object_centers,
    })
}

fn parse_tracks(bytes: &[u8], n: usize, n_frames: usize) -> Option<Vec<Vec<Vec<[f64; 2]>>>> {
    let mut at = 0usize;
    let mut take = |len: usize| -> Option<&[u8]> {
        let s = bytes.get(at..at + len)?;
        at += len;
        Some(s)
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let n_obj = u32::from_le_bytes(take(4)?.try_into().ok()?) as usize;
        let mut frames = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            let mut objs = Vec::with_capacity(n_obj);
            for _ in 0..n_obj {
                let x = f64::from_le_bytes(take(8)?.try_into().ok()?);
                let y = f64::from_le_bytes(take(8)?.try_into().ok()?);
                objs.push([x, y]);
            }
            frames.push(objs);
        }
        out.push(frames);
    }
    (at == bytes.len()).then_some(out)
}

/// Read the JSON manifest next to a fixed-set file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<FixedSetManifest> {
    let p = sidecar(path.as_ref(), "json");
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::BallConfig;

    fn small_balls() -> Generator {
        Generator::BouncingBalls(BallConfig {
            n_balls: 2,
            frame_size: 32,
            arena_size: 32.0,
            radius: 3.0,
            min_speed: 1.0,
            max_speed: 2.0,
            input_len: 3,
            pred_len: 2,
            ..Default::default()
        })
    }

    #[test]
    fn round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        let gen = small_balls();
        let m = generate_fixed_set(&gen, 2, 7, &a).unwrap();
        generate_fixed_set(&gen, 2, 7, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(m, {
            let mut mb = load_manifest(&b).unwrap();
            mb.data_file = m.data_file.clone();
            mb.tracks_file = m.tracks_file.clone();
            mb
        });

        let set = load_fixed_set(&a).unwrap();
        assert_eq!(set.sequences.len(), 2);
        assert_eq!(set.seed, 7);
        for (i, seq) in set.sequences.iter().enumerate() {
            let sample = gen.sample_indexed(7, i as u64).unwrap();
            let quantized: Vec<f32> = sample
                .video
                .frames()
                .iter()
                .map(|&v| quantize(v) as f32 / 255.0)
                .collect();
            assert_eq!(seq.frames(), &quantized[..]);
            assert_eq!(set.object_centers[i], sample.object_centers);
        }
    }

    #[test]
    fn file_size_matches_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        generate_fixed_set(&small_balls(), 5, 1, &p).unwrap();
        let len = std::fs::metadata(&p).unwrap().len() as usize;
        assert_eq!(len, HEADER_LEN + 5 * 5 * 32 * 32);
    }

    #[test]
    fn unwritable_path_reports_it() {
        let err = generate_fixed_set(&small_balls(), 1, 1, "/nonexistent-dir/x.bin").unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.bin"));
    }

    #[test]
    fn corrupt_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        generate_fixed_set(&small_balls(), 1, 1, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_fixed_set(&p), Err(Error::Format { .. })));
    }
}
