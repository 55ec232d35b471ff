use std::path::Path;

use npyz::{DType, NpyFile, Order, TypeStr};

use super::VideoSequence;
use crate::error::{Error, Result};

const FRAMES: u64 = 20;
const SIZE: u64 = 64;
const INPUT_LEN: usize = 10;
const PRED_LEN: usize = 10;

/// Load the canonical Moving MNIST test array: an NPY file of unsigned bytes
/// shaped `(20, n_sequences, 64, 64)`, frame-major. Sequences come back split
/// into 10 observed and 10 predicted frames with intensities scaled to [0, 1].
pub fn load_canonical_mnist_test(path: impl AsRef<Path>) -> Result<Vec<VideoSequence>> {
    let path = path.as_ref();
    let expected = "NPY array of uint8 with shape (20, N, 64, 64), C order";
    let format_err = |found: String| Error::Format {
        path: path.to_path_buf(),
        expected: expected.into(),
        found,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let npy = NpyFile::new(std::io::BufReader::new(file))
        .map_err(|e| format_err(format!("unreadable NPY header ({e})")))?;

    let u8_type: TypeStr = "|u1".parse().expect("valid type string");
    let dtype_ok = matches!(npy.dtype(), DType::Plain(ref t) if *t == u8_type);
    let shape = npy.shape().to_vec();
    let shape_ok = shape.len() == 4 && shape[0] == FRAMES && shape[2] == SIZE && shape[3] == SIZE;
    if !dtype_ok || !shape_ok || npy.order() != Order::C {
        return Err(format_err(format!(
            "dtype {}, shape {shape:?}, order {:?}",
            npy.dtype().descr(),
            npy.order()
        )));
    }
    let n = shape[1] as usize;
    let raw: Vec<u8> = npy
        .into_vec()
        .map_err(|e| format_err(format!("truncated payload ({e})")))?;

    let frame_px = (SIZE * SIZE) as usize;
    let n_frames = FRAMES as usize;
    (0..n)
        .map(|s| {
            let mut frames = Vec::with_capacity(n_frames * frame_px);
            for t in 0..n_frames {
                let at = (t * n + s) * frame_px;
                frames.extend(raw[at..at + frame_px].iter().map(|&b| b as f32 / 255.0));
            }
            VideoSequence::new(frames, INPUT_LEN, PRED_LEN, SIZE as usize)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use npyz::WriterBuilder;

    use super::*;

    fn write_npy<T: npyz::AutoSerialize + Copy>(path: &Path, shape: &[u64], data: &[T]) {
        let mut buf = vec![];
        {
            let mut w = npyz::WriteOptions::new()
                .default_dtype()
                .shape(shape)
                .writer(&mut buf)
                .begin_nd()
                .unwrap();
            w.extend(data.iter().copied()).unwrap();
            w.finish().unwrap();
        }
        std::fs::write(path, buf).unwrap();
    }

    #[test]
    fn synthetic_three_sequences() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mm.npy");
        let n = 3usize;
        // value encodes (frame, sequence) so the transpose can be checked
        let data: Vec<u8> = (0..20 * n * 64 * 64)
            .map(|i| {
                let t = i / (n * 4096);
                let s = (i / 4096) % n;
                (t * 10 + s) as u8
            })
            .collect();
        let mut data = data;
        data[4096 * n * 19 + 4096 * 2 + 5] = 255;
        write_npy(&p, &[20, n as u64, 64, 64], &data);
        let seqs = load_canonical_mnist_test(&p).unwrap();
        assert_eq!(seqs.len(), 3);
        assert_eq!(seqs[1].input_len(), 10);
        assert_eq!(seqs[1].pred_len(), 10);
        assert_eq!(seqs[1].frame(4)[17], 41.0 / 255.0);
        assert_eq!(seqs[2].frame(19)[5], 1.0);
        let max = seqs
            .iter()
            .flat_map(|s| s.frames().iter().copied())
            .fold(0f32, f32::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn wrong_layout_names_expected_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.npy");
        write_npy(&p, &[10, 1, 64, 64], &vec![0u8; 10 * 4096]);
        let err = load_canonical_mnist_test(&p).unwrap_err().to_string();
        assert!(err.contains("(20, N, 64, 64)"), "{err}");

        write_npy(&p, &[20, 1, 64, 64], &vec![0f32; 20 * 4096]);
        assert!(matches!(
            load_canonical_mnist_test(&p),
            Err(Error::Format { .. })
        ));
    }
}
