use candle_core::{DType, Device, Tensor};
use rand::Rng;

use crate::datasets::{sequence_rng, FixedSet, Generator, VideoSequence};
use crate::error::{Error, Result};

/// Deterministic supply of training clips: the batch for a given iteration
/// depends only on the source's seed and that iteration.
pub trait BatchSource {
    fn batch(&self, iteration: u64, batch_size: usize) -> Result<Vec<VideoSequence>>;
}

/// Fresh clips from a generator; clip `j` of iteration `i` is stream
/// `i * batch_size + j`.
pub struct GeneratorSource {
    pub generator: Generator,
    pub seed: u64,
}

impl BatchSource for GeneratorSource {
    fn batch(&self, iteration: u64, batch_size: usize) -> Result<Vec<VideoSequence>> {
        (0..batch_size as u64)
            .map(|j| {
                let index = iteration * batch_size as u64 + j;
                Ok(self.generator.sample_indexed(self.seed, index)?.video)
            })
            .collect()
    }
}

/// Clips drawn uniformly with replacement from a fixed set.
pub struct FixedSetSource {
    pub set: FixedSet,
    pub seed: u64,
}

impl BatchSource for FixedSetSource {
    fn batch(&self, iteration: u64, batch_size: usize) -> Result<Vec<VideoSequence>> {
        let n = self.set.sequences.len();
        if n == 0 {
            return Err(Error::Contract("fixed set is empty".into()));
        }
        let mut rng = sequence_rng(self.seed ^ 0xD1B5_4A32_D192_ED03, iteration);
        Ok((0..batch_size)
            .map(|_| self.set.sequences[rng.random_range(0..n)].clone())
            .collect())
    }
}

/// Stack clips into `(inputs (b, T, h, w), targets (b, K, h, w))`.
pub fn batch_tensors(seqs: &[VideoSequence], dtype: DType) -> Result<(Tensor, Tensor)> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::Contract("empty batch".into()))?;
    let (t, k, s) = (first.input_len(), first.pred_len(), first.size());
    let mut inputs = Vec::with_capacity(seqs.len() * t * s * s);
    let mut targets = Vec::with_capacity(seqs.len() * k * s * s);
    for q in seqs {
        if (q.input_len(), q.pred_len(), q.size()) != (t, k, s) {
            return Err(Error::Contract("clips in a batch differ in shape".into()));
        }
        inputs.extend_from_slice(q.inputs());
        targets.extend_from_slice(q.targets());
    }
    let dev = Device::Cpu;
    let b = seqs.len();
    Ok((
        Tensor::from_vec(inputs, (b, t, s, s), &dev)?.to_dtype(dtype)?,
        Tensor::from_vec(targets, (b, k, s, s), &dev)?.to_dtype(dtype)?,
    ))
}
