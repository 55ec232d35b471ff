use candle_core::{DType, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const MIN_STD: f64 = 1e-4;
pub const MAX_STD: f64 = 10.0;

/// Diagonal Gaussian with the distribution dimension on the last axis.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    pub mean: Tensor,
    pub std: Tensor,
}

impl GaussianParams {
    pub fn new(mean: Tensor, std: Tensor) -> Result<Self> {
        if mean.dims() != std.dims() {
            return Err(Error::Contract(format!(
                "gaussian mean shape {:?} differs from std shape {:?}",
                mean.dims(),
                std.dims()
            )));
        }
        Ok(Self { mean, std })
    }

    /// Split a head output `(.., 2d)` into mean and log-std halves.
    pub fn from_head(raw: &Tensor) -> Result<Self> {
        let d = raw.dim(D::Minus1)?;
        if d % 2 != 0 {
            return Err(Error::Contract(format!("head output width {d} is odd")));
        }
        let mean = raw.narrow(D::Minus1, 0, d / 2)?;
        let log_std = raw.narrow(D::Minus1, d / 2, d / 2)?;
        let std = log_std.clamp(MIN_STD.ln(), MAX_STD.ln())?.exp()?;
        Ok(Self { mean, std })
    }

    /// Same mean and std vectors broadcast to `shape` (last axis = their length).
    pub fn constant(mean: &[f64], std: &[f64], shape: &[usize], dtype: DType) -> Result<Self> {
        let d = *shape.last().ok_or_else(|| Error::Contract("empty gaussian shape".into()))?;
        if mean.len() != d || std.len() != d {
            return Err(Error::Contract(format!("gaussian constant of width {} for shape {shape:?}", mean.len())));
        }
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Range("gaussian std must be positive".into()));
        }
        let dev = candle_core::Device::Cpu;
        let m = Tensor::from_slice(mean, d, &dev)?.to_dtype(dtype)?.broadcast_as(shape)?.contiguous()?;
        let s = Tensor::from_slice(std, d, &dev)?.to_dtype(dtype)?.broadcast_as(shape)?.contiguous()?;
        Ok(Self { mean: m, std: s })
    }

    pub fn dim(&self) -> usize {
        self.mean.dims().last().copied().unwrap_or(0)
    }

    pub fn narrow(&self, dim: usize, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            mean: self.mean.narrow(dim, start, len)?,
            std: self.std.narrow(dim, start, len)?,
        })
    }

    pub fn stack(items: &[GaussianParams], dim: usize) -> Result<Self> {
        let means: Vec<&Tensor> = items.iter().map(|g| &g.mean).collect();
        let stds: Vec<&Tensor> = items.iter().map(|g| &g.std).collect();
        Ok(Self {
            mean: Tensor::stack(&means, dim)?,
            std: Tensor::stack(&stds, dim)?,
        })
    }
}

/// `mean + std * noise`, differentiable in both parameters.
pub fn reparameterize(params: &GaussianParams, noise: &Tensor) -> Result<Tensor> {
    if noise.dims() != params.mean.dims() {
        return Err(Error::Contract(format!(
            "noise shape {:?} differs from parameter shape {:?}",
            noise.dims(),
            params.mean.dims()
        )));
    }
    Ok(params.mean.add(&params.std.mul(noise)?)?)
}

/// Standard-normal tensor drawn from `rng`.
pub fn standard_normal(rng: &mut ChaCha8Rng, shape: &[usize], dtype: DType) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(v, shape, &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// How latent samples are produced during a forward pass.
pub enum Sampling<'a> {
    /// Use posterior means.
    Mean,
    /// Reparameterized draws from a seeded stream.
    Random(&'a mut ChaCha8Rng),
}

impl Sampling<'_> {
    pub fn draw(&mut self, params: &GaussianParams) -> Result<Tensor> {
        match self {
            Sampling::Mean => Ok(params.mean.clone()),
            Sampling::Random(rng) => {
                let noise = standard_normal(rng, params.mean.dims(), params.mean.dtype())?;
                reparameterize(params, &noise)
            }
        }
    }

    pub fn is_mean(&self) -> bool {
        matches!(self, Sampling::Mean)
    }

    /// Consume one value from the stream so callers can decorrelate runs.
    pub fn skip(&mut self) {
        if let Sampling::Random(rng) = self {
            let _: u64 = rng.random();
        }
    }
}
