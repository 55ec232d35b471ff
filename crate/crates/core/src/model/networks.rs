use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, sigmoid, Conv, ConvTranspose, ParamInit, ParamStore};

const LEAK: f64 = 0.2;
/// Initial output logit of the patch decoder: patches start dark.
const OUTPUT_BIAS: f64 = -2.0;

fn log2_exact(size: usize) -> Result<usize> {
    if size < 8 || !size.is_power_of_two() {
        return Err(Error::Config(format!("image size {size} must be a power of two >= 8")));
    }
    Ok(size.trailing_zeros() as usize)
}

fn width(base: usize, level: usize) -> usize {
    base << level.min(3)
}

/// Strided convolution stack: `log2(size) - 2` halving layers followed by a
/// 4x4 valid convolution down to a `out_dim`-vector.
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    layers: Vec<Conv>,
    head: Conv,
    size: usize,
}

impl ConvEncoder {
    pub fn new(store: &mut ParamStore, name: &str, size: usize, base: usize, out_dim: usize) -> Result<Self> {
        let n = log2_exact(size)? - 2;
        let mut layers = Vec::with_capacity(n);
        let mut cin = 1;
        for l in 0..n {
            let cout = width(base, l);
            layers.push(Conv::new(store, &format!("{name}.conv{l}"), cin, cout, 4, 2, 1)?);
            cin = cout;
        }
        let head = Conv::new(store, &format!("{name}.conv{n}"), cin, out_dim, 4, 1, 0)?;
        Ok(Self { layers, head, size })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len() + 1
    }

    /// `(m, size, size)` images to `(m, out_dim)` features.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let m = x.dim(0)?;
        let mut h = x.reshape((m, 1, self.size, self.size))?;
        for layer in &self.layers {
            h = leaky_relu(&layer.forward(&h)?, LEAK)?;
        }
        Ok(self.head.forward(&h)?.flatten_from(1)?)
    }
}

/// Transposed-convolution mirror of [`ConvEncoder`], ending in a logistic.
#[derive(Debug, Clone)]
pub struct PatchDecoder {
    head: ConvTranspose,
    layers: Vec<ConvTranspose>,
    in_dim: usize,
    size: usize,
}

impl PatchDecoder {
    pub fn new(store: &mut ParamStore, name: &str, size: usize, base: usize, in_dim: usize) -> Result<Self> {
        let n = log2_exact(size)? - 2;
        let mut cin = if n == 0 { 1 } else { width(base, n - 1) };
        let head = ConvTranspose::new(store, &format!("{name}.deconv0"), in_dim, cin, 4, 1, 0)?;
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let lname = format!("{name}.deconv{}", l + 1);
            let layer = if l + 1 == n {
                ConvTranspose::with_bias(store, &lname, [cin, 1, 4], 2, 1, ParamInit::Const(OUTPUT_BIAS))?
            } else {
                ConvTranspose::new(store, &lname, cin, width(base, n - 2 - l), 4, 2, 1)?
            };
            let cout = if l + 1 == n { 1 } else { width(base, n - 2 - l) };
            layers.push(layer);
            cin = cout;
        }
        Ok(Self {
            head,
            layers,
            in_dim,
            size,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len() + 1
    }

    /// `(m, in_dim)` codes to `(m, size, size)` patches in `[0, 1]`.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let m = z.dim(0)?;
        let mut h = self.head.forward(&z.reshape((m, self.in_dim, 1, 1))?)?;
        for layer in &self.layers {
            h = layer.forward(&h.relu()?)?;
        }
        Ok(sigmoid(&h)?.reshape((m, self.size, self.size))?)
    }
}
