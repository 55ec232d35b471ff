use candle_core::{Tensor, D};

use super::conv::{conv2d, conv_transpose2d};
use super::params::{ParamInit, ParamStore};
use crate::error::Result;

/// Logistic function via `tanh`, which carries a gradient in candle core.
pub fn sigmoid(x: &Tensor) -> candle_core::Result<Tensor> {
    ((x * 0.5)?.tanh()? + 1.0)? * 0.5
}


/// Affine map `x (b, in) -> (b, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Self::with_init(store, name, input, output, ParamInit::Uniform(bound), ParamInit::Uniform(bound))
    }

    pub fn with_init(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        weight: ParamInit,
        bias: ParamInit,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(&format!("{name}.weight"), &[input, output], weight)?,
            bias: store.add(&format!("{name}.bias"), &[output], bias)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.matmul(&self.weight)?.broadcast_add(&self.bias)
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        Ok(Self {
            weight: store.add(&format!("{name}.weight"), &[cout, cin, k, k], ParamInit::Uniform(bound))?,
            bias: store.add(&format!("{name}.bias"), &[cout], ParamInit::Uniform(bound))?,
            stride,
            pad,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = conv2d(x, &self.weight, self.stride, self.pad)?;
        y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    pad: usize,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        let bound = 1.0 / ((cout * k * k) as f64).sqrt();
        Self::with_bias(store, name, [cin, cout, k], stride, pad, ParamInit::Uniform(bound))
    }

    /// `dims` is `[cin, cout, kernel]`.
    pub fn with_bias(
        store: &mut ParamStore,
        name: &str,
        dims: [usize; 3],
        stride: usize,
        pad: usize,
        bias: ParamInit,
    ) -> Result<Self> {
        let [cin, cout, k] = dims;
        let bound = 1.0 / ((cout * k * k) as f64).sqrt();
        Ok(Self {
            weight: store.add(&format!("{name}.weight"), &[cin, cout, k, k], ParamInit::Uniform(bound))?,
            bias: store.add(&format!("{name}.bias"), &[cout], bias)?,
            stride,
            pad,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = conv_transpose2d(x, &self.weight, self.stride, self.pad)?;
        y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)
    }
}

#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize, like: &Tensor) -> candle_core::Result<Self> {
        let z = Tensor::zeros((batch, hidden), like.dtype(), like.device())?;
        Ok(Self { h: z.clone(), c: z })
    }
}

/// Single LSTM cell, gates ordered input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    wx: Tensor,
    wh: Tensor,
    bias: Tensor,
    hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let wx = store.add(&format!("{name}.wx"), &[input, 4 * hidden], ParamInit::Uniform(bound))?;
        let wh = store.add(&format!("{name}.wh"), &[hidden, 4 * hidden], ParamInit::Uniform(bound))?;
        let bias = store.add(&format!("{name}.bias"), &[4 * hidden], ParamInit::Uniform(bound))?;
        Ok(Self { wx, wh, bias, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn step(&self, x: &Tensor, state: &LstmState) -> candle_core::Result<LstmState> {
        let gates = x
            .matmul(&self.wx)?
            .add(&state.h.matmul(&self.wh)?)?
            .broadcast_add(&self.bias)?;
        let g = gates.chunk(4, D::Minus1)?;
        let i = sigmoid(&g[0])?;
        let f = sigmoid(&g[1])?;
        let cell = g[2].tanh()?;
        let o = sigmoid(&g[3])?;
        let c = f.mul(&state.c)?.add(&i.mul(&cell)?)?;
        let h = o.mul(&c.tanh()?)?;
        Ok(LstmState { h, c })
    }
}
