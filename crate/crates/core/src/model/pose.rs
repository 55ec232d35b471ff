use candle_core::{Tensor, D};

use crate::error::{Error, Result};
use crate::nn;

/// Smallest attainable window scale.
pub const SCALE_FLOOR: f64 = 0.5;
const SCALE_SHARPNESS: f64 = 10.0;

/// Spatial-transformer parameters for one object at one timestep.
///
/// The attention window has half-width `1 / s` and is centered at
/// `(tx, ty)`, all in `[-1, 1]` frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVector {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

impl PoseVector {
    pub fn new(s: f64, tx: f64, ty: f64) -> Self {
        Self { s, tx, ty }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.s, self.tx, self.ty]
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: &Tensor) -> candle_core::Result<Tensor> {
    let tail = x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    x.relu()? + tail
}

/// Scalar version of the scale map, for reporting.
pub fn constrain_scale(raw: f64) -> f64 {
    let x = SCALE_SHARPNESS * (raw - SCALE_FLOOR);
    let sp = x.max(0.0) + (-x.abs()).exp().ln_1p();
    SCALE_FLOOR + sp / SCALE_SHARPNESS
}

/// Map raw pose latents `(.., 3)` to valid poses: the scale goes through a
/// softplus with floor 0.5 (close to identity above ~0.7), translations pass
/// through unchanged.
pub fn constrain_pose(raw: &Tensor) -> Result<Tensor> {
    let s = raw.narrow(D::Minus1, 0, 1)?;
    let t = raw.narrow(D::Minus1, 1, 2)?;
    let x = s.affine(SCALE_SHARPNESS, -SCALE_SHARPNESS * SCALE_FLOOR)?;
    let s = softplus(&x)?.affine(1.0 / SCALE_SHARPNESS, SCALE_FLOOR)?;
    Ok(Tensor::cat(&[&s, &t], D::Minus1)?)
}

/// Additive pose transition: `z_t = z_{t-1} + beta_t`.
pub fn transition(prev: &Tensor, beta: &Tensor) -> Result<Tensor> {
    Ok(prev.add(beta)?)
}

/// Poses `z_1..z_L` from `z0 (.., 3)` and `betas (.., L, 3)`.
pub fn compose_pose_trajectory(z0: &Tensor, betas: &Tensor) -> Result<Tensor> {
    let rank = betas.rank();
    if rank < 2 {
        return Err(crate::Error::Contract("betas need a time axis".into()));
    }
    let len = betas.dim(rank - 2)?;
    if len == 0 {
        return Ok(betas.clone());
    }
    let steps = betas.cumsum(rank - 2)?;
    Ok(steps.broadcast_add(&z0.unsqueeze(rank - 2)?)?)
}

/// Crop one `(h, w)` frame into a `patch x patch` canonical view.
pub fn crop_object(frame: &Tensor, pose: PoseVector, patch: usize) -> Result<Tensor> {
    let (h, w) = frame.dims2()?;
    let poses = Tensor::new(&pose.to_array(), frame.device())?
        .to_dtype(frame.dtype())?
        .reshape((1, 1, 1, 3))?;
    let out = nn::crop(&frame.reshape((1, 1, h, w))?, &poses, patch)?;
    Ok(out.reshape((patch, patch))?)
}

/// Place one `(c, c)` patch into a `frame x frame` canvas.
pub fn place_object(patch: &Tensor, pose: PoseVector, frame: usize) -> Result<Tensor> {
    let (c, c2) = patch.dims2()?;
    let poses = Tensor::new(&pose.to_array(), patch.device())?
        .to_dtype(patch.dtype())?
        .reshape((1, 1, 3))?;
    let out = nn::place(&patch.reshape((1, c, c2))?, &poses, frame)?;
    Ok(out.reshape((frame, frame))?)
}

/// Sum component frames along `dim` and clamp to `[0, 1]`.
pub fn compose_frame(components: &Tensor, dim: usize) -> Result<Tensor> {
    let dims = components.dims();
    if dim >= dims.len() {
        return Err(Error::Contract(format!("compose axis {dim} out of range for {dims:?}")));
    }
    let pre: usize = dims[..dim].iter().product();
    let post: usize = dims[dim + 1..].iter().product();
    let mut out_dims = dims.to_vec();
    out_dims.remove(dim);
    let flat = components.reshape((pre, dims[dim], post))?;
    Ok(nn::compose_sum_clamp(&flat)?.reshape(out_dims)?)
}
