//! Tensor building blocks: custom kernels, layers and the parameter store.

mod conv;
mod layers;
mod pointwise;
pub mod params;
mod real;
mod sampler;

pub use conv::{conv2d, conv_transpose2d};
pub use layers::{sigmoid, Conv, ConvTranspose, Linear, Lstm, LstmState};
pub use pointwise::{bce_sum, compose_sum_clamp, leaky_relu};
pub use params::{ParamInit, ParamSpec, ParamStore};
pub use real::Real;
pub use sampler::{bilinear, crop, patch_center, pixel_center, place, to_patch_pixel, to_pixel};
