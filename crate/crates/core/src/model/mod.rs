//! Decomposed, disentangled video prediction network.

mod gaussian;
mod networks;
mod pose;

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

pub use gaussian::{reparameterize, standard_normal, GaussianParams, Sampling, MAX_STD, MIN_STD};
pub use networks::{ConvEncoder, PatchDecoder};
pub use pose::{
    compose_frame, compose_pose_trajectory, constrain_pose, constrain_scale, crop_object, place_object, softplus,
    transition, PoseVector, SCALE_FLOOR,
};

use crate::error::{Error, Result};
use crate::nn::{self, Linear, Lstm, LstmState, ParamInit, ParamStore};

pub const POSE_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub frame_size: usize,
    pub n_components: usize,
    #[serde(default = "defaults::content_dim")]
    pub content_dim: usize,
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    #[serde(default = "defaults::feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "defaults::base_channels")]
    pub base_channels: usize,
    /// Initial scale the pose heads start from (prior mean of `s`).
    #[serde(default = "defaults::initial_scale")]
    pub initial_scale: f64,
    /// Pass hidden states between components while predicting.
    #[serde(default = "defaults::dependency")]
    pub dependency: bool,
    #[serde(default = "defaults::precision")]
    pub precision: Precision,
}

mod defaults {
    use super::Precision;
    pub fn content_dim() -> usize {
        128
    }
    pub fn hidden() -> usize {
        64
    }
    pub fn feature_dim() -> usize {
        128
    }
    pub fn base_channels() -> usize {
        16
    }
    pub fn initial_scale() -> f64 {
        2.0
    }
    pub fn dependency() -> bool {
        true
    }
    pub fn precision() -> Precision {
        Precision::F32
    }
}

impl ModelConfig {
    pub fn new(frame_size: usize, n_components: usize) -> Self {
        Self {
            frame_size,
            n_components,
            content_dim: defaults::content_dim(),
            hidden: defaults::hidden(),
            feature_dim: defaults::feature_dim(),
            base_channels: defaults::base_channels(),
            initial_scale: defaults::initial_scale(),
            dependency: true,
            precision: Precision::F32,
        }
    }

    /// 16x16 frames, two components, narrow layers, 64-bit. Windows start
    /// wider than the frame (scale 0.8).
    pub fn miniature() -> Self {
        Self {
            frame_size: 16,
            n_components: 2,
            content_dim: 6,
            hidden: 5,
            feature_dim: 7,
            base_channels: 2,
            initial_scale: 0.8,
            dependency: true,
            precision: Precision::F64,
        }
    }

    pub fn patch_size(&self) -> usize {
        self.frame_size / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size < 16 || !self.frame_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "frame_size {} must be a power of two >= 16",
                self.frame_size
            )));
        }
        for (name, v) in [
            ("n_components", self.n_components),
            ("content_dim", self.content_dim),
            ("hidden", self.hidden),
            ("feature_dim", self.feature_dim),
            ("base_channels", self.base_channels),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.initial_scale > SCALE_FLOOR) || !self.initial_scale.is_finite() {
            return Err(Error::Config(format!(
                "initial_scale {} must exceed {SCALE_FLOOR}",
                self.initial_scale
            )));
        }
        Ok(())
    }
}

/// Posterior parameters from the inference network, batch-major:
/// `initial_pose (b, n, 3)`, `betas (b, n, t, 3)`.
#[derive(Debug, Clone)]
pub struct PosePosterior {
    pub initial_pose: GaussianParams,
    pub betas: GaussianParams,
}

/// Predicted-window transitions for every component: `(b, n, k, 3)`.
#[derive(Debug, Clone)]
pub struct PredictedTransitions {
    pub betas: GaussianParams,
    pub samples: Tensor,
    pub poses: Tensor,
}

/// All latent quantities of one forward pass.
#[derive(Debug, Clone)]
pub struct Latents {
    pub content: GaussianParams,
    pub content_sample: Tensor,
    pub initial_pose: GaussianParams,
    pub initial_pose_sample: Tensor,
    pub betas: GaussianParams,
    pub beta_samples: Tensor,
    pub pred_betas: GaussianParams,
    pub pred_beta_samples: Tensor,
    /// Raw pose latents over the full `T + K` window, `(b, n, t + k, 3)`.
    pub poses: Tensor,
}

impl Latents {
    /// Valid poses (scale mapped) over the full window.
    pub fn constrained_poses(&self) -> Result<Tensor> {
        constrain_pose(&self.poses)
    }

    /// View of one component of one sequence.
    pub fn component(&self, b: usize, i: usize) -> Result<ComponentLatents> {
        let pick = |t: &Tensor| -> Result<Tensor> { Ok(t.get(b)?.get(i)?) };
        let pick_g = |g: &GaussianParams| -> Result<GaussianParams> {
            GaussianParams::new(pick(&g.mean)?, pick(&g.std)?)
        };
        let betas = GaussianParams::new(
            Tensor::cat(&[&pick(&self.betas.mean)?, &pick(&self.pred_betas.mean)?], 0)?,
            Tensor::cat(&[&pick(&self.betas.std)?, &pick(&self.pred_betas.std)?], 0)?,
        )?;
        let samples = Tensor::cat(&[&pick(&self.beta_samples)?, &pick(&self.pred_beta_samples)?], 0)?;
        Ok(ComponentLatents {
            content: pick_g(&self.content)?,
            content_sample: pick(&self.content_sample)?,
            initial_pose: pick_g(&self.initial_pose)?,
            initial_pose_sample: pick(&self.initial_pose_sample)?,
            transitions: betas,
            transition_samples: samples,
        })
    }
}

/// Latents of a single component; transitions cover `T + K` steps.
#[derive(Debug, Clone)]
pub struct ComponentLatents {
    pub content: GaussianParams,
    pub content_sample: Tensor,
    pub initial_pose: GaussianParams,
    pub initial_pose_sample: Tensor,
    pub transitions: GaussianParams,
    pub transition_samples: Tensor,
}

impl ComponentLatents {
    pub fn pose_trajectory(&self) -> Result<Tensor> {
        compose_pose_trajectory(&self.initial_pose_sample, &self.transition_samples)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `(b, t, h, w)`
    pub reconstruction: Tensor,
    /// `(b, k, h, w)`
    pub prediction: Tensor,
    /// Placed component frames before composition, `(b, n, t + k, h, w)`.
    pub component_frames: Tensor,
    /// Decoded canonical patches, `(b, n, c, c)`.
    pub patches: Tensor,
    pub latents: Latents,
}

/// The full network with its parameters.
#[derive(Debug)]
pub struct Ddpae {
    config: ModelConfig,
    store: ParamStore,
    frame_encoder: ConvEncoder,
    infer_temporal: Lstm,
    infer_component: Lstm,
    initial_pose_head: Linear,
    beta_head: Linear,
    content_encoder: ConvEncoder,
    content_pool: Lstm,
    content_head: Linear,
    pred_encoder: Lstm,
    pred_decoder: Lstm,
    pred_head: Linear,
    patch_decoder: PatchDecoder,
}

fn pose_head(
    store: &mut ParamStore,
    name: &str,
    hidden: usize,
    mean: [f64; 3],
    std: [f64; 3],
) -> Result<Linear> {
    let bound = 0.1 / (hidden as f64).sqrt();
    let bias = mean.iter().copied().chain(std.iter().map(|s| s.ln())).collect();
    Linear::with_init(
        store,
        name,
        hidden,
        2 * POSE_DIM,
        ParamInit::Uniform(bound),
        ParamInit::Values(bias),
    )
}

impl Ddpae {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.precision.dtype(), seed);
        let s = &mut store;
        let c = &config;
        let h = c.hidden;
        let frame_encoder = ConvEncoder::new(s, "frame_encoder", c.frame_size, c.base_channels, c.feature_dim)?;
        let infer_temporal = Lstm::new(s, "infer_temporal", c.feature_dim, h)?;
        let infer_component = Lstm::new(s, "infer_component", h, h)?;
        let initial_pose_head = pose_head(s, "initial_pose_head", h, [c.initial_scale, 0.0, 0.0], [0.1; 3])?;
        let beta_head = pose_head(s, "beta_head", h, [0.0; 3], [0.05; 3])?;
        let content_encoder =
            ConvEncoder::new(s, "content_encoder", c.patch_size(), c.base_channels, c.feature_dim)?;
        let content_pool = Lstm::new(s, "content_pool", c.feature_dim, h)?;
        let content_head = Linear::new(s, "content_head", h, 2 * c.content_dim)?;
        let pred_encoder = Lstm::new(s, "pred_encoder", 2 * POSE_DIM, h)?;
        let pred_decoder = Lstm::new(s, "pred_decoder", POSE_DIM + h, h)?;
        let pred_head = pose_head(s, "pred_head", h, [0.0; 3], [0.05; 3])?;
        let patch_decoder = PatchDecoder::new(s, "patch_decoder", c.patch_size(), c.base_channels, c.content_dim)?;
        Ok(Self {
            config,
            store,
            frame_encoder,
            infer_temporal,
            infer_component,
            initial_pose_head,
            beta_head,
            content_encoder,
            content_pool,
            content_head,
            pred_encoder,
            pred_decoder,
            pred_head,
            patch_decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Switch the cross-component link of the prediction decoder on or off.
    /// Parameters are shared by both modes.
    pub fn set_dependency(&mut self, on: bool) {
        self.config.dependency = on;
    }

    fn check_video(&self, inputs: &Tensor) -> Result<(usize, usize)> {
        let dims = inputs.dims();
        let f = self.config.frame_size;
        if dims.len() != 4 || dims[2] != f || dims[3] != f || dims[1] == 0 || dims[0] == 0 {
            return Err(Error::Contract(format!(
                "expected inputs (batch, T >= 1, {f}, {f}), got {dims:?}"
            )));
        }
        if inputs.dtype() != self.dtype() {
            return Err(Error::Contract(format!(
                "input dtype {:?} differs from model dtype {:?}",
                inputs.dtype(),
                self.dtype()
            )));
        }
        Ok((dims[0], dims[1]))
    }

    /// Per-frame features `(b, t, feature_dim)`.
    pub fn frame_features(&self, inputs: &Tensor) -> Result<Tensor> {
        let (b, t) = self.check_video(inputs)?;
        let f = self.config.frame_size;
        let feats = self.frame_encoder.forward(&inputs.reshape((b * t, f, f))?)?;
        Ok(feats.reshape((b, t, self.config.feature_dim))?)
    }

    /// Posterior over initial poses and input-window transitions for
    /// `n_components` components. Component `i` is conditioned on the
    /// components before it through the component-level recurrence.
    pub fn infer_latents(&self, inputs: &Tensor, n_components: usize) -> Result<PosePosterior> {
        if n_components == 0 {
            return Err(Error::Contract("n_components must be positive".into()));
        }
        let feats = self.frame_features(inputs)?;
        let (b, t, _) = feats.dims3()?;
        let h = self.config.hidden;
        let mut comp_state = LstmState::zeros(b, h, &feats)?;
        let mut z0 = Vec::with_capacity(n_components);
        let mut betas = Vec::with_capacity(n_components);
        for _ in 0..n_components {
            let mut state = comp_state.clone();
            let mut hs = Vec::with_capacity(t);
            for step in 0..t {
                let x = feats.narrow(1, step, 1)?.squeeze(1)?;
                state = self.infer_temporal.step(&x, &state)?;
                hs.push(state.h.clone());
            }
            comp_state = self.infer_component.step(&state.h, &comp_state)?;
            z0.push(self.initial_pose_head.forward(&comp_state.h)?);
            let hs = Tensor::stack(&hs, 1)?.reshape((b * t, h))?;
            betas.push(self.beta_head.forward(&hs)?.reshape((b, t, 2 * POSE_DIM))?);
        }
        Ok(PosePosterior {
            initial_pose: GaussianParams::from_head(&Tensor::stack(&z0, 1)?)?,
            betas: GaussianParams::from_head(&Tensor::stack(&betas, 1)?)?,
        })
    }

    /// Content posterior `(b, n, content_dim)` from crops of `inputs` at raw
    /// pose latents `poses (b, n, t, 3)`.
    pub fn encode_content(&self, inputs: &Tensor, poses: &Tensor) -> Result<GaussianParams> {
        let (b, t) = self.check_video(inputs)?;
        let (pb, n, pt, pd) = poses.dims4()?;
        if pb != b || pt != t || pd != POSE_DIM {
            return Err(Error::Contract(format!(
                "poses {:?} do not match inputs {:?}",
                poses.dims(),
                inputs.dims()
            )));
        }
        let c = self.config.patch_size();
        let patches = nn::crop(inputs, &constrain_pose(poses)?, c)?;
        let feats = self
            .content_encoder
            .forward(&patches.reshape((b * n * t, c, c))?)?
            .reshape((b * n, t, self.config.feature_dim))?;
        let mut state = LstmState::zeros(b * n, self.config.hidden, &feats)?;
        for step in 0..t {
            state = self.content_pool.step(&feats.narrow(1, step, 1)?.squeeze(1)?, &state)?;
        }
        let raw = self.content_head.forward(&state.h)?;
        GaussianParams::from_head(&raw.reshape((b, n, 2 * self.config.content_dim))?)
    }

    /// Roll pose transitions forward `k` steps from the input window.
    ///
    /// `beta_samples` and `poses` are `(b, n, t, 3)`. An encoder recurrence
    /// reads the input window per component; the decoder then emits one
    /// transition per step from the previous pose and, in dependency mode,
    /// the previous component's decoder state at the same step.
    pub fn predict_transitions(
        &self,
        beta_samples: &Tensor,
        poses: &Tensor,
        k: usize,
        sampling: &mut Sampling,
    ) -> Result<PredictedTransitions> {
        let (b, n, t, d) = poses.dims4()?;
        if beta_samples.dims() != poses.dims() || d != POSE_DIM || t == 0 {
            return Err(Error::Contract(format!(
                "transition inputs {:?} and poses {:?} must both be (b, n, T >= 1, 3)",
                beta_samples.dims(),
                poses.dims()
            )));
        }
        let dtype = poses.dtype();
        if k == 0 {
            let empty = Tensor::zeros((b, n, 0, POSE_DIM), dtype, poses.device())?;
            return Ok(PredictedTransitions {
                betas: GaussianParams::new(empty.clone(), empty.clone())?,
                samples: empty.clone(),
                poses: empty,
            });
        }
        let h = self.config.hidden;
        let enc_in = Tensor::cat(&[beta_samples, poses], D::Minus1)?.reshape((b * n, t, 2 * POSE_DIM))?;
        let mut enc = LstmState::zeros(b * n, h, &enc_in)?;
        for step in 0..t {
            enc = self.pred_encoder.step(&enc_in.narrow(1, step, 1)?.squeeze(1)?, &enc)?;
        }
        let enc_h = enc.h.reshape((b, n, h))?;
        let enc_c = enc.c.reshape((b, n, h))?;
        let mut states: Vec<LstmState> = (0..n)
            .map(|i| {
                Ok(LstmState {
                    h: enc_h.narrow(1, i, 1)?.squeeze(1)?,
                    c: enc_c.narrow(1, i, 1)?.squeeze(1)?,
                })
            })
            .collect::<Result<_>>()?;
        let mut prev_pose: Vec<Tensor> = (0..n)
            .map(|i| Ok(poses.narrow(1, i, 1)?.narrow(2, t - 1, 1)?.reshape((b, POSE_DIM))?))
            .collect::<Result<_>>()?;
        let zeros = Tensor::zeros((b, h), dtype, poses.device())?;
        let mut params = vec![Vec::with_capacity(k); n];
        let mut samples = vec![Vec::with_capacity(k); n];
        let mut out_poses = vec![Vec::with_capacity(k); n];
        for _ in 0..k {
            for i in 0..n {
                let link = if self.config.dependency && i > 0 {
                    states[i - 1].h.clone()
                } else {
                    zeros.clone()
                };
                let x = Tensor::cat(&[&prev_pose[i], &link], 1)?;
                states[i] = self.pred_decoder.step(&x, &states[i])?;
                let g = GaussianParams::from_head(&self.pred_head.forward(&states[i].h)?)?;
                let beta = sampling.draw(&g)?;
                let pose = transition(&prev_pose[i], &beta)?;
                params[i].push(g);
                samples[i].push(beta);
                out_poses[i].push(pose.clone());
                prev_pose[i] = pose;
            }
        }
        let per_comp = |v: &[Tensor]| Tensor::stack(v, 1);
        let g: Vec<GaussianParams> = params
            .iter()
            .map(|p| GaussianParams::stack(p, 1))
            .collect::<Result<_>>()?;
        let samples: Vec<Tensor> = samples.iter().map(|s| per_comp(s)).collect::<candle_core::Result<_>>()?;
        let out_poses: Vec<Tensor> = out_poses.iter().map(|s| per_comp(s)).collect::<candle_core::Result<_>>()?;
        Ok(PredictedTransitions {
            betas: GaussianParams::stack(&g, 1)?,
            samples: Tensor::stack(&samples, 1)?,
            poses: Tensor::stack(&out_poses, 1)?,
        })
    }

    /// Canonical patches `(m, c, c)` from content codes `(m, content_dim)`.
    pub fn decode_content(&self, content: &Tensor) -> Result<Tensor> {
        let (_, d) = content.dims2()?;
        if d != self.config.content_dim {
            return Err(Error::Contract(format!(
                "content code width {d}, model expects {}",
                self.config.content_dim
            )));
        }
        self.patch_decoder.forward(content)
    }

    /// Full pipeline: infer, encode content, predict `pred_len` steps, decode
    /// once per component and compose every frame of the `T + K` window.
    pub fn forward(&self, inputs: &Tensor, pred_len: usize, sampling: &mut Sampling) -> Result<ForwardOutput> {
        let (b, t) = self.check_video(inputs)?;
        let n = self.config.n_components;
        let f = self.config.frame_size;
        let c = self.config.patch_size();

        let posterior = self.infer_latents(inputs, n)?;
        let z0 = sampling.draw(&posterior.initial_pose)?;
        let betas = sampling.draw(&posterior.betas)?;
        let poses_in = compose_pose_trajectory(&z0, &betas)?;

        let content = self.encode_content(inputs, &poses_in)?;
        let zc = sampling.draw(&content)?;

        let pred = self.predict_transitions(&betas, &poses_in, pred_len, sampling)?;
        let poses = if pred_len == 0 {
            poses_in.clone()
        } else {
            Tensor::cat(&[&poses_in, &pred.poses], 2)?
        };
        let l = t + pred_len;

        let patches = self.decode_content(&zc.reshape((b * n, self.config.content_dim))?)?;
        let placed = nn::place(&patches, &constrain_pose(&poses)?.reshape((b * n, l, POSE_DIM))?, f)?;
        let component_frames = placed.reshape((b, n, l, f, f))?;
        let frames = compose_frame(&component_frames, 1)?;
        let reconstruction = frames.narrow(1, 0, t)?;
        let prediction = if pred_len == 0 {
            Tensor::zeros((b, 0, f, f), frames.dtype(), frames.device())?
        } else {
            frames.narrow(1, t, pred_len)?
        };
        Ok(ForwardOutput {
            reconstruction,
            prediction,
            component_frames,
            patches: patches.reshape((b, n, c, c))?,
            latents: Latents {
                content,
                content_sample: zc,
                initial_pose: posterior.initial_pose,
                initial_pose_sample: z0,
                betas: posterior.betas,
                beta_samples: betas,
                pred_betas: pred.betas,
                pred_beta_samples: pred.samples,
                poses,
            },
        })
    }
}
