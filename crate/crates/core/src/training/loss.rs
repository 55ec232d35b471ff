use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardOutput, GaussianParams};
use crate::nn;

/// Prediction clamp for the Bernoulli likelihood.
pub const BCE_EPS: f64 = 1e-7;

/// Gaussian priors over every latent group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub beta_mean: [f64; 3],
    pub beta_std: [f64; 3],
    pub content_mean: f64,
    pub content_std: f64,
    pub initial_pose_mean: [f64; 3],
    pub initial_pose_std: [f64; 3],
}

impl PriorSpec {
    /// Priors with the given mean window scale (2 for digits, 4 for balls).
    pub fn with_scale(scale: f64) -> Self {
        Self {
            beta_mean: [0.0; 3],
            beta_std: [0.1; 3],
            content_mean: 0.0,
            content_std: 1.0,
            initial_pose_mean: [scale, 0.0, 0.0],
            initial_pose_std: [0.2, 1.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = self
            .beta_std
            .iter()
            .chain(self.initial_pose_std.iter())
            .chain(std::iter::once(&self.content_std));
        for s in stds {
            if !(*s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("prior std {s} must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// Which likelihood terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Both,
    PredictionOnly,
}

/// Closed-form `KL(q || p)` for diagonal Gaussians, summed over every element.
pub fn gaussian_kl(q: &GaussianParams, p: &GaussianParams) -> Result<Tensor> {
    if q.mean.dims() != p.mean.dims() {
        return Err(Error::Contract(format!(
            "KL between shapes {:?} and {:?}",
            q.mean.dims(),
            p.mean.dims()
        )));
    }
    let var_q = q.std.sqr()?;
    let var_p = p.std.sqr()?;
    let diff = q.mean.sub(&p.mean)?.sqr()?;
    let log_ratio = p.std.log()?.sub(&q.std.log()?)?;
    let quad = var_q.add(&diff)?.div(&(var_p * 2.0)?)?;
    Ok((log_ratio.add(&quad)? - 0.5)?.sum_all()?)
}

/// Bernoulli negative log-likelihood with real-valued targets, summed over
/// pixels and frames and averaged over the leading batch axis.
pub fn reconstruction_nll(predicted: &Tensor, target: &Tensor) -> Result<Tensor> {
    if predicted.dims() != target.dims() {
        return Err(Error::Contract(format!(
            "prediction shape {:?} differs from target shape {:?}",
            predicted.dims(),
            target.dims()
        )));
    }
    let batch = predicted.dims().first().copied().unwrap_or(1).max(1);
    Ok((nn::bce_sum(predicted, target, BCE_EPS)? / batch as f64)?)
}

/// Per-term values of the objective, all averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub prediction_nll: f64,
    pub reconstruction_nll: f64,
    pub kl_content: f64,
    pub kl_initial_pose: f64,
    pub kl_beta: f64,
    pub kl_pred_beta: f64,
}

impl LossBreakdown {
    pub fn kl(&self) -> f64 {
        self.kl_content + self.kl_initial_pose + self.kl_beta + self.kl_pred_beta
    }

    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.prediction_nll,
            self.reconstruction_nll,
            self.kl_content,
            self.kl_initial_pose,
            self.kl_beta,
            self.kl_pred_beta,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn prior_like(mean: &[f64], std: &[f64], like: &GaussianParams) -> Result<GaussianParams> {
    GaussianParams::constant(mean, std, like.mean.dims(), like.mean.dtype())
}

/// Negative ELBO: prediction NLL, the reconstruction NLL when `phase` is
/// [`Phase::Both`], and `kl_weight` times the KL of every latent group.
pub fn elbo_loss(
    out: &ForwardOutput,
    inputs: &Tensor,
    targets: &Tensor,
    priors: &PriorSpec,
    phase: Phase,
    kl_weight: f64,
) -> Result<(Tensor, LossBreakdown)> {
    let batch = inputs.dims().first().copied().unwrap_or(1).max(1) as f64;
    let lat = &out.latents;
    let pred_nll = reconstruction_nll(&out.prediction, targets)?;
    let rec_nll = reconstruction_nll(&out.reconstruction, inputs)?;
    let cm = vec![priors.content_mean; lat.content.dim()];
    let cs = vec![priors.content_std; lat.content.dim()];
    let kl_c = (gaussian_kl(&lat.content, &prior_like(&cm, &cs, &lat.content)?)? / batch)?;
    let kl_z0 = (gaussian_kl(
        &lat.initial_pose,
        &prior_like(&priors.initial_pose_mean, &priors.initial_pose_std, &lat.initial_pose)?,
    )? / batch)?;
    let kl_b = (gaussian_kl(&lat.betas, &prior_like(&priors.beta_mean, &priors.beta_std, &lat.betas)?)? / batch)?;
    let kl_pb = (gaussian_kl(
        &lat.pred_betas,
        &prior_like(&priors.beta_mean, &priors.beta_std, &lat.pred_betas)?,
    )? / batch)?;

    let kl = kl_c.add(&kl_z0)?.add(&kl_b)?.add(&kl_pb)?;
    let mut total = pred_nll.add(&(kl * kl_weight)?)?;
    if phase == Phase::Both {
        total = total.add(&rec_nll)?;
    }

    let mut b = LossBreakdown {
        total: 0.0,
        prediction_nll: scalar(&pred_nll)?,
        reconstruction_nll: if phase == Phase::Both { scalar(&rec_nll)? } else { 0.0 },
        kl_content: kl_weight * scalar(&kl_c)?,
        kl_initial_pose: kl_weight * scalar(&kl_z0)?,
        kl_beta: kl_weight * scalar(&kl_b)?,
        kl_pred_beta: kl_weight * scalar(&kl_pb)?,
    };
    b.total = b.prediction_nll + b.reconstruction_nll + b.kl();
    Ok((total, b))
}
