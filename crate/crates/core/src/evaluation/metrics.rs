//! Frame-level reconstruction metrics.

use candle_core::{DType, Tensor};

use crate::error::{Error, Result};
use crate::training::BCE_EPS;

fn check_pair(predictions: &Tensor, targets: &Tensor) -> Result<()> {
    if predictions.dims() != targets.dims() {
        return Err(Error::Contract(format!(
            "prediction shape {:?} differs from target shape {:?}",
            predictions.dims(),
            targets.dims()
        )));
    }
    if predictions.rank() < 3 {
        return Err(Error::Contract(format!(
            "expected (batch, frames, ..) tensors, got {:?}",
            predictions.dims()
        )));
    }
    Ok(())
}

/// Per-sequence, per-frame values `(b, k)` of a pixelwise loss summed over
/// each frame.
fn per_frame(pixelwise: Tensor) -> Result<Vec<Vec<f64>>> {
    let (b, k) = (pixelwise.dims()[0], pixelwise.dims()[1]);
    Ok(pixelwise.reshape((b, k, ()))?.sum(2)?.to_vec2::<f64>()?)
}

fn frame_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let k = rows.first().map_or(0, Vec::len);
    (0..k)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// Binary cross-entropy of each frame summed over its pixels, `(b, k)`.
/// Predictions are clamped to `[eps, 1 - eps]`; targets may be real-valued.
pub fn frame_bce_per_sequence(predictions: &Tensor, targets: &Tensor) -> Result<Vec<Vec<f64>>> {
    check_pair(predictions, targets)?;
    let p = predictions.to_dtype(DType::F64)?.clamp(BCE_EPS, 1.0 - BCE_EPS)?;
    let y = targets.to_dtype(DType::F64)?;
    let ll = (y.mul(&p.log()?)? + y.affine(-1.0, 1.0)?.mul(&p.affine(-1.0, 1.0)?.log()?)?)?;
    per_frame(ll.neg()?)
}

/// Squared error of each frame summed over its pixels, `(b, k)`.
pub fn frame_mse_per_sequence(predictions: &Tensor, targets: &Tensor) -> Result<Vec<Vec<f64>>> {
    check_pair(predictions, targets)?;
    let d = (predictions.to_dtype(DType::F64)? - targets.to_dtype(DType::F64)?)?;
    per_frame(d.sqr()?)
}

/// Per-frame BCE averaged over sequences.
pub fn frame_bce(predictions: &Tensor, targets: &Tensor) -> Result<Vec<f64>> {
    Ok(frame_means(&frame_bce_per_sequence(predictions, targets)?))
}

/// Per-frame summed squared error averaged over sequences.
pub fn frame_mse(predictions: &Tensor, targets: &Tensor) -> Result<Vec<f64>> {
    Ok(frame_means(&frame_mse_per_sequence(predictions, targets)?))
}

/// BCE summed over all pixels of all predicted frames, averaged over
/// sequences.
pub fn eval_bce(predictions: &Tensor, targets: &Tensor) -> Result<f64> {
    Ok(frame_bce(predictions, targets)?.iter().sum())
}

/// Squared error summed over the pixels of a frame, averaged over frames
/// and then over sequences.
pub fn eval_mse(predictions: &Tensor, targets: &Tensor) -> Result<f64> {
    let f = frame_mse(predictions, targets)?;
    Ok(f.iter().sum::<f64>() / f.len().max(1) as f64)
}

/// Baseline that repeats the last input frame `k` times: `(b, t, ..)` to
/// `(b, k, ..)`.
pub fn copy_last_frame(inputs: &Tensor, k: usize) -> Result<Tensor> {
    let t = inputs.dims().get(1).copied().unwrap_or(0);
    if t == 0 {
        return Err(Error::Contract("copy-last baseline needs at least one input frame".into()));
    }
    let last = inputs.narrow(1, t - 1, 1)?;
    let mut dims = inputs.dims().to_vec();
    dims[1] = k;
    Ok(last.broadcast_as(dims)?.contiguous()?)
}

/// Pixel mass of every component over `frames` of `(b, n, l, h, w)` placed
/// component frames, `(b, n)`.
pub fn component_masses(component_frames: &Tensor, frames: std::ops::Range<usize>) -> Result<Vec<Vec<f64>>> {
    let dims = component_frames.dims();
    if dims.len() != 5 || frames.end > dims[2] || frames.start > frames.end {
        return Err(Error::Contract(format!(
            "component frames {dims:?} cannot be summed over frames {frames:?}"
        )));
    }
    let sel = component_frames.narrow(2, frames.start, frames.end - frames.start)?;
    Ok(sel
        .to_dtype(DType::F64)?
        .reshape((dims[0], dims[1], ()))?
        .sum(2)?
        .to_vec2::<f64>()?)
}

/// Share of the total mass held by each rank, largest first, averaged over
/// sequences. Sequences with no mass are skipped.
pub fn ranked_mass_shares(masses: &[Vec<f64>]) -> Vec<f64> {
    let n = masses.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; n];
    let mut count = 0usize;
    for m in masses {
        let total: f64 = m.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let mut sorted = m.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        for (a, v) in acc.iter_mut().zip(sorted) {
            *a += v / total;
        }
        count += 1;
    }
    if count > 0 {
        acc.iter_mut().for_each(|a| *a /= count as f64);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn uniform_half_predictor_costs_ln2_per_pixel() {
        let y = Tensor::from_vec(
            (0..2 * 3 * 16).map(|i| (i % 3 == 0) as u8 as f32).collect::<Vec<_>>(),
            (2, 3, 4, 4),
            &Device::Cpu,
        )
        .unwrap();
        let p = Tensor::full(0.5f32, (2, 3, 4, 4), &Device::Cpu).unwrap();
        let bce = eval_bce(&p, &y).unwrap();
        assert!((bce - 48.0 * std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn zero_prediction_mse_counts_foreground() {
        let mut v = vec![0f32; 2 * 16];
        for i in [0, 3, 5, 16, 17] {
            v[i] = 1.0;
        }
        let y = Tensor::from_vec(v, (1, 2, 4, 4), &Device::Cpu).unwrap();
        let p = y.zeros_like().unwrap();
        assert_eq!(frame_mse(&p, &y).unwrap(), vec![3.0, 2.0]);
        assert_eq!(eval_mse(&p, &y).unwrap(), 2.5);
        assert_eq!(eval_mse(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let a = Tensor::zeros((1, 2, 4, 4), DType::F32, &Device::Cpu).unwrap();
        let b = Tensor::zeros((1, 3, 4, 4), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(eval_bce(&a, &b), Err(Error::Contract(_))));
        assert!(matches!(eval_mse(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn copy_last_repeats_final_input() {
        let x = Tensor::arange(0f32, 8.0, &Device::Cpu).unwrap().reshape((1, 2, 2, 2)).unwrap();
        let c = copy_last_frame(&x, 3).unwrap();
        assert_eq!(c.dims(), &[1, 3, 2, 2]);
        assert_eq!(c.get(0).unwrap().get(2).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap(), vec![4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn mass_shares_are_sorted_and_normalized() {
        let s = ranked_mass_shares(&[vec![1.0, 3.0, 0.0], vec![2.0, 2.0, 4.0], vec![0.0, 0.0, 0.0]]);
        assert_eq!(s, vec![0.625, 0.25, 0.125]);
    }
}
