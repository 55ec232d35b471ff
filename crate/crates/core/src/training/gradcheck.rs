use candle_core::{DType, Tensor};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupError {
    pub group: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Compare backpropagated gradients of `loss` with central differences.
///
/// Up to `per_group` coordinates are drawn per parameter group (the name
/// prefix before the first `.`), each perturbed by `±step`. Requires a
/// 64-bit store. `floor` bounds the denominator of the relative error.
pub fn grad_check(
    store: &ParamStore,
    loss: impl Fn() -> Result<Tensor>,
    per_group: usize,
    step: f64,
    floor: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if store.dtype() != DType::F64 {
        return Err(Error::Contract("gradient checks need 64-bit parameters".into()));
    }
    let l = loss()?;
    let grads = l.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::new();
    for group in store.groups() {
        let members: Vec<usize> = store
            .vars()
            .iter()
            .enumerate()
            .filter(|(_, (name, _))| ParamStore::group_of(name) == group)
            .map(|(i, _)| i)
            .collect();
        let mut coords = Vec::new();
        for &i in &members {
            for j in 0..store.vars()[i].1.elem_count() {
                coords.push((i, j));
            }
        }
        let picks = sample(&mut rng, coords.len(), per_group.min(coords.len()));
        let mut result = GroupError {
            group: group.clone(),
            checked: 0,
            max_rel_error: 0.0,
            worst: None,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for p in picks.iter() {
            let (i, j) = coords[p];
            let (name, var) = &store.vars()[i];
            let analytic = match grads.get(var.as_tensor()) {
                Some(g) => g.flatten_all()?.to_vec1::<f64>()?[j],
                None => 0.0,
            };
            let original = var.as_tensor().detach();
            let flat = original.flatten_all()?.to_vec1::<f64>()?;
            let eval_at = |delta: f64| -> Result<f64> {
                let mut v = flat.clone();
                v[j] += delta;
                var.set(&Tensor::from_vec(v, original.shape(), original.device())?)?;
                scalar(&loss()?)
            };
            let plus = eval_at(step)?;
            let minus = eval_at(-step)?;
            var.set(&Tensor::from_vec(flat, original.shape(), original.device())?)?;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic, numeric, floor);
            result.checked += 1;
            if err > result.max_rel_error || result.worst.is_none() {
                result.max_rel_error = err.max(result.max_rel_error);
                result.worst = Some((name.clone(), j));
                result.worst_analytic = analytic;
                result.worst_numeric = numeric;
            }
        }
        groups.push(result);
    }
    Ok(GradCheckReport { groups })
}
