use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initial value distribution for a new parameter array.
#[derive(Debug, Clone)]
pub enum ParamInit {
    Zeros,
    Const(f64),
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
    Normal(f64),
    /// Explicit values in row-major order.
    Values(Vec<f64>),
}

/// Name and shape of one trainable array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Named trainable arrays in creation order.
///
/// Initial values come from a seeded stream so the same configuration and
/// seed always produce the same network.
#[derive(Debug)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
    index: HashMap<String, usize>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Register a new array. Names must be unique.
    pub fn add(&mut self, name: &str, shape: &[usize], init: ParamInit) -> Result<Tensor> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            ParamInit::Zeros => vec![0.0; n],
            ParamInit::Const(c) => vec![c; n],
            ParamInit::Uniform(bound) => (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect(),
            ParamInit::Normal(std) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    std * z
                })
                .collect(),
            ParamInit::Values(v) => {
                if v.len() != n {
                    return Err(Error::Contract(format!("{name}: {} initial values for {n} elements", v.len())));
                }
                v
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), var));
        Ok(out)
    }

    pub fn vars(&self) -> &[(String, Var)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn manifest(&self) -> Vec<ParamSpec> {
        self.entries
            .iter()
            .map(|(name, v)| ParamSpec {
                name: name.clone(),
                shape: v.dims().to_vec(),
            })
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    /// Top-level group a parameter belongs to (text before the first `.`).
    pub fn group_of(name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }

    /// Ordered, de-duplicated list of parameter groups.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (name, _) in &self.entries {
            let g = Self::group_of(name);
            if out.last().map(String::as_str) != Some(g) && !out.iter().any(|x| x == g) {
                out.push(g.to_string());
            }
        }
        out
    }

    /// Raw little-endian bytes of every array, concatenated in manifest order.
    pub fn to_le_bytes(&self) -> Result<Vec<u8>> {
        tensors_to_le_bytes(self.entries.iter().map(|(_, v)| v.as_tensor()))
    }

    /// Overwrite every array from bytes produced by [`Self::to_le_bytes`],
    /// after checking the stored manifest matches this store's.
    pub fn load_le_bytes(&self, manifest: &[ParamSpec], bytes: &[u8]) -> Result<()> {
        check_manifest(&self.manifest(), manifest)?;
        let tensors = tensors_from_le_bytes(manifest, self.dtype, bytes)?;
        for ((_, var), t) in self.entries.iter().zip(tensors) {
            var.set(&t)?;
        }
        Ok(())
    }
}

pub(crate) fn check_manifest(expected: &[ParamSpec], found: &[ParamSpec]) -> Result<()> {
    for exp in expected {
        match found.iter().find(|f| f.name == exp.name) {
            None => {
                return Err(Error::Checkpoint {
                    field: exp.name.clone(),
                    detail: "missing from checkpoint".into(),
                })
            }
            Some(f) if f.shape != exp.shape => {
                return Err(Error::Checkpoint {
                    field: exp.name.clone(),
                    detail: format!("shape {:?} in checkpoint, model expects {:?}", f.shape, exp.shape),
                })
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = found.iter().find(|f| !expected.iter().any(|e| e.name == f.name)) {
        return Err(Error::Checkpoint {
            field: extra.name.clone(),
            detail: "not a parameter of this model".into(),
        });
    }
    if expected.iter().map(|e| &e.name).ne(found.iter().map(|f| &f.name)) {
        return Err(Error::Checkpoint {
            field: "manifest".into(),
            detail: "parameter order differs".into(),
        });
    }
    Ok(())
}

pub(crate) fn tensors_to_le_bytes<'a>(tensors: impl Iterator<Item = &'a Tensor>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for t in tensors {
        match t.dtype() {
            DType::F32 => t.flatten_all()?.to_vec1::<f32>()?.iter().for_each(|v| out.extend(v.to_le_bytes())),
            DType::F64 => t.flatten_all()?.to_vec1::<f64>()?.iter().for_each(|v| out.extend(v.to_le_bytes())),
            dt => return Err(Error::Contract(format!("cannot serialize dtype {dt:?}"))),
        }
    }
    Ok(out)
}

pub(crate) fn tensors_from_le_bytes(specs: &[ParamSpec], dtype: DType, bytes: &[u8]) -> Result<Vec<Tensor>> {
    let width = dtype.size_in_bytes();
    let total: usize = specs.iter().map(|s| s.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * width {
        return Err(Error::Checkpoint {
            field: "data".into(),
            detail: format!("{} bytes, expected {} for {dtype:?}", bytes.len(), total * width),
        });
    }
    let mut at = 0;
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let chunk = &bytes[at..at + n * width];
        at += n * width;
        let t = match dtype {
            DType::F32 => Tensor::from_vec(
                chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect::<Vec<_>>(),
                spec.shape.as_slice(),
                &Device::Cpu,
            )?,
            DType::F64 => Tensor::from_vec(
                chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect::<Vec<_>>(),
                spec.shape.as_slice(),
                &Device::Cpu,
            )?,
            dt => return Err(Error::Contract(format!("cannot deserialize dtype {dt:?}"))),
        };
        out.push(t);
    }
    Ok(out)
}
