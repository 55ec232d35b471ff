//! Fused elementwise kernels for the large per-pixel tensors.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp1, CustomOp2, DType, Layout, Shape, Tensor, WithDType};

use super::real::{cpu_slice, to_vec, Real};

#[derive(Debug, Clone, Copy)]
struct LeakyRelu {
    slope: f64,
}

impl CustomOp1 for LeakyRelu {
    fn name(&self) -> &'static str {
        "ddpae-leaky-relu"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        fn run<F: Real>(x: &[F], slope: F) -> Vec<F> {
            x.iter().map(|&v| if v > F::zero() { v } else { v * slope }).collect()
        }
        let out = match s.dtype() {
            DType::F32 => CpuStorage::F32(run(cpu_slice::<f32>(s, l)?, self.slope as f32)),
            DType::F64 => CpuStorage::F64(run(cpu_slice::<f64>(s, l)?, self.slope)),
            dt => candle_core::bail!("leaky_relu: unsupported dtype {dt:?}"),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, x: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        fn run<F: Real>(x: &Tensor, grad: &Tensor, slope: F) -> candle_core::Result<Tensor> {
            let xv = to_vec::<F>(x)?;
            let gv = to_vec::<F>(grad)?;
            let out: Vec<F> = xv
                .iter()
                .zip(&gv)
                .map(|(&v, &g)| if v > F::zero() { g } else { g * slope })
                .collect();
            Tensor::from_vec(out, x.shape(), x.device())
        }
        Ok(Some(match x.dtype() {
            DType::F32 => run(x, grad, self.slope as f32)?,
            DType::F64 => run(x, grad, self.slope)?,
            dt => candle_core::bail!("leaky_relu: unsupported dtype {dt:?}"),
        }))
    }
}

/// `x` where positive, `slope * x` elsewhere.
pub fn leaky_relu(x: &Tensor, slope: f64) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(LeakyRelu { slope })
}

/// Sum over axis 1 of `(b, n, rest..)` followed by a clamp to `[0, 1]`.
#[derive(Debug, Clone, Copy)]
struct Compose;

fn compose_split(dims: &[usize]) -> candle_core::Result<(usize, usize, usize)> {
    if dims.len() < 2 {
        candle_core::bail!("compose needs (batch, components, ..), got {dims:?}");
    }
    Ok((dims[0], dims[1], dims[2..].iter().product()))
}

fn compose_sum<F: Real>(x: &[F], b: usize, n: usize, m: usize) -> Vec<F> {
    let mut out = vec![F::zero(); b * m];
    for bi in 0..b {
        let dst = &mut out[bi * m..][..m];
        for ni in 0..n {
            let src = &x[(bi * n + ni) * m..][..m];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

impl CustomOp1 for Compose {
    fn name(&self) -> &'static str {
        "ddpae-compose"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = l.dims();
        let (b, n, m) = compose_split(dims)?;
        fn run<F: Real>(x: &[F], b: usize, n: usize, m: usize) -> Vec<F> {
            let mut out = compose_sum(x, b, n, m);
            out.iter_mut().for_each(|v| *v = num_traits::Float::min(num_traits::Float::max(*v, F::zero()), F::one()));
            out
        }
        let out = match s.dtype() {
            DType::F32 => CpuStorage::F32(run(cpu_slice::<f32>(s, l)?, b, n, m)),
            DType::F64 => CpuStorage::F64(run(cpu_slice::<f64>(s, l)?, b, n, m)),
            dt => candle_core::bail!("compose: unsupported dtype {dt:?}"),
        };
        let mut shape = vec![dims[0]];
        shape.extend_from_slice(&dims[2..]);
        Ok((out, Shape::from(shape)))
    }

    fn bwd(&self, x: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let (b, n, m) = compose_split(x.dims())?;
        fn run<F: Real>(x: &Tensor, grad: &Tensor, b: usize, n: usize, m: usize) -> candle_core::Result<Tensor> {
            let xv = to_vec::<F>(x)?;
            let gv = to_vec::<F>(grad)?;
            let sum = compose_sum(&xv, b, n, m);
            let mut out = vec![F::zero(); xv.len()];
            for bi in 0..b {
                let s = &sum[bi * m..][..m];
                let g = &gv[bi * m..][..m];
                for ni in 0..n {
                    let dst = &mut out[(bi * n + ni) * m..][..m];
                    for j in 0..m {
                        // gradient passes wherever the clamp is inactive
                        if s[j] >= F::zero() && s[j] <= F::one() {
                            dst[j] = g[j];
                        }
                    }
                }
            }
            Tensor::from_vec(out, x.shape(), x.device())
        }
        Ok(Some(match x.dtype() {
            DType::F32 => run::<f32>(x, grad, b, n, m)?,
            DType::F64 => run::<f64>(x, grad, b, n, m)?,
            dt => candle_core::bail!("compose: unsupported dtype {dt:?}"),
        }))
    }
}

/// `clamp(sum over axis 1, 0, 1)` for `(b, n, ..)` component stacks.
pub fn compose_sum_clamp(x: &Tensor) -> candle_core::Result<Tensor> {
    x.contiguous()?.apply_op1(Compose)
}

/// Summed binary cross-entropy `-sum y ln p + (1 - y) ln(1 - p)` with `p`
/// clamped to `[eps, 1 - eps]`; accumulated in 64-bit.
#[derive(Debug, Clone, Copy)]
struct Bce {
    eps: f64,
}

impl CustomOp2 for Bce {
    fn name(&self) -> &'static str {
        "ddpae-bce"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        if l1.dims() != l2.dims() {
            candle_core::bail!("bce shape mismatch: {:?} vs {:?}", l1.dims(), l2.dims());
        }
        fn run<F: Real>(p: &[F], y: &[F], eps: f64) -> f64 {
            let mut acc = 0.0f64;
            for (&p, &y) in p.iter().zip(y) {
                let p = WithDType::to_f64(p).clamp(eps, 1.0 - eps);
                let y = WithDType::to_f64(y);
                acc -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
            acc
        }
        let out = match (s1.dtype(), s2.dtype()) {
            (DType::F32, DType::F32) => CpuStorage::F32(vec![run(cpu_slice::<f32>(s1, l1)?, cpu_slice::<f32>(s2, l2)?, self.eps) as f32]),
            (DType::F64, DType::F64) => CpuStorage::F64(vec![run(cpu_slice::<f64>(s1, l1)?, cpu_slice::<f64>(s2, l2)?, self.eps)]),
            (a, b) => candle_core::bail!("bce: unsupported dtypes {a:?}, {b:?}"),
        };
        Ok((out, Shape::from(())))
    }

    fn bwd(&self, p: &Tensor, y: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let need_y = y.track_op() || y.is_variable();
        fn run<F: Real>(p: &Tensor, y: &Tensor, grad: &Tensor, eps: f64, need_y: bool) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
            let g = grad.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let pv = to_vec::<F>(p)?;
            let yv = to_vec::<F>(y)?;
            let mut gp = Vec::with_capacity(pv.len());
            let mut gy = Vec::with_capacity(if need_y { pv.len() } else { 0 });
            for (&p, &y) in pv.iter().zip(&yv) {
                let p = WithDType::to_f64(p);
                let y = WithDType::to_f64(y);
                let pc = p.clamp(eps, 1.0 - eps);
                let d = if p > eps && p < 1.0 - eps {
                    -(y / pc - (1.0 - y) / (1.0 - pc))
                } else {
                    0.0
                };
                gp.push(F::from_f64(g * d));
                if need_y {
                    gy.push(F::from_f64(-g * (pc.ln() - (1.0 - pc).ln())));
                }
            }
            let gp = Tensor::from_vec(gp, p.shape(), p.device())?;
            let gy = need_y.then(|| Tensor::from_vec(gy, y.shape(), y.device())).transpose()?;
            Ok((Some(gp), gy))
        }
        match p.dtype() {
            DType::F32 => run::<f32>(p, y, grad, self.eps, need_y),
            DType::F64 => run::<f64>(p, y, grad, self.eps, need_y),
            dt => candle_core::bail!("bce: unsupported dtype {dt:?}"),
        }
    }
}

/// Scalar tensor holding the summed clamped binary cross-entropy.
pub fn bce_sum(predicted: &Tensor, target: &Tensor, eps: f64) -> candle_core::Result<Tensor> {
    predicted.contiguous()?.apply_op2(&target.contiguous()?, Bce { eps })
}
