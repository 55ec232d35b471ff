//! 2-D convolution and transposed convolution as im2col + GEMM custom ops.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor};

use super::real::{cpu_slice, gemm, to_vec, Real};

/// Geometry of a plain convolution `x (b, cin, h, w) -> (b, cout, ho, wo)`.
#[derive(Debug, Clone, Copy)]
struct Geom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(batch: usize, cin: usize, h: usize, w: usize, cout: usize, k: usize, stride: usize, pad: usize) -> candle_core::Result<Self> {
        if h + 2 * pad < k || w + 2 * pad < k {
            candle_core::bail!("kernel {k} larger than padded input {h}x{w} (pad {pad})");
        }
        Ok(Self {
            batch,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.batch * self.ho * self.wo
    }

    /// Input offset read by column `(oy, ox)` through kernel tap `(ky, kx)`.
    #[inline]
    fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }
}

/// Unfold `x (b, cin, h, w)` into `(cin*k*k, b*ho*wo)`.
fn im2col<F: Real>(g: &Geom, x: &[F]) -> Vec<F> {
    let n = g.cols();
    let mut cols = vec![F::zero(); g.rows() * n];
    let hw = g.ho * g.wo;
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let out = &mut cols[row * n..(row + 1) * n];
                for b in 0..g.batch {
                    let plane = &x[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.ho {
                        for ox in 0..g.wo {
                            if let Some((y, xx)) = g.src(oy, ox, ky, kx) {
                                out[b * hw + oy * g.wo + ox] = plane[y * g.w + xx];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into `(b, cin, h, w)`.
fn col2im<F: Real>(g: &Geom, cols: &[F]) -> Vec<F> {
    let n = g.cols();
    let mut x = vec![F::zero(); g.batch * g.cin * g.h * g.w];
    let hw = g.ho * g.wo;
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for b in 0..g.batch {
                    let plane = &mut x[(b * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                    for oy in 0..g.ho {
                        for ox in 0..g.wo {
                            if let Some((y, xx)) = g.src(oy, ox, ky, kx) {
                                plane[y * g.w + xx] += src[b * hw + oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(b, c, hw)` -> `(c, b*hw)`.
fn to_channel_major<F: Real>(x: &[F], b: usize, c: usize, hw: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[ci * b * hw + bi * hw..][..hw].copy_from_slice(&x[(bi * c + ci) * hw..][..hw]);
        }
    }
    out
}

/// `(c, b*hw)` -> `(b, c, hw)`.
fn from_channel_major<F: Real>(x: &[F], b: usize, c: usize, hw: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            out[(bi * c + ci) * hw..][..hw].copy_from_slice(&x[ci * b * hw + bi * hw..][..hw]);
        }
    }
    out
}

fn conv_fwd<F: Real>(g: &Geom, x: &[F], w: &[F]) -> Vec<F> {
    let cols = im2col(g, x);
    let mut out = vec![F::zero(); g.cout * g.cols()];
    gemm(g.cout, g.cols(), g.rows(), &mut out, false, w, false, &cols, false);
    from_channel_major(&out, g.batch, g.cout, g.ho * g.wo)
}

/// Returns `(grad_x, grad_w)` of a plain convolution.
fn conv_bwd<F: Real>(g: &Geom, x: &[F], w: &[F], grad: &[F], need_x: bool) -> (Option<Vec<F>>, Vec<F>) {
    let gm = to_channel_major(grad, g.batch, g.cout, g.ho * g.wo);
    let cols = im2col(g, x);
    let mut gw = vec![F::zero(); g.cout * g.rows()];
    gemm(g.cout, g.rows(), g.cols(), &mut gw, false, &gm, false, &cols, true);
    let gx = need_x.then(|| {
        let mut gcols = vec![F::zero(); g.rows() * g.cols()];
        gemm(g.rows(), g.cols(), g.cout, &mut gcols, false, w, true, &gm, false);
        col2im(g, &gcols)
    });
    (gx, gw)
}

/// Transposed convolution `x (b, cin, h, w)`, weight `(cin, cout, k, k)`.
/// `g` describes the adjoint plain convolution `(b, cout, ho, wo) -> (b, cin, h, w)`.
fn convt_fwd<F: Real>(g: &Geom, x: &[F], w: &[F]) -> Vec<F> {
    // here g.cin is the transposed op's output channel count
    let xm = to_channel_major(x, g.batch, g.cout, g.ho * g.wo);
    let mut cols = vec![F::zero(); g.rows() * g.cols()];
    gemm(g.rows(), g.cols(), g.cout, &mut cols, false, w, true, &xm, false);
    col2im(g, &cols)
}

fn convt_bwd<F: Real>(g: &Geom, x: &[F], w: &[F], grad: &[F], need_x: bool) -> (Option<Vec<F>>, Vec<F>) {
    let xm = to_channel_major(x, g.batch, g.cout, g.ho * g.wo);
    let gcols = im2col(g, grad);
    let mut gw = vec![F::zero(); g.cout * g.rows()];
    gemm(g.cout, g.rows(), g.cols(), &mut gw, false, &xm, false, &gcols, true);
    let gx = need_x.then(|| {
        let mut gxm = vec![F::zero(); g.cout * g.cols()];
        gemm(g.cout, g.cols(), g.rows(), &mut gxm, false, w, false, &gcols, false);
        from_channel_major(&gxm, g.batch, g.cout, g.ho * g.wo)
    });
    (gx, gw)
}

#[derive(Debug, Clone, Copy)]
struct Conv2dOp {
    stride: usize,
    pad: usize,
}

impl Conv2dOp {
    fn geom(&self, x: &[usize], w: &[usize]) -> candle_core::Result<Geom> {
        if x.len() != 4 || w.len() != 4 || x[1] != w[1] || w[2] != w[3] {
            candle_core::bail!("conv2d shape mismatch: input {x:?}, weight {w:?}");
        }
        Geom::new(x[0], x[1], x[2], x[3], w[0], w[2], self.stride, self.pad)
    }
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "ddpae-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.geom(l1.dims(), l2.dims())?;
        let shape = Shape::from((g.batch, g.cout, g.ho, g.wo));
        let out = match s1.dtype() {
            DType::F32 => CpuStorage::F32(conv_fwd(&g, cpu_slice(s1, l1)?, cpu_slice(s2, l2)?)),
            DType::F64 => CpuStorage::F64(conv_fwd(&g, cpu_slice(s1, l1)?, cpu_slice(s2, l2)?)),
            dt => candle_core::bail!("conv2d: unsupported dtype {dt:?}"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let g = self.geom(x.dims(), w.dims())?;
        let need_x = x.track_op() || x.is_variable();
        fn run<F: Real>(g: &Geom, x: &Tensor, w: &Tensor, grad: &Tensor, need_x: bool) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
            let (gx, gw) = conv_bwd::<F>(g, &to_vec(x)?, &to_vec(w)?, &to_vec(grad)?, need_x);
            let gx = gx.map(|v| Tensor::from_vec(v, x.shape(), x.device())).transpose()?;
            Ok((gx, Some(Tensor::from_vec(gw, w.shape(), w.device())?)))
        }
        match x.dtype() {
            DType::F32 => run::<f32>(&g, x, w, grad, need_x),
            DType::F64 => run::<f64>(&g, x, w, grad, need_x),
            dt => candle_core::bail!("conv2d: unsupported dtype {dt:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvTranspose2dOp {
    stride: usize,
    pad: usize,
}

impl ConvTranspose2dOp {
    /// Adjoint plain-convolution geometry for input `x` and weight `w`.
    fn geom(&self, x: &[usize], w: &[usize]) -> candle_core::Result<Geom> {
        if x.len() != 4 || w.len() != 4 || x[1] != w[0] || w[2] != w[3] {
            candle_core::bail!("conv_transpose2d shape mismatch: input {x:?}, weight {w:?}");
        }
        let (k, s, p) = (w[2], self.stride, self.pad);
        let out = |n: usize| ((n - 1) * s + k).checked_sub(2 * p);
        let (Some(ho), Some(wo)) = (out(x[2]), out(x[3])) else {
            candle_core::bail!("conv_transpose2d: padding {p} too large");
        };
        let g = Geom::new(x[0], w[1], ho, wo, x[1], k, s, p)?;
        debug_assert_eq!((g.ho, g.wo), (x[2], x[3]));
        Ok(g)
    }
}

impl CustomOp2 for ConvTranspose2dOp {
    fn name(&self) -> &'static str {
        "ddpae-conv-transpose2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = self.geom(l1.dims(), l2.dims())?;
        let shape = Shape::from((g.batch, g.cin, g.h, g.w));
        let out = match s1.dtype() {
            DType::F32 => CpuStorage::F32(convt_fwd(&g, cpu_slice(s1, l1)?, cpu_slice(s2, l2)?)),
            DType::F64 => CpuStorage::F64(convt_fwd(&g, cpu_slice(s1, l1)?, cpu_slice(s2, l2)?)),
            dt => candle_core::bail!("conv_transpose2d: unsupported dtype {dt:?}"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let g = self.geom(x.dims(), w.dims())?;
        let need_x = x.track_op() || x.is_variable();
        fn run<F: Real>(g: &Geom, x: &Tensor, w: &Tensor, grad: &Tensor, need_x: bool) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
            let (gx, gw) = convt_bwd::<F>(g, &to_vec(x)?, &to_vec(w)?, &to_vec(grad)?, need_x);
            let gx = gx.map(|v| Tensor::from_vec(v, x.shape(), x.device())).transpose()?;
            Ok((gx, Some(Tensor::from_vec(gw, w.shape(), w.device())?)))
        }
        match x.dtype() {
            DType::F32 => run::<f32>(&g, x, w, grad, need_x),
            DType::F64 => run::<f64>(&g, x, w, grad, need_x),
            dt => candle_core::bail!("conv_transpose2d: unsupported dtype {dt:?}"),
        }
    }
}

/// Cross-correlation of `x (b, cin, h, w)` with `weight (cout, cin, k, k)`.
pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> candle_core::Result<Tensor> {
    x.contiguous()?
        .apply_op2(&weight.contiguous()?, Conv2dOp { stride, pad })
}

/// Transposed convolution of `x (b, cin, h, w)` with `weight (cin, cout, k, k)`;
/// output side is `(h - 1) * stride - 2 * pad + k`.
pub fn conv_transpose2d(x: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> candle_core::Result<Tensor> {
    x.contiguous()?
        .apply_op2(&weight.contiguous()?, ConvTranspose2dOp { stride, pad })
}
