//! Differentiable attention-window resampling.
//!
//! A pose `(s, tx, ty)` selects the window of half-width `1/s` centered at
//! `(tx, ty)` in normalized frame coordinates `[-1, 1]^2`. Canonical patch
//! coordinates `u in [-1, 1]^2` map to frame coordinates `v = u / s + t`.
//! Frame pixel `i` of an `n`-pixel axis has its center at `(2i + 1) / n - 1`.
//! Patch pixel `i` of a `c`-pixel axis sits at `2(i + 1) / (c + 1) - 1`, so
//! the zero padding lands exactly on `u = ±1` and a placed patch fades to
//! zero continuously at the window edge. Sampling is bilinear with zeros
//! outside the source grid.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp2, DType, Layout, Shape, Tensor};

use super::real::{cpu_slice, to_vec, Real};

/// Normalized coordinate of pixel center `i` on an axis of `n` pixels.
#[inline]
pub fn pixel_center<F: Real>(i: usize, n: usize) -> F {
    F::from_f64((2 * i + 1) as f64 / n as f64 - 1.0)
}

/// Continuous pixel index of normalized coordinate `v` on an axis of `n` pixels.
#[inline]
pub fn to_pixel<F: Real>(v: F, n: usize) -> F {
    let n = F::from_f64(n as f64);
    ((v + F::one()) * n - F::one()) * F::from_f64(0.5)
}

/// Canonical coordinate of patch pixel `i` on an axis of `c` pixels.
#[inline]
pub fn patch_center<F: Real>(i: usize, c: usize) -> F {
    F::from_f64(2.0 * (i + 1) as f64 / (c + 1) as f64 - 1.0)
}

/// Continuous patch pixel index of canonical coordinate `u`.
#[inline]
pub fn to_patch_pixel<F: Real>(u: F, c: usize) -> F {
    (u + F::one()) * F::from_f64((c + 1) as f64 / 2.0) - F::one()
}

/// Bilinear sample of a row-major `h x w` image at continuous pixel
/// coordinates `(px, py)`; returns the value and its partials in px and py.
#[inline]
pub fn bilinear<F: Real>(img: &[F], h: usize, w: usize, px: F, py: F) -> (F, F, F) {
    let x0f = px.floor();
    let y0f = py.floor();
    let fx = px - x0f;
    let fy = py - y0f;
    let x0 = x0f.to_f64() as i64;
    let y0 = y0f.to_f64() as i64;
    let at = |x: i64, y: i64| -> F {
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            img[y as usize * w + x as usize]
        } else {
            F::zero()
        }
    };
    let (i00, i10, i01, i11) = (at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1));
    let one = F::one();
    let v = (one - fy) * ((one - fx) * i00 + fx * i10) + fy * ((one - fx) * i01 + fx * i11);
    let dx = (one - fy) * (i10 - i00) + fy * (i11 - i01);
    let dy = (one - fx) * (i01 - i00) + fx * (i11 - i10);
    (v, dx, dy)
}

/// Scatter `g` into the four bilinear neighbours of `(px, py)`.
#[inline]
fn bilinear_scatter<F: Real>(grad: &mut [F], h: usize, w: usize, px: F, py: F, g: F) {
    let x0f = px.floor();
    let y0f = py.floor();
    let fx = px - x0f;
    let fy = py - y0f;
    let x0 = x0f.to_f64() as i64;
    let y0 = y0f.to_f64() as i64;
    let one = F::one();
    for (dx, dy, wt) in [
        (0, 0, (one - fx) * (one - fy)),
        (1, 0, fx * (one - fy)),
        (0, 1, (one - fx) * fy),
        (1, 1, fx * fy),
    ] {
        let (x, y) = (x0 + dx, y0 + dy);
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            grad[y as usize * w + x as usize] += g * wt;
        }
    }
}

/// Crop: frames `(b, l, h, w)`, poses `(b, n, l, 3)` -> patches `(b, n, l, c, c)`.
#[derive(Debug, Clone, Copy)]
struct CropOp {
    patch: usize,
}

#[derive(Debug, Clone, Copy)]
struct CropDims {
    b: usize,
    n: usize,
    l: usize,
    h: usize,
    w: usize,
    c: usize,
}

impl CropOp {
    fn dims(&self, f: &[usize], p: &[usize]) -> candle_core::Result<CropDims> {
        if f.len() != 4 || p.len() != 4 || p[0] != f[0] || p[2] != f[1] || p[3] != 3 {
            candle_core::bail!("crop shape mismatch: frames {f:?}, poses {p:?}");
        }
        Ok(CropDims {
            b: f[0],
            n: p[1],
            l: f[1],
            h: f[2],
            w: f[3],
            c: self.patch,
        })
    }
}

fn crop_fwd<F: Real>(d: &CropDims, frames: &[F], poses: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); d.b * d.n * d.l * d.c * d.c];
    let (hw, cc) = (d.h * d.w, d.c * d.c);
    for bi in 0..d.b {
        for ni in 0..d.n {
            for li in 0..d.l {
                let img = &frames[(bi * d.l + li) * hw..][..hw];
                let idx = (bi * d.n + ni) * d.l + li;
                let pose = &poses[idx * 3..idx * 3 + 3];
                let (s, tx, ty) = (pose[0], pose[1], pose[2]);
                let dst = &mut out[idx * cc..][..cc];
                for i in 0..d.c {
                    let py = to_pixel(patch_center::<F>(i, d.c) / s + ty, d.h);
                    for j in 0..d.c {
                        let px = to_pixel(patch_center::<F>(j, d.c) / s + tx, d.w);
                        dst[i * d.c + j] = bilinear(img, d.h, d.w, px, py).0;
                    }
                }
            }
        }
    }
    out
}

fn crop_bwd<F: Real>(d: &CropDims, frames: &[F], poses: &[F], grad: &[F]) -> (Vec<F>, Vec<F>) {
    let mut gf = vec![F::zero(); frames.len()];
    let mut gp = vec![F::zero(); poses.len()];
    let (hw, cc) = (d.h * d.w, d.c * d.c);
    let half_w = F::from_f64(d.w as f64 / 2.0);
    let half_h = F::from_f64(d.h as f64 / 2.0);
    for bi in 0..d.b {
        for ni in 0..d.n {
            for li in 0..d.l {
                let fo = (bi * d.l + li) * hw;
                let idx = (bi * d.n + ni) * d.l + li;
                let (s, tx, ty) = (poses[idx * 3], poses[idx * 3 + 1], poses[idx * 3 + 2]);
                let g_out = &grad[idx * cc..][..cc];
                let (mut gs, mut gtx, mut gty) = (F::zero(), F::zero(), F::zero());
                for i in 0..d.c {
                    let uy = patch_center::<F>(i, d.c);
                    let py = to_pixel(uy / s + ty, d.h);
                    for j in 0..d.c {
                        let g = g_out[i * d.c + j];
                        if g == F::zero() {
                            continue;
                        }
                        let ux = patch_center::<F>(j, d.c);
                        let px = to_pixel(ux / s + tx, d.w);
                        let (_, dpx, dpy) = bilinear(&frames[fo..fo + hw], d.h, d.w, px, py);
                        bilinear_scatter(&mut gf[fo..fo + hw], d.h, d.w, px, py, g);
                        let dvx = g * dpx * half_w;
                        let dvy = g * dpy * half_h;
                        gtx = gtx + dvx;
                        gty = gty + dvy;
                        gs = gs - (dvx * ux + dvy * uy) / (s * s);
                    }
                }
                gp[idx * 3] += gs;
                gp[idx * 3 + 1] += gtx;
                gp[idx * 3 + 2] += gty;
            }
        }
    }
    (gf, gp)
}

impl CustomOp2 for CropOp {
    fn name(&self) -> &'static str {
        "ddpae-crop"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = self.dims(l1.dims(), l2.dims())?;
        let shape = Shape::from(vec![d.b, d.n, d.l, d.c, d.c]);
        let out = match s1.dtype() {
            DType::F32 => CpuStorage::F32(crop_fwd(&d, cpu_slice(s1, l1)?, cpu_slice(s2, l2)?)),
            DType::F64 => CpuStorage::F64(crop_fwd(&d, cpu_slice(s1, l1)?, cpu_slice(s2, l2)?)),
            dt => candle_core::bail!("crop: unsupported dtype {dt:?}"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, frames: &Tensor, poses: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let d = self.dims(frames.dims(), poses.dims())?;
        fn run<F: Real>(d: &CropDims, f: &Tensor, p: &Tensor, g: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
            let (gf, gp) = crop_bwd::<F>(d, &to_vec(f)?, &to_vec(p)?, &to_vec(g)?);
            Ok((
                Some(Tensor::from_vec(gf, f.shape(), f.device())?),
                Some(Tensor::from_vec(gp, p.shape(), p.device())?),
            ))
        }
        match frames.dtype() {
            DType::F32 => run::<f32>(&d, frames, poses, grad),
            DType::F64 => run::<f64>(&d, frames, poses, grad),
            dt => candle_core::bail!("crop: unsupported dtype {dt:?}"),
        }
    }
}

/// Place: patches `(p, c, c)`, poses `(p, l, 3)` -> frames `(p, l, h, h)`.
#[derive(Debug, Clone, Copy)]
struct PlaceOp {
    frame: usize,
}

#[derive(Debug, Clone, Copy)]
struct PlaceDims {
    p: usize,
    l: usize,
    c: usize,
    h: usize,
}

impl PlaceOp {
    fn dims(&self, patches: &[usize], poses: &[usize]) -> candle_core::Result<PlaceDims> {
        if patches.len() != 3 || poses.len() != 3 || patches[0] != poses[0] || patches[1] != patches[2] || poses[2] != 3 {
            candle_core::bail!("place shape mismatch: patches {patches:?}, poses {poses:?}");
        }
        Ok(PlaceDims {
            p: patches[0],
            l: poses[1],
            c: patches[1],
            h: self.frame,
        })
    }
}

/// Pixel index range on an `n`-pixel axis whose centers fall in `[lo, hi]`.
fn covered(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let first = ((lo + 1.0) * n as f64 / 2.0 - 0.5).ceil().max(0.0);
    let last = ((hi + 1.0) * n as f64 / 2.0 - 0.5).floor().min(n as f64 - 1.0);
    if !(first.is_finite() && last.is_finite()) || last < first {
        return 0..0;
    }
    first as usize..last as usize + 1
}

/// Visit every frame pixel inside the pose window: `(i, j, ux, uy, qx, qy)`
/// where `u` is the canonical coordinate and `q` the patch pixel coordinate.
#[inline]
fn for_window<F: Real>(d: &PlaceDims, s: F, tx: F, ty: F, mut f: impl FnMut(usize, usize, F, F, F, F)) {
    // one spare pixel each side; the exact test happens in F below
    let half = 1.0 / s.to_f64() + 2.0 / d.h as f64;
    let rows = covered(ty.to_f64() - half, ty.to_f64() + half, d.h);
    let cols = covered(tx.to_f64() - half, tx.to_f64() + half, d.h);
    let one = F::one();
    for i in rows {
        let uy = s * (pixel_center::<F>(i, d.h) - ty);
        if uy.abs() > one {
            continue;
        }
        let qy = to_patch_pixel(uy, d.c);
        for j in cols.clone() {
            let ux = s * (pixel_center::<F>(j, d.h) - tx);
            if ux.abs() > one {
                continue;
            }
            f(i, j, ux, uy, to_patch_pixel(ux, d.c), qy);
        }
    }
}

fn place_fwd<F: Real>(d: &PlaceDims, patches: &[F], poses: &[F]) -> Vec<F> {
    let (cc, hh) = (d.c * d.c, d.h * d.h);
    let mut out = vec![F::zero(); d.p * d.l * hh];
    for pi in 0..d.p {
        let patch = &patches[pi * cc..][..cc];
        for li in 0..d.l {
            let idx = pi * d.l + li;
            let (s, tx, ty) = (poses[idx * 3], poses[idx * 3 + 1], poses[idx * 3 + 2]);
            let dst = &mut out[idx * hh..][..hh];
            for_window(d, s, tx, ty, |i, j, _, _, qx, qy| {
                dst[i * d.h + j] = bilinear(patch, d.c, d.c, qx, qy).0;
            });
        }
    }
    out
}

fn place_bwd<F: Real>(d: &PlaceDims, patches: &[F], poses: &[F], grad: &[F]) -> (Vec<F>, Vec<F>) {
    let (cc, hh) = (d.c * d.c, d.h * d.h);
    let mut gpatch = vec![F::zero(); patches.len()];
    let mut gpose = vec![F::zero(); poses.len()];
    let half_c = F::from_f64((d.c + 1) as f64 / 2.0);
    for pi in 0..d.p {
        let patch = &patches[pi * cc..][..cc];
        for li in 0..d.l {
            let idx = pi * d.l + li;
            let (s, tx, ty) = (poses[idx * 3], poses[idx * 3 + 1], poses[idx * 3 + 2]);
            let g_out = &grad[idx * hh..][..hh];
            let gp_patch = &mut gpatch[pi * cc..][..cc];
            let (mut gs, mut gtx, mut gty) = (F::zero(), F::zero(), F::zero());
            for_window(d, s, tx, ty, |i, j, ux, uy, qx, qy| {
                let g = g_out[i * d.h + j];
                if g == F::zero() {
                    return;
                }
                let (_, dqx, dqy) = bilinear(patch, d.c, d.c, qx, qy);
                bilinear_scatter(gp_patch, d.c, d.c, qx, qy, g);
                let dux = g * dqx * half_c;
                let duy = g * dqy * half_c;
                // u = s (v - t): du/ds = u / s, du/dt = -s
                gs = gs + (dux * ux + duy * uy) / s;
                gtx = gtx - dux * s;
                gty = gty - duy * s;
            });
            gpose[idx * 3] += gs;
            gpose[idx * 3 + 1] += gtx;
            gpose[idx * 3 + 2] += gty;
        }
    }
    (gpatch, gpose)
}

impl CustomOp2 for PlaceOp {
    fn name(&self) -> &'static str {
        "ddpae-place"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let d = self.dims(l1.dims(), l2.dims())?;
        let shape = Shape::from(vec![d.p, d.l, d.h, d.h]);
        let out = match s1.dtype() {
            DType::F32 => CpuStorage::F32(place_fwd(&d, cpu_slice(s1, l1)?, cpu_slice(s2, l2)?)),
            DType::F64 => CpuStorage::F64(place_fwd(&d, cpu_slice(s1, l1)?, cpu_slice(s2, l2)?)),
            dt => candle_core::bail!("place: unsupported dtype {dt:?}"),
        };
        Ok((out, shape))
    }

    fn bwd(&self, patches: &Tensor, poses: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let d = self.dims(patches.dims(), poses.dims())?;
        fn run<F: Real>(d: &PlaceDims, pa: &Tensor, po: &Tensor, g: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
            let (gpa, gpo) = place_bwd::<F>(d, &to_vec(pa)?, &to_vec(po)?, &to_vec(g)?);
            Ok((
                Some(Tensor::from_vec(gpa, pa.shape(), pa.device())?),
                Some(Tensor::from_vec(gpo, po.shape(), po.device())?),
            ))
        }
        match patches.dtype() {
            DType::F32 => run::<f32>(&d, patches, poses, grad),
            DType::F64 => run::<f64>(&d, patches, poses, grad),
            dt => candle_core::bail!("place: unsupported dtype {dt:?}"),
        }
    }
}

/// Extract `patch x patch` canonical views from `frames (b, l, h, w)` for
/// every pose in `poses (b, n, l, 3)`; result is `(b, n, l, patch, patch)`.
pub fn crop(frames: &Tensor, poses: &Tensor, patch: usize) -> candle_core::Result<Tensor> {
    frames
        .contiguous()?
        .apply_op2(&poses.contiguous()?, CropOp { patch })
}

/// Warp each patch of `patches (p, c, c)` into a `frame x frame` canvas at
/// every pose of `poses (p, l, 3)`; result is `(p, l, frame, frame)`.
/// Pixels whose canonical coordinate falls outside `[-1, 1]^2` are zero.
pub fn place(patches: &Tensor, poses: &Tensor, frame: usize) -> candle_core::Result<Tensor> {
    patches
        .contiguous()?
        .apply_op2(&poses.contiguous()?, PlaceOp { frame })
}

#[cfg(test)]
mod tests {
    use candle_core::Device;

    use super::*;

    #[test]
    fn center_of_two_by_two() {
        let img = [0.0f64, 1.0, 2.0, 3.0];
        let p = to_pixel(0.0f64, 2);
        assert_eq!(bilinear(&img, 2, 2, p, p).0, 1.5);
    }

    #[test]
    fn identity_window_on_constant_frame() {
        let frames = Tensor::full(0.37f64, (1, 1, 16, 16), &Device::Cpu).unwrap();
        let poses = Tensor::new(&[[[[1.0f64, 0.0, 0.0]]]], &Device::Cpu).unwrap();
        let patch = crop(&frames, &poses, 8).unwrap();
        let v = to_vec::<f64>(&patch).unwrap();
        assert!(v.iter().all(|&x| (x - 0.37).abs() < 1e-12));
    }

    #[test]
    fn placement_support_is_centered_half_window() {
        let patch = Tensor::ones((1, 32, 32), DType::F64, &Device::Cpu).unwrap();
        let poses = Tensor::new(&[[[2.0f64, 0.0, 0.0]]], &Device::Cpu).unwrap();
        let frame = to_vec::<f64>(&place(&patch, &poses, 64).unwrap()).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let inside = (16..48).contains(&x) && (16..48).contains(&y);
                let v = frame[y * 64 + x];
                if inside {
                    assert!(v > 0.0);
                } else {
                    assert_eq!(v, 0.0, "pixel ({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn zero_patch_places_nothing() {
        let patch = Tensor::zeros((2, 8, 8), DType::F32, &Device::Cpu).unwrap();
        let poses = Tensor::new(&[[[1.5f32, 0.1, -0.2]], [[3.0, 0.5, 0.5]]], &Device::Cpu).unwrap();
        let frame = to_vec::<f32>(&place(&patch, &poses, 16).unwrap()).unwrap();
        assert!(frame.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn covered_range_matches_brute_force() {
        for n in [8usize, 16, 64] {
            for (lo, hi) in [(-0.5, 0.5), (-1.3, -0.2), (0.91, 1.7), (0.2, 0.21), (-2.0, 2.0)] {
                let brute: Vec<usize> = (0..n)
                    .filter(|&i| {
                        let c: f64 = pixel_center(i, n);
                        c >= lo && c <= hi
                    })
                    .collect();
                let fast: Vec<usize> = covered(lo, hi, n).collect();
                assert_eq!(brute, fast, "n={n} [{lo}, {hi}]");
            }
        }
    }
}
