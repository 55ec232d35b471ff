use candle_core::{CpuStorage, Layout, Tensor, WithDType};


/// Floating-point element types the custom kernels are instantiated for.
pub trait Real: WithDType + num_traits::Float {}

impl Real for f32 {}
impl Real for f64 {}

/// `dst (m x n) [+]= op(a) (m x k) * op(b) (k x n)`, row-major buffers.
///
/// `a_t` means `a` is stored as its transpose (`k x m`), likewise `b_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<F: Real>(
    m: usize,
    n: usize,
    k: usize,
    dst: &mut [F],
    accumulate: bool,
    a: &[F],
    a_t: bool,
    b: &[F],
    b_t: bool,
) {
    assert!(dst.len() >= m * n && a.len() >= m * k && b.len() >= k * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            dst[..m * n].iter_mut().for_each(|v| *v = F::zero());
        }
        return;
    }
    let (a_rs, a_cs) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (b_rs, b_cs) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let alpha = if accumulate { F::one() } else { F::zero() };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements whose presence is asserted on entry.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            1,
            n as isize,
            accumulate,
            a.as_ptr(),
            a_cs,
            a_rs,
            b.as_ptr(),
            b_cs,
            b_rs,
            alpha,
            F::one(),
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

/// Contiguous slice view of a custom-op input.
pub(crate) fn cpu_slice<'a, F: Real>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [F]> {
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("custom op input must be contiguous".into()))?;
    let data = s.as_slice::<F>()?;
    Ok(&data[start..end])
}

pub(crate) fn to_vec<F: Real>(t: &Tensor) -> candle_core::Result<Vec<F>> {
    t.flatten_all()?.to_vec1::<F>()
}
