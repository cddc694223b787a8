//! Dense kernels. Everything is row-major; matrix products go through
//! [`Real::gemm`] so an accelerated backend only needs to replace that.

use std::fmt::Debug;

use num_traits::Float;

pub trait Real: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    /// `c = alpha * op(a) * op(b) + beta * c` with row and column strides.
    ///
    /// # Safety
    /// The strided extents must lie inside the buffers behind the pointers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f32(x: f32) -> Self;
    fn to_f32(self) -> f32;
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f32(x: f32) -> f32 {
        x
    }

    fn to_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f32(x: f32) -> f64 {
        x as f64
    }

    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// `c (m x n) = op(a) (m x k) * op(b) (k x n) + beta * c`. With `ta`, `a` is
/// stored k x m; with `tb`, `b` is stored n x k.
#[allow(clippy::too_many_arguments)]
pub fn matmul<F: Real>(a: &[F], ta: bool, b: &[F], tb: bool, c: &mut [F], m: usize, k: usize, n: usize, beta: F) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every strided access.
    unsafe {
        F::gemm_raw(m, k, n, F::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Add `bias` to every row of `x`.
pub fn add_bias<F: Real>(x: &mut [F], bias: &[F]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = *v + *b;
        }
    }
}

/// Accumulate column sums of `x` into `out`.
pub fn sum_rows<F: Real>(x: &[F], out: &mut [F]) {
    for row in x.chunks_exact(out.len()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o = *o + *v;
        }
    }
}

pub const LN_EPS: f32 = 1e-5;

/// Layer norm over rows of width `gain.len()`. Writes the normalized input
/// to `xhat` and the reciprocal deviations to `rstd`.
pub fn layer_norm<F: Real>(x: &[F], gain: &[F], bias: &[F], out: &mut [F], xhat: &mut [F], rstd: &mut [F]) {
    let d = gain.len();
    let inv_d = F::one() / F::from(d).unwrap();
    let eps = F::from_f32(LN_EPS);
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        let xh = &mut xhat[r * d..(r + 1) * d];
        let o = &mut out[r * d..(r + 1) * d];
        for j in 0..d {
            xh[j] = (row[j] - mean) * rs;
            o[j] = xh[j] * gain[j] + bias[j];
        }
    }
}

/// Backward of [`layer_norm`]: accumulates parameter gradients and adds the
/// input gradient to `dx`.
pub fn layer_norm_backward<F: Real>(
    dout: &[F],
    xhat: &[F],
    rstd: &[F],
    gain: &[F],
    dgain: &mut [F],
    dbias: &mut [F],
    dx: &mut [F],
) {
    let d = gain.len();
    let inv_d = F::one() / F::from(d).unwrap();
    let mut dxh = vec![F::zero(); d];
    for r in 0..rstd.len() {
        let go = &dout[r * d..(r + 1) * d];
        let xh = &xhat[r * d..(r + 1) * d];
        let mut mean_dxh = F::zero();
        let mut mean_dxh_xh = F::zero();
        for j in 0..d {
            dgain[j] = dgain[j] + go[j] * xh[j];
            dbias[j] = dbias[j] + go[j];
            dxh[j] = go[j] * gain[j];
            mean_dxh = mean_dxh + dxh[j];
            mean_dxh_xh = mean_dxh_xh + dxh[j] * xh[j];
        }
        mean_dxh = mean_dxh * inv_d;
        mean_dxh_xh = mean_dxh_xh * inv_d;
        let rs = rstd[r];
        let out = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            out[j] = out[j] + rs * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<F: Real>(x: F) -> F {
    let c = F::from(GELU_C).unwrap();
    let a = F::from(GELU_A).unwrap();
    let half = F::from(0.5).unwrap();
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::from(GELU_C).unwrap();
    let a = F::from(GELU_A).unwrap();
    let half = F::from(0.5).unwrap();
    let three = F::from(3.0).unwrap();
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * a * x * x)
}

/// In-place softmax of one row.
pub fn softmax<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}
