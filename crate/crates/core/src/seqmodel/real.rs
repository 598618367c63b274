use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the transformer is generic over: `f32` for training and
/// inference, `f64` for gradient checking.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `y += a * x`
#[inline]
pub fn axpy<F: Real>(y: &mut [F], a: F, x: &[F]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent accumulators so the loop vectorises
/// without reassociating a single running sum.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y[rows x out] = x[rows x in] · w[in x out] + b`
pub fn linear<F: Real>(x: &[F], w: &[F], b: &[F], rows: usize, n_in: usize, n_out: usize, y: &mut [F]) {
    for t in 0..rows {
        let yr = &mut y[t * n_out..(t + 1) * n_out];
        yr.copy_from_slice(b);
        let xr = &x[t * n_in..(t + 1) * n_in];
        for (i, &xi) in xr.iter().enumerate() {
            axpy(yr, xi, &w[i * n_out..(i + 1) * n_out]);
        }
    }
}

/// Backward of [`linear`]: accumulates into `dw`/`db`, overwrites `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<F: Real>(
    x: &[F],
    dy: &[F],
    w: &[F],
    rows: usize,
    n_in: usize,
    n_out: usize,
    dx: &mut [F],
    dw: &mut [F],
    db: &mut [F],
) {
    for t in 0..rows {
        let dyr = &dy[t * n_out..(t + 1) * n_out];
        for (g, &d) in db.iter_mut().zip(dyr) {
            *g += d;
        }
        let xr = &x[t * n_in..(t + 1) * n_in];
        let dxr = &mut dx[t * n_in..(t + 1) * n_in];
        for i in 0..n_in {
            let wr = &w[i * n_out..(i + 1) * n_out];
            dxr[i] = dot(dyr, wr);
            axpy(&mut dw[i * n_out..(i + 1) * n_out], xr[i], dyr);
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm; returns `(y, xhat, rstd)`.
pub fn layer_norm<F: Real>(x: &[F], gamma: &[F], beta: &[F], d: usize, y: &mut [F], xhat: &mut [F], rstd: &mut [F]) {
    let inv_d = F::lit(1.0 / d as f64);
    let eps = F::lit(LN_EPS);
    for (t, r) in rstd.iter_mut().enumerate() {
        let xr = &x[t * d..(t + 1) * d];
        let mean = xr.iter().copied().sum::<F>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let rs = (var + eps).sqrt().recip();
        *r = rs;
        let hr = &mut xhat[t * d..(t + 1) * d];
        let yr = &mut y[t * d..(t + 1) * d];
        for i in 0..d {
            hr[i] = (xr[i] - mean) * rs;
            yr[i] = hr[i] * gamma[i] + beta[i];
        }
    }
}

/// Backward of [`layer_norm`]; accumulates parameter grads, adds into `dx`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<F: Real>(
    dy: &[F],
    xhat: &[F],
    rstd: &[F],
    gamma: &[F],
    d: usize,
    dx: &mut [F],
    dgamma: &mut [F],
    dbeta: &mut [F],
) {
    let inv_d = F::lit(1.0 / d as f64);
    let mut dxhat = vec![F::zero(); d];
    for (t, &rs) in rstd.iter().enumerate() {
        let dyr = &dy[t * d..(t + 1) * d];
        let hr = &xhat[t * d..(t + 1) * d];
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        for i in 0..d {
            dgamma[i] += dyr[i] * hr[i];
            dbeta[i] += dyr[i];
            dxhat[i] = dyr[i] * gamma[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * hr[i];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let dxr = &mut dx[t * d..(t + 1) * d];
        for i in 0..d {
            dxr[i] += rs * (dxhat[i] - mean_dxhat - hr[i] * mean_dxhat_xhat);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<F: Real>(x: F) -> F {
    let inner = F::lit(GELU_C) * (x + F::lit(GELU_A) * x * x * x);
    F::lit(0.5) * x * (F::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::lit(GELU_C);
    let a = F::lit(GELU_A);
    let inner = c * (x + a * x * x * x);
    let th = inner.tanh();
    let sech2 = F::one() - th * th;
    F::lit(0.5) * (F::one() + th) + F::lit(0.5) * x * sech2 * c * (F::one() + F::lit(3.0) * a * x * x)
}

/// In-place softmax; returns the log of the normaliser (log-sum-exp).
pub fn softmax_in_place<F: Real>(v: &mut [F]) -> F {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = sum.recip();
    for x in v.iter_mut() {
        *x *= inv;
    }
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_difference_quotient() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut v = vec![1.0f32, 2.0, -3.0, 0.5];
        softmax_in_place(&mut v);
        assert!((v.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
