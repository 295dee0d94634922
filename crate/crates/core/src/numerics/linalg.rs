use super::Tensor;
use crate::error::{Error, Result};

/// Column block width for the GEMM loops; keeps the active panel of `b`
/// cache-resident when `n` (or `k` for the transposed form) is large.
const BLOCK: usize = 256;

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for j0 in (0..n).step_by(BLOCK) {
        let j1 = (j0 + BLOCK).min(n);
        for i in 0..m {
            let c_row = &mut c[i * n + j0..i * n + j1];
            let a_row = &a[i * k..(i + 1) * k];
            for (t, &av) in a_row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let b_row = &b[t * n + j0..t * n + j1];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += av * bv;
                }
            }
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for t0 in (0..k).step_by(BLOCK) {
        let t1 = (t0 + BLOCK).min(k);
        for i in 0..m {
            let a_row = &a[i * k + t0..i * k + t1];
            for j in 0..n {
                c[i * n + j] += dot(a_row, &b[j * k + t0..j * k + t1]);
            }
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for j0 in (0..n).step_by(BLOCK) {
        let j1 = (j0 + BLOCK).min(n);
        for i in 0..m {
            let c_row = &mut c[i * n + j0..i * n + j1];
            for t in 0..k {
                let av = a[t * m + i];
                if av == 0.0 {
                    continue;
                }
                let b_row = &b[t * n + j0..t * n + j1];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += av * bv;
                }
            }
        }
    }
}

/// Matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::shape("matmul", sa, sb));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = Tensor::zeros(&[m, n]);
    gemm_acc(a.data(), b.data(), out.data_mut(), m, k, n);
    Ok(out)
}
