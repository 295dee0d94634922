//! 2-D cross-correlation with zero padding, lowered to im2col + GEMM.

use super::linalg::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::Tensor;
use crate::error::{Error, Result};

/// Output spatial size for one axis: `(size + 2·pad − k) / stride + 1`.
pub fn conv_out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || k == 0 || k > padded {
        return None;
    }
    Some((padded - k) / stride + 1)
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || w.len() != 4 || x[1] != w[1] {
            return Err(Error::shape("conv2d", x, w));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let oh =
            conv_out_dim(x[2], w[2], stride, pad).ok_or_else(|| Error::shape("conv2d", x, w))?;
        let ow =
            conv_out_dim(x[3], w[3], stride, pad).ok_or_else(|| Error::shape("conv2d", x, w))?;
        Ok(Geometry {
            n: x[0],
            c: x[1],
            h: x[2],
            w: x[3],
            f: w[0],
            kh: w[2],
            kw: w[3],
            oh,
            ow,
            stride,
            pad,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `oj` whose input column `oj·stride + kj − pad` lies
    /// inside the image.
    fn valid_cols(&self, kj: usize) -> std::ops::Range<usize> {
        let lo = self.pad.saturating_sub(kj).div_ceil(self.stride);
        let hi = if self.w + self.pad > kj {
            ((self.w + self.pad - kj - 1) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        lo.min(hi)..hi
    }

    /// Unfolds one sample `[C×H×W]` into columns `offset..offset + oh·ow` of
    /// `cols[C·kh·kw × ld]`.
    fn im2col(&self, x: &[f64], cols: &mut [f64], ld: usize, offset: usize) {
        let p = self.positions();
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * ld + offset..row * ld + offset + p];
                    let valid = self.valid_cols(kj);
                    for oi in 0..self.oh {
                        let out = &mut dst[oi * self.ow..(oi + 1) * self.ow];
                        let ii = (oi * self.stride + ki) as isize - self.pad as isize;
                        if ii < 0 || ii as usize >= self.h {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &x[(ci * self.h + ii as usize) * self.w..][..self.w];
                        out[..valid.start].fill(0.0);
                        out[valid.end..].fill(0.0);
                        for oj in valid.clone() {
                            out[oj] = src[oj * self.stride + kj - self.pad];
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds columns `offset..offset + oh·ow` of `cols` into one
    /// sample's input gradient.
    fn col2im(&self, cols: &[f64], ld: usize, offset: usize, dx: &mut [f64]) {
        let p = self.positions();
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * ld + offset..row * ld + offset + p];
                    let valid = self.valid_cols(kj);
                    for oi in 0..self.oh {
                        let ii = (oi * self.stride + ki) as isize - self.pad as isize;
                        if ii < 0 || ii as usize >= self.h {
                            continue;
                        }
                        let dst = &mut dx[(ci * self.h + ii as usize) * self.w..][..self.w];
                        let s_row = &src[oi * self.ow..(oi + 1) * self.ow];
                        for oj in valid.clone() {
                            dst[oj * self.stride + kj - self.pad] += s_row[oj];
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass: `x[N×C×H×W]`, `w[F×C×kh×kw]`, `b[F]` → `[N×F×H'×W']`.
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    conv2d_forward_cols(x, w, b, stride, pad).map(|(y, _)| y)
}

/// Forward pass that also hands back the unfolded input so the backward pass
/// can skip a second im2col.
pub(crate) fn conv2d_forward_cols(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Vec<f64>)> {
    let g = Geometry::new(x.shape(), w.shape(), stride, pad)?;
    if b.shape() != [g.f] {
        return Err(Error::shape("conv2d bias", b.shape(), &[g.f]));
    }
    let (patch, p) = (g.patch(), g.positions());
    let ld = g.n * p;
    let cols = g.unfold_batch(x.data());
    // out_fp[F × N·P] = W · cols
    let mut out_fp = vec![0.0; g.f * ld];
    gemm_acc(w.data(), &cols, &mut out_fp, g.f, patch, ld);
    let mut out = Tensor::zeros(&[g.n, g.f, g.oh, g.ow]);
    let od = out.data_mut();
    for fi in 0..g.f {
        let bias = b.data()[fi];
        for s in 0..g.n {
            let src = &out_fp[fi * ld + s * p..fi * ld + (s + 1) * p];
            let dst = &mut od[(s * g.f + fi) * p..(s * g.f + fi + 1) * p];
            for (d, v) in dst.iter_mut().zip(src) {
                *d = v + bias;
            }
        }
    }
    Ok((out, cols))
}

impl Geometry {
    fn unfold_batch(&self, x: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let ld = self.n * p;
        let in_len = self.c * self.h * self.w;
        let mut cols = vec![0.0; self.patch() * ld];
        for s in 0..self.n {
            self.im2col(&x[s * in_len..(s + 1) * in_len], &mut cols, ld, s * p);
        }
        cols
    }
}

/// Gradients of a convolution with respect to its input, weight and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    conv2d_backward_cols(x.shape(), None, Some(x), w, grad_out, stride, pad)
}

/// Backward pass reusing `cols` from [`conv2d_forward_cols`] when given,
/// otherwise unfolding `x` again.
pub(crate) fn conv2d_backward_cols(
    x_shape: &[usize],
    cols: Option<Vec<f64>>,
    x: Option<&Tensor>,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    let g = Geometry::new(x_shape, w.shape(), stride, pad)?;
    let expected = [g.n, g.f, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d backward", grad_out.shape(), &expected));
    }
    let (patch, p) = (g.patch(), g.positions());
    let ld = g.n * p;
    let in_len = g.c * g.h * g.w;
    // go_fp[F × N·P]
    let mut go_fp = vec![0.0; g.f * ld];
    let god = grad_out.data();
    for s in 0..g.n {
        for fi in 0..g.f {
            go_fp[fi * ld + s * p..fi * ld + (s + 1) * p]
                .copy_from_slice(&god[(s * g.f + fi) * p..(s * g.f + fi + 1) * p]);
        }
    }
    let db: Vec<f64> = go_fp.chunks(ld).map(|row| row.iter().sum()).collect();
    let cols = match (cols, x) {
        (Some(c), _) if c.len() == patch * ld => c,
        (_, Some(x)) => g.unfold_batch(x.data()),
        _ => {
            return Err(Error::InvalidArgument(
                "conv2d backward needs the input or its columns".into(),
            ))
        }
    };
    let mut dw = Tensor::zeros(w.shape());
    gemm_nt_acc(&go_fp, &cols, dw.data_mut(), g.f, ld, patch);
    let mut dcols = cols;
    dcols.fill(0.0);
    gemm_tn_acc(w.data(), &go_fp, &mut dcols, patch, g.f, ld);
    let mut dx = Tensor::zeros(x_shape);
    for s in 0..g.n {
        g.col2im(
            &dcols,
            ld,
            s * p,
            &mut dx.data_mut()[s * in_len..(s + 1) * in_len],
        );
    }
    Ok(ConvGrads {
        dx,
        dw,
        db: Tensor::new(vec![g.f], db)?,
    })
}
