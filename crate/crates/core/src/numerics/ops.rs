use super::linalg::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::Tensor;
use crate::error::{Error, Result};

/// Fully connected layer: `x[N×in] · wᵀ + b` with `w[out×in]`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sx, sw) = (x.shape(), w.shape());
    if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || b.shape() != [sw[0]] {
        return Err(Error::shape("linear", sx, sw));
    }
    let (n, d_in, d_out) = (sx[0], sx[1], sw[0]);
    let mut out = Tensor::zeros(&[n, d_out]);
    for row in out.data_mut().chunks_mut(d_out) {
        row.copy_from_slice(b.data());
    }
    gemm_nt_acc(x.data(), w.data(), out.data_mut(), n, d_in, d_out);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn linear_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
    let (sx, sw) = (x.shape(), w.shape());
    let (n, d_in, d_out) = (sx[0], sx[1], sw[0]);
    if grad_out.shape() != [n, d_out] {
        return Err(Error::shape(
            "linear backward",
            grad_out.shape(),
            &[n, d_out],
        ));
    }
    let mut dx = Tensor::zeros(sx);
    gemm_acc(grad_out.data(), w.data(), dx.data_mut(), n, d_out, d_in);
    let mut dw = Tensor::zeros(sw);
    gemm_tn_acc(grad_out.data(), x.data(), dw.data_mut(), d_out, n, d_in);
    let mut db = Tensor::zeros(&[d_out]);
    for row in grad_out.data().chunks(d_out) {
        for (d, g) in db.data_mut().iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(LinearGrads { dx, dw, db })
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut dx = grad_out.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Non-overlapping `k×k` max-pool over `N×C×H×W`; returns the flat argmax
/// input index of every output cell for the backward pass.
pub fn maxpool2d_forward(x: &Tensor, k: usize) -> Result<(Tensor, Vec<usize>)> {
    let s = x.shape();
    if s.len() != 4 || k == 0 || s[2] < k || s[3] < k {
        return Err(Error::shape("maxpool2d", s, &[k, k]));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = (h / k, w / k);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0; n * c * oh * ow];
    let xd = x.data();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best = base + oi * k * w + oj * k;
                for di in 0..k {
                    for dj in 0..k {
                        let idx = base + (oi * k + di) * w + oj * k + dj;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.data_mut()[o] = xd[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        dx.data_mut()[idx] += g;
    }
    dx
}

/// Mean over spatial positions: `N×C×H×W` → `N×C`.
pub fn global_avg_pool_forward(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("global_avg_pool", s, &[0, 0, 0, 0]));
    }
    let hw = s[2] * s[3];
    let data = x
        .data()
        .chunks(hw)
        .map(|p| p.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new(vec![s[0], s[1]], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let hw = input_shape[2] * input_shape[3];
    let mut dx = Tensor::zeros(input_shape);
    for (plane, &g) in dx.data_mut().chunks_mut(hw).zip(grad_out.data()) {
        plane.fill(g / hw as f64);
    }
    dx
}

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax − onehot) / N` with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::shape("softmax_cross_entropy", s, &[labels.len()]));
    }
    let (n, c) = (s[0], s[1]);
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: c,
        });
    }
    let mut grad = Tensor::zeros(s);
    let mut loss = 0.0;
    for ((row, g), &label) in logits
        .data()
        .chunks(c)
        .zip(grad.data_mut().chunks_mut(c))
        .zip(labels)
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp();
            z += *gi;
        }
        loss += z.ln() - (row[label] - max);
        for gi in g.iter_mut() {
            *gi /= z * n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}
