//! Batch normalization over the channel axis of `N×C×…` tensors.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Saved forward state for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    mode: BnMode,
}

#[derive(Debug, Clone)]
pub struct BnOutput {
    pub y: Tensor,
    pub running: RunningStats,
    pub cache: BnCache,
}

fn layout(shape: &[usize]) -> (usize, usize, usize) {
    let spatial: usize = shape[2..].iter().product();
    (shape[0], shape[1], spatial)
}

#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &RunningStats,
    mode: BnMode,
    momentum: f64,
    eps: f64,
) -> Result<BnOutput> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(Error::shape("batchnorm", shape, gamma.shape()));
    }
    let (n, c, s) = layout(shape);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape("batchnorm", shape, gamma.shape()));
    }
    if running.mean.len() != c || running.var.len() != c {
        return Err(Error::shape(
            "batchnorm running stats",
            shape,
            &[running.mean.len()],
        ));
    }
    let m = n * s;
    if mode == BnMode::Train && m < 2 {
        return Err(Error::InvalidArgument(
            "batchnorm needs more than one value per channel in train mode".into(),
        ));
    }
    let xd = x.data();
    let mut next = running.clone();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    match mode {
        BnMode::Train => {
            for ch in 0..c {
                let mut sum = 0.0;
                for i in 0..n {
                    sum += xd[(i * c + ch) * s..(i * c + ch + 1) * s]
                        .iter()
                        .sum::<f64>();
                }
                let mu = sum / m as f64;
                let mut sq = 0.0;
                for i in 0..n {
                    sq += xd[(i * c + ch) * s..(i * c + ch + 1) * s]
                        .iter()
                        .map(|v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = sq / m as f64;
                let unbiased = sq / (m - 1) as f64;
                next.mean[ch] = (1.0 - momentum) * running.mean[ch] + momentum * mu;
                next.var[ch] = (1.0 - momentum) * running.var[ch] + momentum * unbiased;
            }
        }
        BnMode::Eval => {
            mean.copy_from_slice(&running.mean);
            var.copy_from_slice(&running.var);
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = vec![0.0; xd.len()];
    let mut y = Tensor::zeros(shape);
    let (g, b) = (gamma.data(), beta.data());
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * s;
            for k in base..base + s {
                let h = (xd[k] - mean[ch]) * inv_std[ch];
                x_hat[k] = h;
                y.data_mut()[k] = g[ch] * h + b[ch];
            }
        }
    }
    Ok(BnOutput {
        y,
        running: next,
        cache: BnCache {
            x_hat,
            inv_std,
            shape: shape.to_vec(),
            mode,
        },
    })
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub dx: Tensor,
    pub dgamma: Tensor,
    pub dbeta: Tensor,
}

pub fn batchnorm_backward(cache: &BnCache, gamma: &Tensor, grad_out: &Tensor) -> Result<BnGrads> {
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::shape(
            "batchnorm backward",
            grad_out.shape(),
            &cache.shape,
        ));
    }
    let (n, c, s) = layout(&cache.shape);
    let m = (n * s) as f64;
    let dy = grad_out.data();
    let g = gamma.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * s;
            for (d, xh) in dy[base..base + s].iter().zip(&cache.x_hat[base..base + s]) {
                dbeta[ch] += d;
                dgamma[ch] += d * xh;
            }
        }
    }
    let mut dx = Tensor::zeros(&cache.shape);
    let out = dx.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * s;
            let scale = g[ch] * cache.inv_std[ch];
            let rows = out[base..base + s]
                .iter_mut()
                .zip(&dy[base..base + s])
                .zip(&cache.x_hat[base..base + s]);
            for ((o, d), xh) in rows {
                *o = match cache.mode {
                    BnMode::Train => scale * (d - dbeta[ch] / m - xh * dgamma[ch] / m),
                    BnMode::Eval => scale * d,
                };
            }
        }
    }
    Ok(BnGrads {
        dx,
        dgamma: Tensor::new(vec![c], dgamma)?,
        dbeta: Tensor::new(vec![c], dbeta)?,
    })
}
