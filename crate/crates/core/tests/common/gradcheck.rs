//! Analytic-vs-central-difference comparisons for every kernel and for whole
//! models. Each check returns the worst norm-wise relative error it saw.

use rand::Rng;

use lipsfl::model::{build_model, forward_backward, Arch, ModelParams};
use lipsfl::numerics::*;

use super::{random_tensor, rng};

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// `Σ y ⊙ r` for a fixed random projection `r`, turning any kernel output
/// into a scalar whose gradient w.r.t. `y` is `r`.
fn project(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub fn conv(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, c, f) = (
        g.random_range(1..3),
        g.random_range(1..4),
        g.random_range(1..4),
    );
    let (h, w) = (g.random_range(3..7), g.random_range(3..7));
    let (kh, kw) = (g.random_range(1..4), g.random_range(1..4));
    let stride = g.random_range(1..3);
    let pad = g.random_range(0..2);
    let x = random_tensor(&mut g, &[n, c, h, w]);
    let wt = random_tensor(&mut g, &[f, c, kh, kw]);
    let b = random_tensor(&mut g, &[f]);
    let y = conv2d_forward(&x, &wt, &b, stride, pad).unwrap();
    let r = random_tensor(&mut g, y.shape());
    let grads = conv2d_backward(&x, &wt, &r, stride, pad).unwrap();
    let ndx = finite_diff_grad(
        |t| project(&conv2d_forward(t, &wt, &b, stride, pad).unwrap(), &r),
        &x,
        EPS,
    );
    let ndw = finite_diff_grad(
        |t| project(&conv2d_forward(&x, t, &b, stride, pad).unwrap(), &r),
        &wt,
        EPS,
    );
    let ndb = finite_diff_grad(
        |t| project(&conv2d_forward(&x, &wt, t, stride, pad).unwrap(), &r),
        &b,
        EPS,
    );
    relative_error(&grads.dx, &ndx)
        .max(relative_error(&grads.dw, &ndw))
        .max(relative_error(&grads.db, &ndb))
}

pub fn batchnorm(seed: u64) -> f64 {
    let mut g = rng(seed);
    let shape = if g.random_bool(0.5) {
        vec![g.random_range(2..5), g.random_range(1..4)]
    } else {
        vec![g.random_range(1..4), g.random_range(1..4), 2, 3]
    };
    let c = shape[1];
    let x = random_tensor(&mut g, &shape);
    let gamma = random_tensor(&mut g, &[c]);
    let beta = random_tensor(&mut g, &[c]);
    let rs = RunningStats::new(c);
    let mut worst: f64 = 0.0;
    for mode in [BnMode::Train, BnMode::Eval] {
        let fwd = |x: &Tensor, gm: &Tensor, bt: &Tensor| {
            batchnorm_forward(x, gm, bt, &rs, mode, BN_MOMENTUM, BN_EPS)
                .unwrap()
                .y
        };
        let out = batchnorm_forward(&x, &gamma, &beta, &rs, mode, BN_MOMENTUM, BN_EPS).unwrap();
        let r = random_tensor(&mut g, out.y.shape());
        let grads = batchnorm_backward(&out.cache, &gamma, &r).unwrap();
        let ndx = finite_diff_grad(|t| project(&fwd(t, &gamma, &beta), &r), &x, EPS);
        let ndg = finite_diff_grad(|t| project(&fwd(&x, t, &beta), &r), &gamma, EPS);
        let ndb = finite_diff_grad(|t| project(&fwd(&x, &gamma, t), &r), &beta, EPS);
        worst = worst
            .max(relative_error(&grads.dx, &ndx))
            .max(relative_error(&grads.dgamma, &ndg))
            .max(relative_error(&grads.dbeta, &ndb));
    }
    worst
}

pub fn linear(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, i, o) = (
        g.random_range(1..5),
        g.random_range(1..6),
        g.random_range(1..6),
    );
    let x = random_tensor(&mut g, &[n, i]);
    let w = random_tensor(&mut g, &[o, i]);
    let b = random_tensor(&mut g, &[o]);
    let r = random_tensor(&mut g, &[n, o]);
    let grads = linear_backward(&x, &w, &r).unwrap();
    let ndx = finite_diff_grad(
        |t| project(&linear_forward(t, &w, &b).unwrap(), &r),
        &x,
        EPS,
    );
    let ndw = finite_diff_grad(
        |t| project(&linear_forward(&x, t, &b).unwrap(), &r),
        &w,
        EPS,
    );
    let ndb = finite_diff_grad(
        |t| project(&linear_forward(&x, &w, t).unwrap(), &r),
        &b,
        EPS,
    );
    relative_error(&grads.dx, &ndx)
        .max(relative_error(&grads.dw, &ndw))
        .max(relative_error(&grads.db, &ndb))
}

pub fn relu(seed: u64) -> f64 {
    let mut g = rng(seed);
    // keep inputs away from the kink
    let x = random_tensor(&mut g, &[3, 5]).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
    let r = random_tensor(&mut g, &[3, 5]);
    let dx = relu_backward(&x, &r);
    let ndx = finite_diff_grad(|t| project(&relu_forward(t), &r), &x, EPS);
    relative_error(&dx, &ndx)
}

pub fn maxpool(seed: u64) -> f64 {
    let mut g = rng(seed);
    let x = random_tensor(&mut g, &[2, 2, 4, 6]);
    let (y, idx) = maxpool2d_forward(&x, 2).unwrap();
    let r = random_tensor(&mut g, y.shape());
    let dx = maxpool2d_backward(x.shape(), &idx, &r);
    let ndx = finite_diff_grad(
        |t| project(&maxpool2d_forward(t, 2).unwrap().0, &r),
        &x,
        EPS,
    );
    relative_error(&dx, &ndx)
}

pub fn global_avg_pool(seed: u64) -> f64 {
    let mut g = rng(seed);
    let x = random_tensor(&mut g, &[2, 3, 3, 2]);
    let r = random_tensor(&mut g, &[2, 3]);
    let dx = global_avg_pool_backward(x.shape(), &r);
    let ndx = finite_diff_grad(
        |t| project(&global_avg_pool_forward(t).unwrap(), &r),
        &x,
        EPS,
    );
    relative_error(&dx, &ndx)
}

pub fn softmax(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, c) = (g.random_range(1..5), g.random_range(2..6));
    let logits = random_tensor(&mut g, &[n, c]).map(|v| 3.0 * v);
    let labels: Vec<usize> = (0..n).map(|_| g.random_range(0..c)).collect();
    let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
    let num = finite_diff_grad(
        |t| softmax_cross_entropy(t, &labels).unwrap().0,
        &logits,
        EPS,
    );
    relative_error(&grad, &num)
}

/// Checks every parameter block of a freshly built model on a random batch.
pub fn model(arch: Arch, input_shape: &[usize], batch: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let m = build_model(arch, input_shape, 3, seed).unwrap();
    let mut shape = vec![batch];
    shape.extend_from_slice(input_shape);
    let x = random_tensor(&mut g, &shape);
    let labels: Vec<usize> = (0..batch).map(|_| g.random_range(0..3)).collect();
    let out = forward_backward(&m, &x, &labels).unwrap();
    let loss = |m: &ModelParams| forward_backward(m, &x, &labels).unwrap().loss;
    let mut worst: f64 = 0.0;
    for (li, layer) in m.layers.iter().enumerate() {
        let nw = finite_diff_grad(
            |t| {
                let mut p = m.clone();
                p.layers[li].weight = t.clone();
                loss(&p)
            },
            &layer.weight,
            EPS,
        );
        worst = worst.max(relative_error(&out.grads[li].weight, &nw));
        if let (Some(b), Some(gb)) = (&layer.bias, &out.grads[li].bias) {
            let nb = finite_diff_grad(
                |t| {
                    let mut p = m.clone();
                    p.layers[li].bias = Some(t.clone());
                    loss(&p)
                },
                b,
                EPS,
            );
            worst = worst.max(relative_error(gb, &nb));
        }
    }
    worst
}
