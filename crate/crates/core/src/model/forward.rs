use super::arch::{plan, Node};
use super::{LayerGrad, LayerKind, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{
    batchnorm_backward, batchnorm_forward, conv2d_backward_cols, conv2d_forward,
    conv2d_forward_cols, global_avg_pool_backward, global_avg_pool_forward, linear_backward,
    linear_forward, maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward,
    softmax_cross_entropy, BnCache, BnMode, RunningStats, Tensor, BN_EPS, BN_MOMENTUM,
};

/// Result of one forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    /// One entry per layer, aligned with `model.layers`.
    pub grads: Vec<LayerGrad>,
    /// L2 norm of each layer's weight-block gradient, aligned with `model.layers`.
    pub grad_norms: Vec<f64>,
    /// Updated batch-norm running statistics (`None` for other layers).
    /// The input model is not modified.
    pub running: Vec<Option<RunningStats>>,
}

enum Saved {
    Input(Tensor),
    Cols(Vec<usize>, Vec<f64>),
    Bn(BnCache),
    Pool(Vec<usize>, Vec<usize>),
    Shape(Vec<usize>),
    None,
}

struct Trace {
    saved: Vec<Saved>,
    running: Vec<Option<RunningStats>>,
}

fn check_input(model: &ModelParams, x: &Tensor) -> Result<()> {
    let s = x.shape();
    if s.is_empty() || s[0] == 0 || s[1..] != model.input_shape[..] {
        let mut expected = vec![0];
        expected.extend_from_slice(&model.input_shape);
        return Err(Error::shape("model input", s, &expected));
    }
    Ok(())
}

fn conv_geom(model: &ModelParams, idx: usize) -> (usize, usize) {
    match model.layers[idx].kind {
        LayerKind::Conv { stride, pad } => (stride, pad),
        _ => unreachable!("plan references a non-conv layer as conv"),
    }
}

fn run_forward(
    model: &ModelParams,
    x: &Tensor,
    mode: BnMode,
    trace: Option<&mut Trace>,
) -> Result<Tensor> {
    let mut local_trace = trace;
    let mut act = x.clone();
    let mut skips: Vec<Tensor> = Vec::new();
    for node in plan(model) {
        let saved;
        act = match node {
            Node::Linear(i) => {
                let l = &model.layers[i];
                let y = linear_forward(&act, &l.weight, l.bias.as_ref().expect("linear bias"))?;
                saved = Saved::Input(act);
                y
            }
            Node::Conv(i) => {
                let l = &model.layers[i];
                let (stride, pad) = conv_geom(model, i);
                let bias = l.bias.as_ref().expect("conv bias");
                if local_trace.is_some() {
                    let (y, cols) = conv2d_forward_cols(&act, &l.weight, bias, stride, pad)?;
                    saved = Saved::Cols(act.shape().to_vec(), cols);
                    y
                } else {
                    saved = Saved::None;
                    conv2d_forward(&act, &l.weight, bias, stride, pad)?
                }
            }
            Node::BatchNorm(i) => {
                let l = &model.layers[i];
                let running = l.running.as_ref().expect("bn running stats");
                let out = batchnorm_forward(
                    &act,
                    &l.weight,
                    l.bias.as_ref().expect("bn beta"),
                    running,
                    mode,
                    BN_MOMENTUM,
                    BN_EPS,
                )?;
                if let Some(t) = local_trace.as_deref_mut() {
                    t.running[i] = Some(out.running);
                }
                saved = Saved::Bn(out.cache);
                out.y
            }
            Node::Relu => {
                let y = relu_forward(&act);
                saved = Saved::Input(act);
                y
            }
            Node::MaxPool(k) => {
                let (y, idx) = maxpool2d_forward(&act, k)?;
                saved = Saved::Pool(act.shape().to_vec(), idx);
                y
            }
            Node::Flatten => {
                let shape = act.shape().to_vec();
                let n = shape[0];
                let rest = shape[1..].iter().product::<usize>();
                saved = Saved::Shape(shape);
                act.reshape(&[n, rest])?
            }
            Node::GlobalAvgPool => {
                let y = global_avg_pool_forward(&act)?;
                saved = Saved::Shape(act.shape().to_vec());
                y
            }
            Node::PushSkip => {
                skips.push(act.clone());
                saved = Saved::None;
                act
            }
            Node::AddSkip => {
                let skip = skips.pop().expect("balanced skip plan");
                act.axpy(1.0, &skip)?;
                saved = Saved::None;
                act
            }
        };
        if let Some(t) = local_trace.as_deref_mut() {
            t.saved.push(saved);
        }
    }
    Ok(act)
}

/// Eval-mode logits (batch norm uses running statistics).
pub fn predict(model: &ModelParams, inputs: &Tensor) -> Result<Tensor> {
    check_input(model, inputs)?;
    run_forward(model, inputs, BnMode::Eval, None)
}

/// Train-mode loss and gradients for one batch.
pub fn forward_backward(
    model: &ModelParams,
    inputs: &Tensor,
    labels: &[usize],
) -> Result<StepOutput> {
    check_input(model, inputs)?;
    if inputs.shape()[0] != labels.len() {
        return Err(Error::shape(
            "batch labels",
            inputs.shape(),
            &[labels.len()],
        ));
    }
    let mut trace = Trace {
        saved: Vec::new(),
        running: model.layers.iter().map(|l| l.running.clone()).collect(),
    };
    let logits = run_forward(model, inputs, BnMode::Train, Some(&mut trace))?;
    let (loss, mut grad) = softmax_cross_entropy(&logits, labels)?;

    let mut grads: Vec<Option<LayerGrad>> = vec![None; model.layers.len()];
    let mut skip_grads: Vec<Tensor> = Vec::new();
    let nodes = plan(model);
    for (node, saved) in nodes.iter().zip(trace.saved).rev() {
        grad = match (*node, saved) {
            (Node::Linear(i), Saved::Input(x)) => {
                let g = linear_backward(&x, &model.layers[i].weight, &grad)?;
                grads[i] = Some(LayerGrad {
                    weight: g.dw,
                    bias: Some(g.db),
                });
                g.dx
            }
            (Node::Conv(i), Saved::Cols(shape, cols)) => {
                let (stride, pad) = conv_geom(model, i);
                let g = conv2d_backward_cols(
                    &shape,
                    Some(cols),
                    None,
                    &model.layers[i].weight,
                    &grad,
                    stride,
                    pad,
                )?;
                grads[i] = Some(LayerGrad {
                    weight: g.dw,
                    bias: Some(g.db),
                });
                g.dx
            }
            (Node::BatchNorm(i), Saved::Bn(cache)) => {
                let g = batchnorm_backward(&cache, &model.layers[i].weight, &grad)?;
                grads[i] = Some(LayerGrad {
                    weight: g.dgamma,
                    bias: Some(g.dbeta),
                });
                g.dx
            }
            (Node::Relu, Saved::Input(x)) => relu_backward(&x, &grad),
            (Node::MaxPool(_), Saved::Pool(shape, idx)) => maxpool2d_backward(&shape, &idx, &grad),
            (Node::Flatten, Saved::Shape(shape)) => grad.reshape(&shape)?,
            (Node::GlobalAvgPool, Saved::Shape(shape)) => global_avg_pool_backward(&shape, &grad),
            (Node::AddSkip, _) => {
                skip_grads.push(grad.clone());
                grad
            }
            (Node::PushSkip, _) => {
                let g = skip_grads.pop().expect("balanced skip plan");
                grad.axpy(1.0, &g)?;
                grad
            }
            _ => unreachable!("trace does not match plan"),
        };
    }
    let grads: Vec<LayerGrad> = grads
        .into_iter()
        .zip(&model.layers)
        .map(|(g, l)| {
            g.unwrap_or_else(|| LayerGrad {
                weight: Tensor::zeros(l.weight.shape()),
                bias: l.bias.as_ref().map(|b| Tensor::zeros(b.shape())),
            })
        })
        .collect();
    let grad_norms = grads.iter().map(|g| g.weight.norm()).collect();
    Ok(StepOutput {
        loss,
        grads,
        grad_norms,
        running: trace.running,
    })
}
