//! Named-layer models with fixed layer order, role flags, and flat weight
//! access.
//!
//! Every trainable weight layer (linear or conv) carries a [`Role`]: the
//! first one in forward order is [`Role::First`], the classifier is
//! [`Role::Last`], and everything in between is [`Role::Middle`]. Batch-norm
//! layers are always `Middle` and are not shareable; they hold gamma in
//! `weight`, beta in `bias`, and their running statistics in `running`.

mod arch;
mod checkpoint;
mod forward;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RunningStats, Tensor};

pub use arch::build_model;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use forward::{forward_backward, predict, StepOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mlp,
    VggMini,
    ResnetMini,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::VggMini => "vgg_mini",
            Arch::ResnetMini => "resnet_mini",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Arch::Mlp),
            "vgg_mini" => Ok(Arch::VggMini),
            "resnet_mini" => Ok(Arch::ResnetMini),
            other => Err(Error::UnknownArch(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Linear,
    Conv { stride: usize, pad: usize },
    BatchNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    First,
    Middle,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub name: String,
    pub kind: LayerKind,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub running: Option<RunningStats>,
    pub role: Role,
    pub shareable: bool,
}

impl LayerParams {
    pub fn is_batchnorm(&self) -> bool {
        self.kind == LayerKind::BatchNorm
    }

    /// Linear or conv layer (the blocks cosine and masking operate on).
    pub fn is_weight_layer(&self) -> bool {
        !self.is_batchnorm()
    }

    /// Weight layers strictly between the first and the classifier.
    pub fn is_middle_weight_layer(&self) -> bool {
        self.is_weight_layer() && self.role == Role::Middle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Arch,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub layers: Vec<LayerParams>,
}

/// Gradient of one layer's parameter blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl ModelParams {
    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn layer(&self, name: &str) -> Result<&LayerParams> {
        Ok(&self.layers[self.layer_index(name)?])
    }

    pub fn weight_layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.layers.iter().filter(|l| l.is_weight_layer())
    }

    pub fn weight_layer_names(&self) -> Vec<String> {
        self.weight_layers().map(|l| l.name.clone()).collect()
    }

    pub fn middle_layer_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| l.is_middle_weight_layer())
            .map(|l| l.name.clone())
            .collect()
    }

    /// Whether two models have the same layer names, kinds and block shapes.
    pub fn is_aligned_with(&self, other: &ModelParams) -> bool {
        self.arch == other.arch
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.name == b.name
                    && a.kind == b.kind
                    && a.weight.shape() == b.weight.shape()
                    && a.bias.as_ref().map(Tensor::shape) == b.bias.as_ref().map(Tensor::shape)
            })
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.as_ref().map_or(0, Tensor::len))
            .sum()
    }
}

/// Row-major flattening of a weight layer's weight block (bias excluded).
pub fn layer_weight_vector(model: &ModelParams, layer_name: &str) -> Result<Vec<f64>> {
    let layer = model.layer(layer_name)?;
    if !layer.is_weight_layer() {
        return Err(Error::InvalidArgument(format!(
            "layer `{layer_name}` is not a weight layer"
        )));
    }
    Ok(layer.weight.data().to_vec())
}

/// Overwrites a weight layer's weight block from a flat vector.
pub fn set_layer_weights(model: &mut ModelParams, layer_name: &str, values: &[f64]) -> Result<()> {
    let idx = model.layer_index(layer_name)?;
    let w = &mut model.layers[idx].weight;
    if w.len() != values.len() {
        return Err(Error::shape(
            "set_layer_weights",
            w.shape(),
            &[values.len()],
        ));
    }
    w.data_mut().copy_from_slice(values);
    Ok(())
}

/// `w ← w − lr·g` for every parameter block of every layer whose `frozen`
/// flag is false. Running statistics are never touched.
pub fn sgd_step_in_place(
    model: &mut ModelParams,
    grads: &[LayerGrad],
    lr: f64,
    frozen: Option<&[bool]>,
) -> Result<()> {
    if grads.len() != model.layers.len() {
        return Err(Error::shape(
            "sgd_step",
            &[model.layers.len()],
            &[grads.len()],
        ));
    }
    for (i, (layer, g)) in model.layers.iter_mut().zip(grads).enumerate() {
        if frozen.is_some_and(|f| f[i]) {
            continue;
        }
        layer.weight.axpy(-lr, &g.weight)?;
        match (&mut layer.bias, &g.bias) {
            (Some(b), Some(gb)) => b.axpy(-lr, gb)?,
            (None, None) => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "bias gradient misaligned for `{}`",
                    layer.name
                )))
            }
        }
    }
    Ok(())
}

/// Plain SGD update returning a new model.
pub fn sgd_step(model: &ModelParams, grads: &[LayerGrad], lr: f64) -> Result<ModelParams> {
    let mut next = model.clone();
    sgd_step_in_place(&mut next, grads, lr, None)?;
    Ok(next)
}
