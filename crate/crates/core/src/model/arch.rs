//! Desk-scale architectures and their forward plans.
//!
//! | arch          | trainable weight layers                          | norm | pooling            |
//! |---------------|--------------------------------------------------|------|--------------------|
//! | `mlp`         | fc1, fc2, fc3                                    | none | none               |
//! | `vgg_mini`    | conv1..conv4 (3×3, pad 1), fc                    | BN after every conv | 2×2 max after conv2 and conv4 |
//! | `resnet_mini` | stem, block{1,2}_conv{1,2} (3×3, pad 1), fc      | BN after every conv | global average     |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{Arch, LayerKind, LayerParams, ModelParams, Role};
use crate::error::{Error, Result};
use crate::numerics::{conv_out_dim, RunningStats, Tensor};

pub const MLP_HIDDEN: usize = 32;
/// Output channels of conv1..conv4 in `vgg_mini`.
pub const VGG_WIDTHS: [usize; 4] = [4, 8, 8, 16];
pub const RESNET_WIDTH: usize = 8;

/// One step of a model's forward computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Node {
    Linear(usize),
    Conv(usize),
    BatchNorm(usize),
    Relu,
    MaxPool(usize),
    Flatten,
    GlobalAvgPool,
    /// Saves the current activation for an identity skip.
    PushSkip,
    /// Adds the most recently saved activation.
    AddSkip,
}

struct Builder {
    rng: ChaCha8Rng,
    layers: Vec<LayerParams>,
}

impl Builder {
    fn kaiming(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| normal.sample(&mut self.rng))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches data")
    }

    /// Fan-in uniform without the ReLU gain, bound `1/√fan_in`.
    fn fan_in_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let uniform = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| uniform.sample(&mut self.rng))
            .collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches data")
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) {
        let weight = self.kaiming(&[d_out, d_in], d_in);
        self.push_linear(name, weight, d_out);
    }

    /// The logit layer feeds softmax rather than a ReLU, so it skips the
    /// Kaiming gain.
    fn classifier(&mut self, name: &str, d_in: usize, d_out: usize) {
        let weight = self.fan_in_uniform(&[d_out, d_in], d_in);
        self.push_linear(name, weight, d_out);
    }

    fn push_linear(&mut self, name: &str, weight: Tensor, d_out: usize) {
        self.layers.push(LayerParams {
            name: name.to_string(),
            kind: LayerKind::Linear,
            weight,
            bias: Some(Tensor::zeros(&[d_out])),
            running: None,
            role: Role::Middle,
            shareable: true,
        });
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize) {
        let weight = self.kaiming(&[c_out, c_in, 3, 3], c_in * 9);
        self.layers.push(LayerParams {
            name: name.to_string(),
            kind: LayerKind::Conv { stride: 1, pad: 1 },
            weight,
            bias: Some(Tensor::zeros(&[c_out])),
            running: None,
            role: Role::Middle,
            shareable: true,
        });
    }

    fn batchnorm(&mut self, name: &str, channels: usize) {
        self.layers.push(LayerParams {
            name: name.to_string(),
            kind: LayerKind::BatchNorm,
            weight: Tensor::filled(&[channels], 1.0),
            bias: Some(Tensor::zeros(&[channels])),
            running: Some(RunningStats::new(channels)),
            role: Role::Middle,
            shareable: false,
        });
    }

    fn finish(mut self, arch: Arch, input_shape: &[usize], num_classes: usize) -> ModelParams {
        let weight_idx: Vec<usize> = (0..self.layers.len())
            .filter(|&i| self.layers[i].is_weight_layer())
            .collect();
        self.layers[weight_idx[0]].role = Role::First;
        self.layers[*weight_idx.last().unwrap()].role = Role::Last;
        ModelParams {
            arch,
            input_shape: input_shape.to_vec(),
            num_classes,
            layers: self.layers,
        }
    }
}

fn image_dims(arch: Arch, input_shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *input_shape {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(Error::InvalidArgument(format!(
            "{arch} needs a [channels, height, width] input shape, got {input_shape:?}"
        ))),
    }
}

/// Builds a freshly initialized model: Kaiming fan-in normal weights for
/// hidden layers, `U(±1/√fan_in)` for the classifier, zero biases, unit gamma
/// and zero beta for batch norm.
pub fn build_model(
    arch: Arch,
    input_shape: &[usize],
    num_classes: usize,
    seed: u64,
) -> Result<ModelParams> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        layers: Vec::new(),
    };
    match arch {
        Arch::Mlp => {
            let d: usize = input_shape.iter().product();
            if d == 0 {
                return Err(Error::InvalidArgument("empty input shape".into()));
            }
            b.linear("fc1", d, MLP_HIDDEN);
            b.linear("fc2", MLP_HIDDEN, MLP_HIDDEN);
            b.classifier("fc3", MLP_HIDDEN, num_classes);
        }
        Arch::VggMini => {
            let (c, h, w) = image_dims(arch, input_shape)?;
            if h % 4 != 0 || w % 4 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "vgg_mini needs height and width divisible by 4, got {h}×{w}"
                )));
            }
            let [w1, w2, w3, w4] = VGG_WIDTHS;
            b.conv("conv1", c, w1);
            b.batchnorm("bn1", w1);
            b.conv("conv2", w1, w2);
            b.batchnorm("bn2", w2);
            b.conv("conv3", w2, w3);
            b.batchnorm("bn3", w3);
            b.conv("conv4", w3, w4);
            b.batchnorm("bn4", w4);
            b.classifier("fc", w4 * (h / 4) * (w / 4), num_classes);
        }
        Arch::ResnetMini => {
            let (c, h, w) = image_dims(arch, input_shape)?;
            if conv_out_dim(h, 3, 1, 1).is_none() || conv_out_dim(w, 3, 1, 1).is_none() {
                return Err(Error::InvalidArgument("input too small".into()));
            }
            b.conv("stem", c, RESNET_WIDTH);
            b.batchnorm("stem_bn", RESNET_WIDTH);
            for blk in 1..=2 {
                b.conv(&format!("block{blk}_conv1"), RESNET_WIDTH, RESNET_WIDTH);
                b.batchnorm(&format!("block{blk}_bn1"), RESNET_WIDTH);
                b.conv(&format!("block{blk}_conv2"), RESNET_WIDTH, RESNET_WIDTH);
                b.batchnorm(&format!("block{blk}_bn2"), RESNET_WIDTH);
            }
            b.classifier("fc", RESNET_WIDTH, num_classes);
        }
    }
    Ok(b.finish(arch, input_shape, num_classes))
}

/// Forward plan over layer indices; layer order matches `build_model`.
#[rustfmt::skip]
pub(crate) fn plan(model: &ModelParams) -> Vec<Node> {
    use Node::*;
    match model.arch {
        Arch::Mlp => vec![Flatten, Linear(0), Relu, Linear(1), Relu, Linear(2)],
        Arch::VggMini => vec![
            Conv(0), BatchNorm(1), Relu,
            Conv(2), BatchNorm(3), Relu, MaxPool(2),
            Conv(4), BatchNorm(5), Relu,
            Conv(6), BatchNorm(7), Relu, MaxPool(2),
            Flatten, Linear(8),
        ],
        Arch::ResnetMini => {
            let mut nodes = vec![Conv(0), BatchNorm(1), Relu];
            for blk in 0..2 {
                let base = 2 + blk * 4;
                nodes.extend([
                    PushSkip,
                    Conv(base), BatchNorm(base + 1), Relu,
                    Conv(base + 2), BatchNorm(base + 3),
                    AddSkip, Relu,
                ]);
            }
            nodes.extend([GlobalAvgPool, Linear(10)]);
            nodes
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = build_model(Arch::VggMini, &[3, 8, 8], 10, 42).unwrap();
        let b = build_model(Arch::VggMini, &[3, 8, 8], 10, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_seeds_differ() {
        let a = build_model(Arch::ResnetMini, &[3, 8, 8], 10, 1).unwrap();
        let b = build_model(Arch::ResnetMini, &[3, 8, 8], 10, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn vgg_mini_layer_listing() {
        let m = build_model(Arch::VggMini, &[3, 8, 8], 10, 0).unwrap();
        let listing: Vec<(&str, Vec<usize>, Role)> = m
            .layers
            .iter()
            .map(|l| (l.name.as_str(), l.weight.shape().to_vec(), l.role))
            .collect();
        let expected = vec![
            ("conv1", vec![4, 3, 3, 3], Role::First),
            ("bn1", vec![4], Role::Middle),
            ("conv2", vec![8, 4, 3, 3], Role::Middle),
            ("bn2", vec![8], Role::Middle),
            ("conv3", vec![8, 8, 3, 3], Role::Middle),
            ("bn3", vec![8], Role::Middle),
            ("conv4", vec![16, 8, 3, 3], Role::Middle),
            ("bn4", vec![16], Role::Middle),
            ("fc", vec![10, 64], Role::Last),
        ];
        assert_eq!(listing, expected);
        assert_eq!(m.weight_layers().count(), 5);
        assert_eq!(m.middle_layer_names(), vec!["conv2", "conv3", "conv4"]);
        assert!(m
            .layers
            .iter()
            .filter(|l| l.is_batchnorm())
            .all(|l| !l.shareable));
    }

    #[test]
    fn role_partition_holds_for_every_arch() {
        for arch in [Arch::Mlp, Arch::VggMini, Arch::ResnetMini] {
            let m = build_model(arch, &[3, 8, 8], 5, 3).unwrap();
            let firsts = m.weight_layers().filter(|l| l.role == Role::First).count();
            let lasts = m.weight_layers().filter(|l| l.role == Role::Last).count();
            assert_eq!((firsts, lasts), (1, 1), "{arch}");
            assert!(m
                .layers
                .iter()
                .filter(|l| l.is_batchnorm())
                .all(|l| l.role == Role::Middle));
            let mut names: Vec<_> = m.layers.iter().map(|l| &l.name).collect();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), m.layers.len());
        }
    }

    #[test]
    fn biases_zero_and_bn_identity_at_init() {
        let m = build_model(Arch::VggMini, &[3, 8, 8], 10, 9).unwrap();
        for l in &m.layers {
            assert!(l.bias.as_ref().unwrap().data().iter().all(|&v| v == 0.0));
            if l.is_batchnorm() {
                assert!(l.weight.data().iter().all(|&v| v == 1.0));
            }
        }
    }

    #[test]
    fn classifier_is_bounded_and_hidden_layers_are_not() {
        let m = build_model(Arch::VggMini, &[3, 8, 8], 10, 4).unwrap();
        let fc = m.layers.iter().find(|l| l.name == "fc").unwrap();
        let bound = 1.0 / 64f64.sqrt();
        assert!(fc.weight.data().iter().all(|v| v.abs() <= bound));
        let conv2 = m.layers.iter().find(|l| l.name == "conv2").unwrap();
        let var =
            conv2.weight.data().iter().map(|v| v * v).sum::<f64>() / conv2.weight.len() as f64;
        // Kaiming variance 2/36
        assert!((var / (2.0 / 36.0) - 1.0).abs() < 0.2, "{var}");
    }

    #[test]
    fn vgg_rejects_odd_geometry() {
        assert!(build_model(Arch::VggMini, &[3, 6, 6], 10, 0).is_err());
        assert!(build_model(Arch::VggMini, &[192], 10, 0).is_err());
    }
}
