use crate::config::{FixMode, Method};
use crate::error::{Error, Result};
use crate::model::{LayerParams, ModelParams};

/// Which blocks move between server and clients, and which stay put.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Policy {
    pub method: Method,
    pub fix_round: Option<usize>,
    pub fix_mode: FixMode,
}

impl Policy {
    pub fn new(method: Method) -> Self {
        Policy {
            method,
            fix_round: None,
            fix_mode: FixMode::Freeze,
        }
    }

    fn middle_fixed(&self, layer: &LayerParams, round: usize) -> bool {
        layer.is_middle_weight_layer() && self.fix_round.is_some_and(|f| round >= f)
    }

    /// Whether `layer` is averaged on the server (and broadcast back) in `round`.
    pub fn shares(&self, layer: &LayerParams, round: usize) -> bool {
        match self.method {
            Method::Separate => false,
            _ if layer.is_batchnorm() => !self.method.keeps_bn_local(),
            _ => !self.middle_fixed(layer, round),
        }
    }

    /// Whether local SGD skips `layer` in `round`.
    pub fn frozen(&self, layer: &LayerParams, round: usize) -> bool {
        self.fix_mode == FixMode::Freeze && self.middle_fixed(layer, round)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global_model: ModelParams,
    /// Last completed round; 0 before the first.
    pub round: usize,
    pub policy: Policy,
}

fn check_aligned(a: &ModelParams, b: &ModelParams) -> Result<()> {
    if a.is_aligned_with(b) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "model layouts differ ({} layers vs {})",
            a.layers.len(),
            b.layers.len()
        )))
    }
}

/// `Σ_i (|D_i| / |D|) · w_i` for every block the policy shares in `round`.
/// Other blocks are copied from `global` untouched. Clients are reduced in
/// the order given, so callers pass them by ascending id.
pub fn aggregate(
    global: &ModelParams,
    clients: &[&ModelParams],
    data_sizes: &[usize],
    policy: &Policy,
    round: usize,
) -> Result<ModelParams> {
    if clients.is_empty() {
        return Err(Error::Empty("aggregation clients"));
    }
    if clients.len() != data_sizes.len() {
        return Err(Error::shape(
            "aggregate sizes",
            &[clients.len()],
            &[data_sizes.len()],
        ));
    }
    for c in clients {
        check_aligned(global, c)?;
    }
    let total: usize = data_sizes.iter().sum();
    if total == 0 {
        return Err(Error::Empty("aggregation data"));
    }
    let weights: Vec<f64> = data_sizes
        .iter()
        .map(|&n| n as f64 / total as f64)
        .collect();
    let mut out = global.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        if !policy.shares(layer, round) {
            continue;
        }
        let avg = |pick: &dyn Fn(&ModelParams) -> &[f64], dst: &mut [f64]| {
            dst.fill(0.0);
            for (c, p) in clients.iter().zip(&weights) {
                for (d, v) in dst.iter_mut().zip(pick(c)) {
                    *d += p * v;
                }
            }
        };
        avg(&|m| m.layers[l].weight.data(), layer.weight.data_mut());
        if let Some(b) = layer.bias.as_mut() {
            avg(
                &|m| m.layers[l].bias.as_ref().expect("aligned bias").data(),
                b.data_mut(),
            );
        }
        if let Some(r) = layer.running.as_mut() {
            avg(
                &|m| &m.layers[l].running.as_ref().expect("aligned stats").mean,
                &mut r.mean,
            );
            avg(
                &|m| &m.layers[l].running.as_ref().expect("aligned stats").var,
                &mut r.var,
            );
        }
    }
    Ok(out)
}

/// Overwrites every block the policy shares in `round` with the global value.
pub fn distribute(
    global: &ModelParams,
    client: &mut ModelParams,
    policy: &Policy,
    round: usize,
) -> Result<()> {
    check_aligned(global, client)?;
    for (dst, src) in client.layers.iter_mut().zip(&global.layers) {
        if policy.shares(src, round) {
            dst.weight.clone_from(&src.weight);
            dst.bias.clone_from(&src.bias);
            dst.running.clone_from(&src.running);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Arch};

    fn vgg(seed: u64) -> ModelParams {
        build_model(Arch::VggMini, &[1, 4, 4], 3, seed).unwrap()
    }

    fn filled(v: f64) -> ModelParams {
        let mut m = vgg(0);
        for l in &mut m.layers {
            l.weight.data_mut().fill(v);
        }
        m
    }

    #[test]
    fn weighted_and_plain_means() {
        let p = Policy::new(Method::FedAvg);
        let (a, b) = (filled(1.0), filled(3.0));
        let g = aggregate(&a, &[&a, &b], &[5, 5], &p, 1).unwrap();
        assert!(g
            .layers
            .iter()
            .all(|l| l.weight.data().iter().all(|&v| v == 2.0)));
        let (a, b) = (filled(0.0), filled(4.0));
        let g = aggregate(&a, &[&a, &b], &[1, 3], &p, 1).unwrap();
        assert!(g
            .layers
            .iter()
            .all(|l| l.weight.data().iter().all(|&v| v == 3.0)));
    }

    #[test]
    fn fedbn_leaves_bn_alone() {
        let p = Policy::new(Method::FedBn);
        let global = vgg(1);
        let (a, b) = (filled(1.0), filled(3.0));
        let g = aggregate(&global, &[&a, &b], &[1, 1], &p, 1).unwrap();
        for (gl, orig) in g.layers.iter().zip(&global.layers) {
            if orig.is_batchnorm() {
                assert_eq!(gl, orig);
            } else {
                assert!(gl.weight.data().iter().all(|&v| v == 2.0));
            }
        }
        let mut client = a.clone();
        distribute(&g, &mut client, &p, 1).unwrap();
        for (c, orig) in client.layers.iter().zip(&a.layers) {
            if orig.is_batchnorm() {
                assert_eq!(c, orig);
            }
        }
    }

    #[test]
    fn fixed_middle_shares_only_first_and_last() {
        let p = Policy {
            method: Method::FedAvg,
            fix_round: Some(3),
            fix_mode: FixMode::Freeze,
        };
        let global = vgg(1);
        let (a, b) = (filled(1.0), filled(3.0));
        let before = aggregate(&global, &[&a, &b], &[1, 1], &p, 2).unwrap();
        assert!(before
            .layer("conv2")
            .unwrap()
            .weight
            .data()
            .iter()
            .all(|&v| v == 2.0));
        let after = aggregate(&global, &[&a, &b], &[1, 1], &p, 3).unwrap();
        assert_eq!(
            after.layer("conv2").unwrap(),
            global.layer("conv2").unwrap()
        );
        assert!(after
            .layer("conv1")
            .unwrap()
            .weight
            .data()
            .iter()
            .all(|&v| v == 2.0));
        assert!(after
            .layer("fc")
            .unwrap()
            .weight
            .data()
            .iter()
            .all(|&v| v == 2.0));
        assert!(p.frozen(global.layer("conv3").unwrap(), 3));
        assert!(!p.frozen(global.layer("conv1").unwrap(), 3));
    }

    #[test]
    fn separate_changes_nothing() {
        let p = Policy::new(Method::Separate);
        let global = vgg(1);
        let g = aggregate(&global, &[&filled(1.0)], &[1], &p, 1).unwrap();
        assert_eq!(g, global);
        let mut c = vgg(2);
        distribute(&global, &mut c, &p, 1).unwrap();
        assert_eq!(c, vgg(2));
    }

    #[test]
    fn fedavg_distribution_is_bitwise() {
        let p = Policy::new(Method::FedAvg);
        let global = vgg(1);
        let mut c = vgg(2);
        distribute(&global, &mut c, &p, 1).unwrap();
        assert_eq!(c, global);
    }

    #[test]
    fn misaligned_clients_are_rejected() {
        let p = Policy::new(Method::FedAvg);
        let other = build_model(Arch::Mlp, &[1, 4, 4], 3, 0).unwrap();
        assert!(aggregate(&vgg(0), &[&other], &[1], &p, 1).is_err());
        assert!(aggregate(&vgg(0), &[], &[], &p, 1).is_err());
    }
}
