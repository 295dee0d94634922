use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::config::LipsConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lips::{
    apply_mask_in_place, decayed_tau, layer_vectors, select_mask, sensitivity_scores, weight_delta,
    LayerVectors, Reinit, SparsityMask,
};
use crate::model::{forward_backward, sgd_step_in_place, ModelParams};
use crate::seeds::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Local copy, including this client's own batch-norm blocks when the
    /// policy keeps them local.
    pub model: ModelParams,
    /// Weights just before the most recent local training.
    pub prev_round_pre: Option<ModelParams>,
    /// Weight-layer deltas of the most recent local training.
    pub last_delta: Option<LayerVectors>,
    /// Build-time weights, shared by every client.
    pub init_snapshot: Arc<ModelParams>,
}

/// Knobs of one client's local phase.
#[derive(Debug, Clone, Copy)]
pub struct TrainSettings<'a> {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub master_seed: u64,
    pub round: usize,
    /// Per layer, whether SGD leaves it alone.
    pub frozen: Option<&'a [bool]>,
    /// Mask re-applied after every step (the hold-mask variant).
    pub hold: Option<(&'a SparsityMask, Reinit)>,
}

impl ClientState {
    pub fn new(id: usize, train: Vec<usize>, test: Vec<usize>, init: Arc<ModelParams>) -> Self {
        ClientState {
            id,
            train,
            test,
            model: (*init).clone(),
            prev_round_pre: None,
            last_delta: None,
            init_snapshot: init,
        }
    }

    /// Builds and applies this client's mask for `round` when it has a
    /// completed local phase to score against. Returns the mask used.
    pub fn sparsify(
        &mut self,
        lips: &LipsConfig,
        scope: &[String],
        master_seed: u64,
        round: usize,
        total_rounds: usize,
    ) -> Result<Option<SparsityMask>> {
        let Some(delta) = &self.last_delta else {
            return Ok(None);
        };
        let delta: LayerVectors = delta
            .iter()
            .filter(|(n, _)| scope.contains(n))
            .cloned()
            .collect();
        let scores = sensitivity_scores(&layer_vectors(&self.model, scope)?, &delta)?;
        let tau = decayed_tau(round, lips.tau0, total_rounds)?;
        let mut rng = stream_rng(
            master_seed,
            Stream::ClientMask,
            self.id as u64,
            round as u64,
        );
        let mask = select_mask(
            &self.model,
            Some(&scores),
            tau,
            lips.criterion,
            scope,
            &mut rng,
        )?;
        apply_mask_in_place(
            &mut self.model,
            &mask,
            lips.reinit,
            Some(&self.init_snapshot),
        )?;
        Ok(Some(mask))
    }
}

/// Runs `epochs` passes of minibatch SGD over the client's train split.
/// Returns, per weight layer, the mean L2 norm of the weight gradient over
/// all steps.
pub fn local_train(
    client: &mut ClientState,
    dataset: &Dataset,
    settings: &TrainSettings,
) -> Result<Vec<f64>> {
    if client.train.is_empty() {
        return Err(Error::Empty("client train split"));
    }
    if settings.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "batch_size must be at least 1".into(),
        ));
    }
    let pre = client.model.clone();
    let weight_idx: Vec<usize> = (0..pre.layers.len())
        .filter(|&i| pre.layers[i].is_weight_layer())
        .collect();
    let mut rng = stream_rng(
        settings.master_seed,
        Stream::ClientTrain,
        client.id as u64,
        settings.round as u64,
    );
    let mut order = client.train.clone();
    let mut sums = vec![0.0; weight_idx.len()];
    let mut steps = 0usize;
    for _ in 0..settings.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(settings.batch_size) {
            let (x, y) = dataset.batch(batch);
            let out = forward_backward(&client.model, &x, &y)?;
            sgd_step_in_place(&mut client.model, &out.grads, settings.lr, settings.frozen)?;
            for (layer, running) in client.model.layers.iter_mut().zip(out.running) {
                if running.is_some() {
                    layer.running = running;
                }
            }
            if let Some((mask, reinit)) = settings.hold {
                apply_mask_in_place(&mut client.model, mask, reinit, Some(&client.init_snapshot))?;
            }
            for (s, &i) in sums.iter_mut().zip(&weight_idx) {
                *s += out.grad_norms[i];
            }
            steps += 1;
        }
    }
    let names = pre.weight_layer_names();
    client.last_delta = Some(weight_delta(&pre, &client.model, &names)?);
    client.prev_round_pre = Some(pre);
    Ok(sums.into_iter().map(|s| s / steps.max(1) as f64).collect())
}
