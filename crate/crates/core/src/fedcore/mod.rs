//! The federated round engine.
//!
//! A round `t` (counted from 1) runs: optional LIPS masking on every client,
//! local training, server aggregation, distribution, then metrics on the
//! post-aggregation global model. Clients run in parallel on a rayon pool;
//! each one draws only from its own seeded streams and the server reduces in
//! ascending client id, so results do not depend on the worker count.

mod client;
mod server;

pub use client::{local_train, ClientState, TrainSettings};
pub use server::{aggregate, distribute, Policy, ServerState};

use std::sync::Arc;

use rand::seq::index;
use rayon::prelude::*;

use crate::config::{DatasetConfig, ExperimentConfig, Method};
use crate::data::{dirichlet_partition, gen_synthetic, load_cifar10, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_accuracy, record_round, MetricsLog, RoundRecord};
use crate::model::{build_model, ModelParams};
use crate::seeds::{derive_seed, stream_rng, Stream};

/// Materializes the configured dataset. Synthetic data is drawn from the
/// `Data` stream of the master seed.
pub fn load_dataset(config: &DatasetConfig, master_seed: u64) -> Result<Dataset> {
    match config {
        DatasetConfig::Synthetic {
            num_classes,
            shape,
            n_per_class,
            class_separation,
            noise,
        } => {
            let spec = SyntheticSpec {
                num_classes: *num_classes,
                dim: shape.iter().product(),
                n_per_class: *n_per_class,
                class_separation: *class_separation,
                noise: *noise,
            };
            gen_synthetic(&spec, derive_seed(master_seed, Stream::Data, 1, 0))?
                .with_sample_shape(shape)
        }
        DatasetConfig::Cifar10 { path } => load_cifar10(path),
    }
}

/// A configured run in progress.
pub struct Experiment {
    config: ExperimentConfig,
    dataset: Arc<Dataset>,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    scope: Vec<String>,
    reference: Option<ModelParams>,
    log: MetricsLog,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = load_dataset(&config.dataset, config.seed)?;
        Self::with_dataset(config, Arc::new(dataset))
    }

    /// Uses an already loaded dataset (must match the configured shape).
    pub fn with_dataset(config: ExperimentConfig, dataset: Arc<Dataset>) -> Result<Self> {
        config.validate()?;
        if dataset.sample_shape() != config.dataset.sample_shape()
            || dataset.num_classes() != config.dataset.num_classes()
        {
            return Err(Error::shape(
                "dataset",
                dataset.sample_shape(),
                &config.dataset.sample_shape(),
            ));
        }
        let partition = dirichlet_partition(
            &dataset,
            config.n_clients,
            config.alpha,
            config.samples_per_client,
            config.test_per_client,
            config.seed,
        )?;
        let init = Arc::new(build_model(
            config.arch,
            dataset.sample_shape(),
            dataset.num_classes(),
            derive_seed(config.seed, Stream::ModelInit, 0, 0),
        )?);
        let clients = partition
            .clients
            .into_iter()
            .enumerate()
            .map(|(id, split)| ClientState::new(id, split.train, split.test, Arc::clone(&init)))
            .collect();
        let scope = config.lips_scope(init.middle_layer_names());
        let server = ServerState {
            global_model: (*init).clone(),
            round: 0,
            policy: Policy {
                method: config.method,
                fix_round: config.fix_round,
                fix_mode: config.fix_mode,
            },
        };
        let reference = (config.metrics_t0 == 0).then(|| (*init).clone());
        Ok(Experiment {
            config,
            dataset,
            server,
            clients,
            scope,
            reference,
            log: MetricsLog::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.server.round >= self.config.rounds
    }

    /// The model cosines are measured on. Under `separate` there is no
    /// global model, so client 0 stands in (the centralized case when it is
    /// the only client).
    pub fn diagnostic_model(&self) -> &ModelParams {
        match self.config.method {
            Method::Separate => &self.clients[0].model,
            _ => &self.server.global_model,
        }
    }

    fn participants(&self, round: usize) -> Vec<usize> {
        let n = self.clients.len();
        if self.config.participation >= 1.0 {
            return (0..n).collect();
        }
        let m = ((self.config.participation * n as f64).round() as usize).clamp(1, n);
        let mut rng = stream_rng(self.config.seed, Stream::Participation, 0, round as u64);
        let mut picked = index::sample(&mut rng, n, m).into_vec();
        picked.sort_unstable();
        picked
    }

    fn masking_due(&self, round: usize) -> bool {
        let k = self.config.lips.k;
        self.config.method == Method::Lips && round >= k && round.is_multiple_of(k)
    }

    /// Runs the next round and returns its record.
    pub fn step(&mut self) -> Result<&RoundRecord> {
        if self.is_finished() {
            return Err(Error::RoundOutOfRange {
                round: self.server.round + 1,
                total: self.config.rounds,
            });
        }
        let round = self.server.round + 1;
        let cfg = &self.config;
        let policy = self.server.policy;
        let frozen: Vec<bool> = self
            .server
            .global_model
            .layers
            .iter()
            .map(|l| policy.frozen(l, round))
            .collect();
        let any_frozen = frozen.iter().any(|f| *f);
        let participants = self.participants(round);
        let mask_due = self.masking_due(round);
        let dataset = &*self.dataset;
        let scope = &self.scope;

        let mut active: Vec<&mut ClientState> = self
            .clients
            .iter_mut()
            .filter(|c| participants.binary_search(&c.id).is_ok())
            .collect();
        let grad_norms: Vec<Vec<f64>> = active
            .par_iter_mut()
            .map(|client| {
                let mask = if mask_due {
                    client.sparsify(&cfg.lips, scope, cfg.seed, round, cfg.rounds)?
                } else {
                    None
                };
                let settings = TrainSettings {
                    lr: cfg.lr,
                    epochs: cfg.local_epochs,
                    batch_size: cfg.batch_size,
                    master_seed: cfg.seed,
                    round,
                    frozen: any_frozen.then_some(frozen.as_slice()),
                    hold: mask
                        .as_ref()
                        .filter(|_| cfg.lips.hold_mask)
                        .map(|m| (m, cfg.lips.reinit)),
                };
                local_train(client, dataset, &settings)
            })
            .collect::<Result<_>>()?;

        if cfg.method != Method::Separate {
            let models: Vec<&ModelParams> = active.iter().map(|c| &c.model).collect();
            let sizes: Vec<usize> = active.iter().map(|c| c.train.len()).collect();
            self.server.global_model =
                aggregate(&self.server.global_model, &models, &sizes, &policy, round)?;
            for client in &mut self.clients {
                distribute(&self.server.global_model, &mut client.model, &policy, round)?;
            }
        }
        self.server.round = round;

        let accuracies: Vec<f64> = self
            .clients
            .par_iter()
            .map(|c| evaluate_accuracy(&c.model, dataset, &c.test))
            .collect::<Result<_>>()?;
        if round == self.config.metrics_t0 {
            self.reference = Some(self.diagnostic_model().clone());
        }
        let diag = match self.config.method {
            Method::Separate => &self.clients[0].model,
            _ => &self.server.global_model,
        };
        record_round(
            &mut self.log,
            round,
            &accuracies,
            diag,
            self.reference.as_ref(),
            &grad_norms,
        )?;
        Ok(self.log.last().expect("just recorded"))
    }

    /// Runs every remaining round on a pool of `parallel_workers` threads.
    pub fn run(mut self) -> Result<MetricsLog> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.parallel_workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| {
            while !self.is_finished() {
                self.step()?;
            }
            Ok(self.log)
        })
    }
}

/// Builds the dataset, partition and clients for `config` and runs all
/// rounds.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsLog> {
    Experiment::new(config.clone())?.run()
}
