//! Experiment configuration: the TOML schema, its defaults and validation.
//!
//! ```toml
//! seed = 7
//! method = "lips"          # separate | fedavg | fedbn | lips
//!
//! [dataset]
//! kind = "synthetic"       # or "cifar10" with `path = "..."`
//! ```
//!
//! Every other field has a default; see `book/src/configuration.md` for the
//! full table.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::CIFAR10_FILES;
use crate::error::{Error, Result};
use crate::lips::{validate_scope, Criterion, Reinit};
use crate::model::{build_model, Arch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Every client trains alone; nothing is aggregated.
    Separate,
    #[serde(rename = "fedavg")]
    FedAvg,
    /// FedAvg with batch-norm layers kept client-local.
    #[serde(rename = "fedbn")]
    FedBn,
    /// FedBN plus transient sensitivity-guided sparsity.
    Lips,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Separate => "separate",
            Method::FedAvg => "fedavg",
            Method::FedBn => "fedbn",
            Method::Lips => "lips",
        }
    }

    /// Whether batch-norm blocks stay on the clients.
    pub fn keeps_bn_local(self) -> bool {
        matches!(self, Method::FedBn | Method::Lips)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separate" => Ok(Method::Separate),
            "fedavg" => Ok(Method::FedAvg),
            "fedbn" => Ok(Method::FedBn),
            "lips" => Ok(Method::Lips),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// What happens to middle layers once `fix_round` is reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixMode {
    /// No aggregation and no local updates.
    #[default]
    Freeze,
    /// Local training continues; only aggregation stops.
    AggregateOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        #[serde(default = "defaults::num_classes")]
        num_classes: usize,
        /// Per-sample shape; `[dim]` for flat vectors.
        #[serde(default = "defaults::shape")]
        shape: Vec<usize>,
        #[serde(default = "defaults::n_per_class")]
        n_per_class: usize,
        #[serde(default = "defaults::class_separation")]
        class_separation: f64,
        #[serde(default = "defaults::noise")]
        noise: f64,
    },
    Cifar10 {
        path: PathBuf,
    },
}

impl DatasetConfig {
    pub fn num_classes(&self) -> usize {
        match self {
            DatasetConfig::Synthetic { num_classes, .. } => *num_classes,
            DatasetConfig::Cifar10 { .. } => 10,
        }
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        match self {
            DatasetConfig::Synthetic { shape, .. } => shape.clone(),
            DatasetConfig::Cifar10 { .. } => vec![3, 32, 32],
        }
    }

    pub fn total_samples(&self) -> usize {
        match self {
            DatasetConfig::Synthetic {
                num_classes,
                n_per_class,
                ..
            } => num_classes * n_per_class,
            DatasetConfig::Cifar10 { .. } => 10_000 * CIFAR10_FILES.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LipsConfig {
    #[serde(default = "defaults::tau0")]
    pub tau0: f64,
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default)]
    pub reinit: Reinit,
    /// Re-apply the mask after every local step instead of only once.
    #[serde(default)]
    pub hold_mask: bool,
    /// Layers to mask; empty means every middle weight layer.
    #[serde(default)]
    pub scope: Vec<String>,
}

impl Default for LipsConfig {
    fn default() -> Self {
        LipsConfig {
            tau0: defaults::tau0(),
            k: defaults::k(),
            criterion: Criterion::default(),
            reinit: Reinit::default(),
            hold_mask: false,
            scope: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub method: Method,
    pub dataset: DatasetConfig,
    #[serde(default = "defaults::arch")]
    pub arch: Arch,
    #[serde(default = "defaults::n_clients")]
    pub n_clients: usize,
    #[serde(default = "defaults::samples_per_client")]
    pub samples_per_client: usize,
    #[serde(default = "defaults::test_per_client")]
    pub test_per_client: usize,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default = "defaults::local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    /// Round whose post-aggregation global model is the cosine reference.
    #[serde(default = "defaults::metrics_t0")]
    pub metrics_t0: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fix_round: Option<usize>,
    #[serde(default)]
    pub fix_mode: FixMode,
    /// Fraction of clients that train each round.
    #[serde(default = "defaults::participation")]
    pub participation: f64,
    #[serde(default)]
    pub lips: LipsConfig,
    /// Execution detail, not part of the experiment: left out of the echo.
    #[serde(default = "defaults::parallel_workers", skip_serializing)]
    pub parallel_workers: usize,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
}

pub mod defaults {
    use crate::model::Arch;
    use std::path::PathBuf;

    pub fn num_classes() -> usize {
        10
    }
    pub fn shape() -> Vec<usize> {
        vec![3, 8, 8]
    }
    pub fn n_per_class() -> usize {
        2000
    }
    pub fn class_separation() -> f64 {
        4.0
    }
    pub fn noise() -> f64 {
        1.0
    }
    pub fn arch() -> Arch {
        Arch::VggMini
    }
    pub fn n_clients() -> usize {
        100
    }
    pub fn samples_per_client() -> usize {
        100
    }
    pub fn test_per_client() -> usize {
        100
    }
    pub fn alpha() -> f64 {
        0.1
    }
    pub fn rounds() -> usize {
        300
    }
    pub fn local_epochs() -> usize {
        5
    }
    pub fn batch_size() -> usize {
        100
    }
    pub fn lr() -> f64 {
        0.1
    }
    pub fn metrics_t0() -> usize {
        2
    }
    pub fn participation() -> f64 {
        1.0
    }
    pub fn tau0() -> f64 {
        0.5
    }
    pub fn k() -> usize {
        5
    }
    pub fn parallel_workers() -> usize {
        1
    }
    /// Output root used when neither the config nor the command line names
    /// a directory. Overridden by `LIPSFL_OUTPUT_ROOT`.
    pub fn output_root() -> PathBuf {
        PathBuf::from("runs")
    }
}

fn field_err(field: &'static str, message: impl Into<String>) -> Error {
    Error::ConfigField {
        field,
        message: message.into(),
    }
}

/// Parses and validates a TOML document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    /// The resolved configuration as TOML, suitable for [`parse_config`].
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every bound and cross-field constraint.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_clients", self.n_clients),
            ("samples_per_client", self.samples_per_client),
            ("test_per_client", self.test_per_client),
            ("local_epochs", self.local_epochs),
            ("batch_size", self.batch_size),
            ("parallel_workers", self.parallel_workers),
            ("lips.k", self.lips.k),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(field_err(name, "must be at least 1"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(field_err(
                "alpha",
                format!("must be positive and finite, got {}", self.alpha),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(field_err(
                "lr",
                format!("must be non-negative and finite, got {}", self.lr),
            ));
        }
        if !(0.0..1.0).contains(&self.lips.tau0) {
            return Err(field_err(
                "lips.tau0",
                format!("must lie in [0, 1), got {}", self.lips.tau0),
            ));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(field_err(
                "participation",
                format!("must lie in (0, 1], got {}", self.participation),
            ));
        }
        // A zero-round run is a legal dry run; otherwise the reference
        // round has to happen before the last one.
        if self.rounds > 0 && self.metrics_t0 >= self.rounds {
            return Err(field_err(
                "metrics_t0",
                format!(
                    "must be less than rounds ({}), got {}",
                    self.rounds, self.metrics_t0
                ),
            ));
        }
        if let Some(fix) = self.fix_round {
            if self.method == Method::Separate {
                return Err(field_err(
                    "fix_round",
                    "has no effect with method = \"separate\"",
                ));
            }
            if fix == 0 {
                return Err(field_err("fix_round", "must be at least 1"));
            }
        }
        self.validate_dataset()?;
        let needed = self.n_clients * (self.samples_per_client + self.test_per_client);
        if needed > self.dataset.total_samples() {
            return Err(field_err(
                "n_clients",
                format!(
                    "{} clients × ({} + {}) samples exceed the {} in the dataset",
                    self.n_clients,
                    self.samples_per_client,
                    self.test_per_client,
                    self.dataset.total_samples()
                ),
            ));
        }
        let model = build_model(
            self.arch,
            &self.dataset.sample_shape(),
            self.dataset.num_classes(),
            0,
        )
        .map_err(|e| field_err("arch", e.to_string()))?;
        validate_scope(&model, &self.lips.scope).map_err(|e| field_err("lips.scope", e.to_string()))
    }

    fn validate_dataset(&self) -> Result<()> {
        match &self.dataset {
            DatasetConfig::Synthetic {
                num_classes,
                shape,
                n_per_class,
                class_separation,
                noise,
            } => {
                if *num_classes < 2 {
                    return Err(field_err("dataset.num_classes", "must be at least 2"));
                }
                if shape.is_empty() || shape.contains(&0) {
                    return Err(field_err(
                        "dataset.shape",
                        format!("needs positive dimensions, got {shape:?}"),
                    ));
                }
                if *n_per_class == 0 {
                    return Err(field_err("dataset.n_per_class", "must be at least 1"));
                }
                if !(*class_separation > 0.0 && class_separation.is_finite()) {
                    return Err(field_err(
                        "dataset.class_separation",
                        "must be positive and finite",
                    ));
                }
                if !(*noise > 0.0 && noise.is_finite()) {
                    return Err(field_err("dataset.noise", "must be positive and finite"));
                }
            }
            DatasetConfig::Cifar10 { path } => {
                if path.as_os_str().is_empty() {
                    return Err(field_err(
                        "dataset.path",
                        "must name the directory holding the batch files",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Masking scope: the configured override or every middle weight layer.
    pub fn lips_scope(&self, middle_layers: Vec<String>) -> Vec<String> {
        if self.lips.scope.is_empty() {
            middle_layers
        } else {
            self.lips.scope.clone()
        }
    }

    /// Copy with execution-only fields reset, for comparing experiments.
    pub fn experiment_only(&self) -> ExperimentConfig {
        ExperimentConfig {
            parallel_workers: defaults::parallel_workers(),
            output_dir: None,
            ..self.clone()
        }
    }
}
