//! Deterministic federated-learning simulator. A run is a pure function of
//! its [`config::ExperimentConfig`]; see [`fedcore::run_experiment`] and the
//! guide in `book/`.

pub mod config;
pub mod data;
pub mod error;
pub mod fedcore;
pub mod lips;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod runner;
pub mod seeds;

pub use error::{Error, Result};
