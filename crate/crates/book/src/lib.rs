//! The guide in `book/src`, included chapter by chapter so that every Rust
//! snippet in it runs as a doc-test. Edit the Markdown, not this file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/numerics.md")]
pub mod numerics {}

#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/federated.md")]
pub mod federated {}

#[doc = include_str!("../../../book/src/lips.md")]
pub mod lips {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/reproducing.md")]
pub mod reproducing {}
