//! Heterogeneous graph learning with metapath contexts.
//!
//! The crate is organized bottom-up:
//!
//! * [`graph`]: typed graph store, text loaders, metapath enumeration
//! * [`context`]: metapath context construction, pruning and storage
//! * [`tensor`]: dense tensors with a reverse-mode tape
//! * [`model`]: the context-encoding, metapath-fusing network and checkpoints
//! * [`train`]: losses, negative sampling, Adam, metrics and the training loop
//! * [`bench`]: aggregation-count verification and planted synthetic datasets
//! * [`app`]: config files and the command implementations behind the CLI

pub mod error;
pub mod app;
pub mod bench;
pub mod context;
pub mod graph;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
