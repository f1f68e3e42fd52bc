//! Deterministic simulator for cooperative federated contrastive learning.
//!
//! Devices with non-i.i.d. unlabeled data train triplet-loss encoders
//! locally, exchange datapoints over a device-to-device graph through a
//! push-pull importance-sampling protocol, and periodically aggregate into
//! a global model. Everything is seeded: a run is a pure function of its
//! configuration.

pub mod clustering;
pub mod config;
pub mod data;
pub mod error;
pub mod exchange;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod report;
pub mod rng;
pub mod topology;

pub use config::{RunConfig, Strategy};
pub use error::{Error, Result};
pub use federation::{run_simulation, RunHistory};
pub use model::EncoderModel;
