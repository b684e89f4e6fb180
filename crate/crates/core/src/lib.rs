//! Federated continual-learning simulator with encoder/decoder model
//! splitting, drift and adversarial-task detection, and robust aggregation.

pub mod client;
pub mod data;
mod error;
pub mod nn;
pub mod orchestrator;
pub mod seed;
pub mod server;

pub use error::{Error, Result};
pub use nn::{Network, OptimizerConfig, OptimizerKind, ParamVector, Tensor};
pub use orchestrator::{ExperimentConfig, Method, RoundMetrics};
