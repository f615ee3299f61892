//! Configuration, dataset IO, artifact storage and the scenario harness built
//! on `fefet-core`.

pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod store;

pub use error::{SimError, SimResult};
