//! K-asynchronous federated learning simulator with history-aware aggregation.
//!
//! The crate is organised bottom-up: [`gradmath`] vector arithmetic, a small
//! [`model`], [`data`] generation and partitioning, the server [`buffer`],
//! aggregation [`strategies`], and the discrete-event [`simulator`] driven by an
//! [`config::ExperimentConfig`].

pub mod buffer;
pub mod config;
pub mod data;
pub mod error;
pub mod gradmath;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod strategies;

pub use buffer::{GradientRecord, HistoryBuffer};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use gradmath::GradientVec;
pub use strategies::{HistParams, Strategy, UtilityTable};
