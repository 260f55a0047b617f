//! Air-purifier booth placement on a multi-channel urban grid: data
//! ingestion, the placement environment, a from-scratch PPO agent, baseline
//! strategies and evaluation.

pub mod booth;
pub mod config;
pub mod env;
pub mod error;
pub mod grid;
pub mod influence;
pub mod ingest;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod plot;
pub mod ppo;
pub mod strategies;

pub use error::{Error, Result};

/// AQI ceiling used to normalize observations and rewards.
pub const AQI_MAX: f64 = 500.0;
