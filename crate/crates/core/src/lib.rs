//! Reward-shaped double dueling deep Q-learning for imbalanced
//! classification, with the supervised baselines and evaluation statistics
//! used to compare against it.

pub mod agent;
pub mod baselines;
pub mod data;
pub mod duelnet;
pub mod environment;
pub mod error;
pub mod metrics;
pub mod model_io;
pub mod numkernel;

pub use error::{Error, Result};
