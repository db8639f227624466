//! Origin-destination travel-time estimation with 1D convolutional networks.

pub mod analysis;
pub mod architectures;
pub mod autograd;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod layers;
pub mod metrics;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
