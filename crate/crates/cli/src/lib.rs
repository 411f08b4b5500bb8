//! Experiment runner for motion-guided latent diffusion on synthetic video:
//! dataset synthesis, model training, guided sampling, decoder fine-tuning,
//! evaluation, ablations and gradient checks.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod output;
pub mod parallel;
pub mod pipeline;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, Result};
