//! Curiosity-driven cross-entropy planning inside a learned latent world
//! model: networks with exact gradients, the TOLD model, intrinsic curiosity
//! and contrastive objectives, the CEM planner family, small control
//! environments, the training loop and experiment drivers.

pub mod checks;
pub mod config;
pub mod curiosity;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod planner;
pub mod replay;
pub mod told;
pub mod trainer;

pub use error::{Error, Result};
