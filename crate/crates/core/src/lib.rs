//! Cross-view video prediction on a synthetic paired ego/exo world.
//!
//! Two-stage pipeline: an auto-regressive memory-attention network predicts
//! ego-view hand-object masks from an exo-view video plus one ego frame, and
//! a mask-conditioned latent video diffusion model predicts the future ego
//! frames. Data comes from a procedural toy world with exact ground truth.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod segnet;
pub mod training;
pub mod world;

pub use error::{Error, Result};
