//! Conditional diffusion forecasting of egocentric 3D hand trajectories and
//! poses, with synthetic capture generation, constant-position and
//! constant-velocity baselines, and an evaluation harness.
//!
//! - [`geometry`]: rotation codecs, pinhole projection, canonicalization
//! - [`data`]: sequences, joint layout, dataset files, view partition
//! - [`synthgen`]: seeded synthetic egocentric capture generator
//! - [`diffusion`]: noise schedule, forward noising, posterior sampling
//! - [`denoiser`]: the conditional denoising transformer
//! - [`training`]: losses, optimizer, the training loop, checkpoints
//! - [`eval`]: forecasting, baselines, metrics, report assembly
//! - [`plot`]: report rendering to PNG
//! - [`cli`]: command-line entry points

pub mod cli;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod plot;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
