//! Latent-diffusion anomaly detection with keyword-weighted conditioning.
//!
//! The crate is organised along the processing pipeline:
//!
//! - [`schedule`]: noise schedule and closed forms of the forward process.
//! - [`denoiser`]: ε-predictors, both the exact Gaussian-mixture oracle and a
//!   small trainable MLP.
//! - [`sampler`]: ancestral and PLMS samplers, partial-diffusion reconstruction.
//! - [`prompting`]: keyword pool, cosine alignment, top-k selection with
//!   median-normalised weights and condition composition.
//! - [`synthdata`]: synthetic slides of patch latents with exact anomaly masks.
//! - [`scoring`] and [`metrics`]: anomaly scores, z-maps, erosion, slide
//!   scores, segmentation and ranking metrics.
//! - [`evaluate`]: the end-to-end protocol and the timestep sweep.
//! - [`config`]: experiment configuration and digests.

pub mod config;
pub mod denoiser;
pub mod error;
pub mod evaluate;
pub mod metrics;
pub mod prompting;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod scoring;
pub mod synthdata;

pub use error::{Error, Result};
pub use schedule::{Latent, NoiseSchedule};
