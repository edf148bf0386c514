//! Diffusion forward/reverse processes and Boomerang local sampling.

pub mod apps;
pub mod classifier;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod forward;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
