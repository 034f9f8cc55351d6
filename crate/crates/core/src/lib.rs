//! Variational encoder-decoder surrogates for groundwater-flow models.
//!
//! The crate covers the whole experimental loop:
//!
//! * [`field`] generates synthetic log-transmissivity fields from a truncated
//!   Karhunen–Loève expansion, solves steady saturated flow on a cell-centered
//!   finite-volume grid and samples heads at observation wells.
//! * [`gridmap`] maps active-cell vectors onto masked Cartesian images.
//! * [`cca`] estimates a linear latent dimension with canonical correlation
//!   analysis.
//! * [`nn`] holds the residual convolutional encoder and the shallow decoder,
//!   with hand-written backpropagation, generic over `f32`/`f64`.
//! * [`losses`] implements the reconstruction, KL and covariance terms.
//! * [`train`] runs Adam with cosine decay, clipping and sweeps.
//! * [`eval`] produces reconstruction, decoded-noise and latent-covariance
//!   diagnostics.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

pub mod cca;
pub mod config;
pub mod error;
pub mod eval;
pub mod exec;
pub mod field;
pub mod gridmap;
pub mod io;
pub mod losses;
pub mod manifest;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod stages;
pub mod train;

pub use error::{Error, Result};
pub use exec::Execution;
