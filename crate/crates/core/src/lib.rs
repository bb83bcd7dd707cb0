//! Unsupervised CT metal artifact reduction with diffusion priors applied in both the
//! sinogram and image domains.
//!
//! The crate is organized bottom-up:
//!
//! - [`tomography`]: geometry, Joseph forward projection, filtered back-projection.
//! - [`phantom`]: procedural phantoms, metal insertion, polychromatic simulation, metal traces.
//! - [`diffusion`]: DDPM schedule and posteriors, x0-prediction denoisers, samplers.
//! - [`mar`]: the dual-domain reconstruction loop plus LI and NMAR baselines.
//! - [`metrics`]: windowed PSNR/SSIM and metal-size grouped reports.

pub mod diffusion;
pub mod error;
pub mod mar;
pub mod metrics;
pub mod phantom;
pub mod tomography;

pub use error::{Error, Result};
