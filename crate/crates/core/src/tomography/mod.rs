//! CT system model: acquisition geometry, Joseph forward projection and its adjoint,
//! ramp filtering, filtered back-projection, HU conversion and the raw float file format.

mod field;
mod filter;
mod geometry;
pub mod io;
mod projector;

pub use field::{hu_to_mu, mu_to_hu, Image, Sinogram, MU_WATER};
pub use filter::{fan_ramp_kernel, ramp_kernel, RampFilter};
pub use geometry::{BeamMode, Geometry};
pub use projector::{back_project, fbp, forward_project, ramp_filter, Projector};
