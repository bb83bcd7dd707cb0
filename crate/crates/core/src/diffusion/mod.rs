//! Denoising diffusion machinery: the linear noise schedule, forward and posterior
//! distributions, x0-prediction denoisers and the reverse-process sampler.
//!
//! Diffusion states live in a normalized space where the HU window [-1000, 3000] maps to
//! [-1, 1]; see [`Normalization`]. Random draws are always passed in explicitly or derived
//! from a caller-supplied seed.

mod plugin;
mod prior;
mod sampler;
mod schedule;

pub use plugin::{PluginDenoiser, PluginRequest, PluginResponse, DEFAULT_PLUGIN_TIMEOUT};
pub use prior::{analytic_denoise, checked_denoise, Denoiser, Normalization, TemplatePrior};
pub use sampler::{gaussian_field, rng_from_seed, unconditional_sample};
pub(crate) use sampler::at_step;
pub use schedule::{
    ancestral_step, eps_to_x0, make_schedule, posterior_coefficients, posterior_params, retimed_step,
    sample_xt, subsequence_schedule, x0_to_eps, NoiseSchedule, SigmaChoice,
};
