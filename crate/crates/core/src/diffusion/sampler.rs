use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use super::prior::{checked_denoise, Denoiser};
use super::schedule::{retimed_step, subsequence_schedule, NoiseSchedule};
use crate::error::{Error, Result};

/// Seeded generator used for all diffusion draws.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An array of independent standard normal draws.
pub fn gaussian_field(shape: (usize, usize), rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

/// Adds the step index to a denoiser failure.
pub(crate) fn at_step(t: usize, e: Error) -> Error {
    match e {
        Error::DenoiserUnavailable(msg) => Error::DenoiserUnavailable(format!("step t={t}: {msg}")),
        other => other,
    }
}

/// Reverse-process sample over `steps` evenly strided timesteps.
///
/// `x_T` and every step's noise are drawn from one generator seeded with `seed`, in step
/// order. `eta` scales the posterior noise; 1 is ancestral sampling and 0 iterates the
/// posterior mean.
pub fn unconditional_sample<D: Denoiser + ?Sized>(
    denoiser: &mut D,
    schedule: &NoiseSchedule,
    shape: (usize, usize),
    steps: usize,
    eta: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    let seq = subsequence_schedule(schedule, steps)?;
    let mut rng = rng_from_seed(seed);
    let mut x = gaussian_field(shape, &mut rng);
    for (i, &t) in seq.iter().enumerate() {
        let t_prev = seq.get(i + 1).copied().unwrap_or(0);
        let f = checked_denoise(denoiser, &x, t, schedule).map_err(|e| at_step(t, e))?;
        let noise = gaussian_field(shape, &mut rng);
        x = retimed_step(&x, &f, t, t_prev, &noise, eta, schedule)?;
    }
    Ok(x)
}
