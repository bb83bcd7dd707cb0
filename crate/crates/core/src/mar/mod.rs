//! Dual-domain metal artifact reduction with a diffusion prior, its ablation modes and
//! the LI / NMAR baselines.
//!
//! Each reverse-diffusion step predicts a clean image `f`, inpaints the metal trace of the
//! measured sinogram with `FP(f)`, reconstructs, and blends the result with `f` and with
//! the uncorrected image `y0` through reconstructed trace masks. Fusion happens in
//! attenuation units; the diffusion latent lives in normalized units.

mod baselines;
mod fusion;

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Zip;

pub use baselines::{li_baseline, li_complete, nmar_baseline, nmar_baseline_with, nmar_prior, NmarThresholds, NMAR_EPSILON};
pub use fusion::{
    delta_schedule, fuse_ma, fuse_prior, inpaint_sinogram, lerp, weight_mask, FusionConfig, FusionMode, LatentUpdate,
    MaskScale, DEFAULT_MASK_SCALE,
};

use crate::diffusion::{
    at_step, checked_denoise, gaussian_field, retimed_step, rng_from_seed, subsequence_schedule, Denoiser,
    NoiseSchedule, Normalization,
};
use crate::error::{Error, Result};
use crate::phantom::{insert_metal, segment_metal, TraceMask};
use crate::tomography::{Image, Projector, Sinogram};

/// A metal-affected measurement prepared for reconstruction.
#[derive(Debug, Clone)]
pub struct MarInput {
    pub s0: Sinogram,
    pub trace: TraceMask,
    pub projector: Arc<Projector>,
    /// `FBP(s0)`.
    pub y0: Image,
    pub gt: Option<Image>,
}

impl MarInput {
    pub fn new(s0: Sinogram, trace: TraceMask, projector: Arc<Projector>, gt: Option<Image>) -> Result<Self> {
        let geom = projector.geometry();
        s0.check_geometry(geom)?;
        trace.check_geometry(geom)?;
        if let Some(gt) = &gt {
            gt.check_geometry(geom)?;
        }
        let y0 = projector.fbp(&s0)?;
        Ok(MarInput { s0, trace, projector, y0, gt })
    }
}

/// Intermediate images of one step. Fields are `None` when the mode skips them.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub delta: f64,
    pub f: Image,
    pub s_tilde: Option<Sinogram>,
    pub x_tilde: Option<Image>,
    pub x_prime: Option<Image>,
    pub x_double_prime: Option<Image>,
}

/// Per-step diagnostics, empty unless requested.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarTrace {
    pub steps: Vec<StepRecord>,
}

/// Sets the pixels that `y0` classifies as metal to the implant value, for display and
/// scoring parity across methods.
pub fn restore_metal(img: &Image, y0: &Image) -> Result<Image> {
    crate::error::ensure_shape("image", img.shape(), y0.shape())?;
    insert_metal(img, &segment_metal(y0))
}

struct MaskCache<'a> {
    input: &'a MarInput,
    scale: f64,
    clamp: bool,
    masks: HashMap<u64, Image>,
}

impl MaskCache<'_> {
    fn get(&mut self, delta: f64) -> Result<&Image> {
        let key = delta.to_bits();
        if !self.masks.contains_key(&key) {
            let m = weight_mask(&self.input.trace, delta, &self.input.projector, self.scale, self.clamp)?;
            self.masks.insert(key, m);
        }
        Ok(&self.masks[&key])
    }
}

/// Runs the dual-domain reverse diffusion and returns the final image in attenuation
/// units. Metal pixels are left as fused; see [`restore_metal`].
pub fn dudodp_run<D: Denoiser + ?Sized>(
    input: &MarInput,
    denoiser: &mut D,
    schedule: &NoiseSchedule,
    cfg: &FusionConfig,
    norm: &Normalization,
    seed: u64,
    record: bool,
) -> Result<(Image, MarTrace)> {
    cfg.validate()?;
    norm.validate()?;
    let projector = &input.projector;
    let mw = projector.mu_water();
    let shape = input.y0.shape();
    let seq = subsequence_schedule(schedule, cfg.steps)?;
    let total = schedule.steps();
    let mut masks = MaskCache { input, scale: cfg.mask_scale.resolve(&input.s0), clamp: cfg.clamp_masks, masks: HashMap::new() };

    let mut rng = rng_from_seed(seed);
    let mut x = gaussian_field(shape, &mut rng);
    let mut trace = MarTrace::default();
    let mut last = None;
    for (i, &t) in seq.iter().enumerate() {
        let t_prev = seq.get(i + 1).copied().unwrap_or(0);
        let f_unit = checked_denoise(denoiser, &x, t, schedule).map_err(|e| at_step(t, e))?;
        let f = norm.to_image(&f_unit, mw)?;
        let delta = delta_schedule(t, total, cfg.a, cfg.n);

        let (mut s_tilde, mut x_tilde, mut x_prime, mut x_dprime) = (None, None, None, None);
        let out = match cfg.mode {
            FusionMode::ImageOnly => fuse_prior(&input.y0, &f, masks.get(cfg.delta_y)?)?,
            mode => {
                let (s, xt) = inpaint_sinogram(&input.s0, &input.trace, &f, projector)?;
                s_tilde = Some(s);
                if mode == FusionMode::SinoOnly {
                    x_tilde = Some(xt.clone());
                    xt
                } else {
                    let xp = fuse_prior(&xt, &f, masks.get(delta)?)?;
                    x_tilde = Some(xt);
                    if mode == FusionMode::SinoPlusPrior {
                        x_prime = Some(xp.clone());
                        xp
                    } else {
                        let xpp = fuse_ma(&f, &input.y0, masks.get(cfg.delta_y)?, &xp, schedule.alpha_bar(t))?;
                        x_prime = Some(xp);
                        x_dprime = Some(xpp.clone());
                        xpp
                    }
                }
            }
        };

        let noise = gaussian_field(shape, &mut rng);
        if t_prev > 0 {
            let fused = norm.to_unit(&out);
            x = match cfg.latent_update {
                LatentUpdate::Renoise => {
                    let ab = schedule.alpha_bar(t_prev);
                    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
                    Zip::from(&fused).and(&noise).map_collect(|&v, &z| a * v + b * z)
                }
                LatentUpdate::Posterior => retimed_step(&x, &fused, t, t_prev, &noise, 1.0, schedule)?,
            };
        }
        if record {
            trace.steps.push(StepRecord { t, delta, f, s_tilde, x_tilde, x_prime, x_double_prime: x_dprime });
        }
        last = Some(out);
    }
    let out = last.ok_or_else(|| Error::Config("empty step sequence".into()))?;
    Ok((out, trace))
}
