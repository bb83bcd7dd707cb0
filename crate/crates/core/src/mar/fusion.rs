use ndarray::{Array2, Zip};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ensure_shape, Error, Result};
use crate::phantom::TraceMask;
use crate::tomography::{Image, Projector, Sinogram};

/// Which parts of the dual-domain update are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Sinogram inpainting only; the output is `FBP(s~)`.
    SinoOnly,
    /// Prior blended into the metal-artifact image only, no inpainting.
    ImageOnly,
    /// Inpainting plus prior fusion, no metal-artifact image.
    SinoPlusPrior,
    /// Inpainting, prior fusion and metal-artifact fusion.
    #[default]
    Full,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::SinoOnly, FusionMode::ImageOnly, FusionMode::SinoPlusPrior, FusionMode::Full];

    /// Ablation-table row letter.
    pub fn label(self) -> char {
        match self {
            FusionMode::SinoOnly => 'a',
            FusionMode::ImageOnly => 'b',
            FusionMode::SinoPlusPrior => 'c',
            FusionMode::Full => 'd',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::SinoOnly => "sino_only",
            FusionMode::ImageOnly => "image_only",
            FusionMode::SinoPlusPrior => "sino_plus_prior",
            FusionMode::Full => "full",
        }
    }
}

/// How the latent `x_{t_prev}` is drawn from the fused estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentUpdate {
    /// Re-noise the fused estimate with the forward process, ignoring `x_t`.
    #[default]
    Renoise,
    /// Sample the posterior `q(x_{t_prev} | x_t, fused)`.
    Posterior,
}

/// Multiplier applied to the binary trace before reconstructing a weight mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskScale {
    Fixed(f64),
    /// The maximum value of the measured sinogram.
    Auto,
}

pub const DEFAULT_MASK_SCALE: f64 = 4.0;

impl Default for MaskScale {
    fn default() -> Self {
        MaskScale::Fixed(DEFAULT_MASK_SCALE)
    }
}

impl MaskScale {
    pub fn resolve(self, s0: &Sinogram) -> f64 {
        match self {
            MaskScale::Fixed(v) => v,
            MaskScale::Auto => s0.values().iter().copied().fold(0.0, f64::max),
        }
    }
}

impl Serialize for MaskScale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MaskScale::Fixed(v) => s.serialize_f64(*v),
            MaskScale::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for MaskScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(MaskScale::Fixed(v)),
            Raw::Word(w) if w == "auto" => Ok(MaskScale::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("mask_scale must be a number or \"auto\", got {w:?}"))),
        }
    }
}

/// Hyperparameters of the dual-domain loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// `delta(0)`; 1 gives a constant prior mask.
    pub a: f64,
    /// Decay rate of `delta(t)`.
    pub n: f64,
    /// Fixed `delta` of the metal-artifact image mask.
    pub delta_y: f64,
    pub mask_scale: MaskScale,
    pub mode: FusionMode,
    pub steps: usize,
    pub clamp_masks: bool,
    pub latent_update: LatentUpdate,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            a: 0.4,
            n: 4.0,
            delta_y: 0.8,
            mask_scale: MaskScale::default(),
            mode: FusionMode::Full,
            steps: 100,
            clamp_masks: true,
            latent_update: LatentUpdate::Renoise,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(Error::Config(format!("a must lie in (0, 1], got {}", self.a)));
        }
        if !(self.n > 0.0) || !self.n.is_finite() {
            return Err(Error::Config(format!("n must be positive, got {}", self.n)));
        }
        if !(self.delta_y > 0.0 && self.delta_y <= 1.0) {
            return Err(Error::Config(format!("delta_y must lie in (0, 1], got {}", self.delta_y)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if let MaskScale::Fixed(v) = self.mask_scale {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("mask_scale must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `delta(t) = (a - 1) exp(-n t / T) + 1`.
pub fn delta_schedule(t: usize, total: usize, a: f64, n: f64) -> f64 {
    (a - 1.0) * (-n * t as f64 / total as f64).exp() + 1.0
}

/// `FBP(scale * delta * M_s)`, optionally clipped to [0, 1].
pub fn weight_mask(trace: &TraceMask, delta: f64, projector: &Projector, mask_scale: f64, clamp: bool) -> Result<Image> {
    trace.check_geometry(projector.geometry())?;
    if !(delta >= 0.0) {
        return Err(Error::Config(format!("delta must be non-negative, got {delta}")));
    }
    let v = mask_scale * delta;
    let sino = trace.mask.mapv(|b| if b { v } else { 0.0 });
    let mut m = projector.fbp_values(&sino);
    if clamp {
        m.mapv_inplace(|x| x.clamp(0.0, 1.0));
    }
    Image::new(m, projector.mu_water())
}

/// `a + w (b - a)`, returning `a` or `b` exactly at `w = 0` or `w = 1`.
pub fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        a
    } else if w == 1.0 {
        b
    } else {
        a + w * (b - a)
    }
}

fn lerp_fields(a: &Array2<f64>, b: &Array2<f64>, w: &Array2<f64>) -> Array2<f64> {
    Zip::from(a).and(b).and(w).map_collect(|&a, &b, &w| lerp(a, b, w))
}

/// Replaces metal-trace bins of `s0` by `FP(f)` and reconstructs.
pub fn inpaint_sinogram(s0: &Sinogram, trace: &TraceMask, f: &Image, projector: &Projector) -> Result<(Sinogram, Image)> {
    let geom = projector.geometry();
    s0.check_geometry(geom)?;
    trace.check_geometry(geom)?;
    f.check_geometry(geom)?;
    let fp = projector.forward(f)?;
    let filled = Zip::from(s0.values())
        .and(fp.values())
        .and(&trace.mask)
        .map_collect(|&s, &p, &m| if m { p } else { s });
    let s_tilde = Sinogram::new(filled)?;
    let x_tilde = projector.fbp(&s_tilde)?;
    Ok((s_tilde, x_tilde))
}

/// `x' = M_f f + (1 - M_f) x~`.
pub fn fuse_prior(x_tilde: &Image, f: &Image, m_f: &Image) -> Result<Image> {
    ensure_shape("prior image", f.shape(), x_tilde.shape())?;
    ensure_shape("prior mask", m_f.shape(), x_tilde.shape())?;
    Image::new(lerp_fields(x_tilde.values(), f.values(), m_f.values()), x_tilde.mu_water())
}

/// `y0' = M_y f + (1 - M_y) y0` and `x'' = sqrt(abar) x' + (1 - sqrt(abar)) y0'`.
pub fn fuse_ma(f: &Image, y0: &Image, m_y: &Image, x_prime: &Image, alpha_bar: f64) -> Result<Image> {
    if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
        return Err(Error::Contract(format!("alpha_bar must lie in (0, 1], got {alpha_bar}")));
    }
    let y0_prime = fuse_prior(y0, f, m_y)?;
    ensure_shape("fused image", x_prime.shape(), y0.shape())?;
    let w = alpha_bar.sqrt();
    let values = Zip::from(y0_prime.values()).and(x_prime.values()).map_collect(|&y, &x| lerp(y, x, w));
    Image::new(values, y0.mu_water())
}
