use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::error::{ensure_shape, Error, Result};
use crate::tomography::{hu_to_mu, mu_to_hu, Image};

/// Log-weights this far below the maximum are dropped.
const FLUSH_LOG_WEIGHT: f64 = -60.0;

/// Affine map from an HU window onto [-1, 1], the diffusion state space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub lo_hu: f64,
    pub hi_hu: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { lo_hu: -1000.0, hi_hu: 3000.0 }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if !(self.hi_hu > self.lo_hu) || !self.lo_hu.is_finite() || !self.hi_hu.is_finite() {
            return Err(Error::Config(format!("normalization window [{}, {}] is empty", self.lo_hu, self.hi_hu)));
        }
        Ok(())
    }

    pub fn mu_to_unit(&self, mu: f64, mu_water: f64) -> f64 {
        2.0 * (mu_to_hu(mu, mu_water) - self.lo_hu) / (self.hi_hu - self.lo_hu) - 1.0
    }

    pub fn unit_to_mu(&self, v: f64, mu_water: f64) -> f64 {
        hu_to_mu(self.lo_hu + (v + 1.0) * 0.5 * (self.hi_hu - self.lo_hu), mu_water)
    }

    pub fn to_unit(&self, img: &Image) -> Array2<f64> {
        let mw = img.mu_water();
        img.values().mapv(|m| self.mu_to_unit(m, mw))
    }

    pub fn to_mu(&self, values: &Array2<f64>, mu_water: f64) -> Array2<f64> {
        values.mapv(|v| self.unit_to_mu(v, mu_water))
    }

    pub fn to_image(&self, values: &Array2<f64>, mu_water: f64) -> Result<Image> {
        Image::new(self.to_mu(values, mu_water), mu_water)
    }
}

/// An x0-predicting denoiser `f(x_t, t)` acting on normalized images.
pub trait Denoiser {
    fn denoise(&mut self, x_t: &Array2<f64>, t: usize, schedule: &NoiseSchedule) -> Result<Array2<f64>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &mut D {
    fn denoise(&mut self, x_t: &Array2<f64>, t: usize, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
        (**self).denoise(x_t, t, schedule)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn denoise(&mut self, x_t: &Array2<f64>, t: usize, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
        (**self).denoise(x_t, t, schedule)
    }
}

/// Calls `denoiser` and enforces the output contract (same shape, finite values).
pub fn checked_denoise<D: Denoiser + ?Sized>(
    denoiser: &mut D,
    x_t: &Array2<f64>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    let out = denoiser.denoise(x_t, t, schedule)?;
    if out.dim() != x_t.dim() {
        return Err(Error::DenoiserUnavailable(format!(
            "denoiser returned shape {:?} for input {:?} at t={t}",
            out.dim(),
            x_t.dim()
        )));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::DenoiserUnavailable(format!("denoiser returned non-finite values at t={t}")));
    }
    Ok(out)
}

/// Uniform mixture over normalized template images. Its posterior mean under the forward
/// process is available in closed form, which makes it an exact x0-prediction denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplatePrior {
    templates: Vec<Array2<f64>>,
}

impl TemplatePrior {
    pub fn new(templates: Vec<Array2<f64>>) -> Result<Self> {
        let Some(first) = templates.first() else {
            return Err(Error::Config("template prior needs at least one template".into()));
        };
        let shape = first.dim();
        for (k, c) in templates.iter().enumerate() {
            ensure_shape(&format!("template {k}"), c.dim(), shape)?;
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("template {k} has non-finite values")));
            }
        }
        Ok(TemplatePrior { templates })
    }

    pub fn from_images(images: &[Image], norm: &Normalization) -> Result<Self> {
        norm.validate()?;
        Self::new(images.iter().map(|img| norm.to_unit(img)).collect())
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.templates[0].dim()
    }

    pub fn templates(&self) -> &[Array2<f64>] {
        &self.templates
    }

    /// Normalized posterior weights over templates given `x_t`.
    pub fn posterior_weights(&self, x_t: &Array2<f64>, t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        schedule.check_step(t)?;
        ensure_shape("x_t", x_t.dim(), self.shape())?;
        let ab = schedule.alpha_bar(t);
        let a = ab.sqrt();
        let denom = 2.0 * (1.0 - ab);
        let logs: Vec<f64> = self
            .templates
            .iter()
            .map(|c| {
                let d2 = Zip::from(x_t).and(c).fold(0.0, |acc, &x, &v| {
                    let d = x - a * v;
                    acc + d * d
                });
                -d2 / denom
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = logs
            .iter()
            .map(|&l| if l - max < FLUSH_LOG_WEIGHT { 0.0 } else { (l - max).exp() })
            .collect();
        let total: f64 = w.iter().sum();
        for v in &mut w {
            *v /= total;
        }
        Ok(w)
    }

    /// Exact `E[x0 | x_t]` under the uniform template mixture.
    pub fn analytic_denoise(&self, x_t: &Array2<f64>, t: usize, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
        let w = self.posterior_weights(x_t, t, schedule)?;
        let mut out = Array2::zeros(self.shape());
        for (c, &wk) in self.templates.iter().zip(&w) {
            if wk > 0.0 {
                out.scaled_add(wk, c);
            }
        }
        Ok(out)
    }
}

impl Denoiser for TemplatePrior {
    fn denoise(&mut self, x_t: &Array2<f64>, t: usize, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
        self.analytic_denoise(x_t, t, schedule)
    }
}

impl Denoiser for &TemplatePrior {
    fn denoise(&mut self, x_t: &Array2<f64>, t: usize, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
        self.analytic_denoise(x_t, t, schedule)
    }
}

/// Free-function form of [`TemplatePrior::analytic_denoise`].
pub fn analytic_denoise(
    prior: &TemplatePrior,
    x_t: &Array2<f64>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    prior.analytic_denoise(x_t, t, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomography::MU_WATER;

    #[test]
    fn normalization_round_trip() {
        let n = Normalization::default();
        assert_eq!(n.mu_to_unit(0.0, MU_WATER), -1.0);
        assert!((n.mu_to_unit(hu_to_mu(3000.0, MU_WATER), MU_WATER) - 1.0).abs() < 1e-12);
        for v in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert!((n.mu_to_unit(n.unit_to_mu(v, MU_WATER), MU_WATER) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_template_is_returned() {
        let c = Array2::from_shape_fn((3, 3), |(i, j)| (i * 3 + j) as f64 / 9.0 - 0.5);
        let p = TemplatePrior::new(vec![c.clone()]).unwrap();
        let s = NoiseSchedule::default();
        let x = Array2::from_elem((3, 3), 17.0);
        assert_eq!(p.analytic_denoise(&x, 500, &s).unwrap(), c);
    }

    #[test]
    fn mismatched_templates_rejected() {
        let err = TemplatePrior::new(vec![Array2::zeros((2, 2)), Array2::zeros((2, 3))]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(matches!(TemplatePrior::new(vec![]), Err(Error::Config(_))));
    }
}
