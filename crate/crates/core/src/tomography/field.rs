use ndarray::Array2;

use crate::error::{ensure_shape, Error, Result};

use super::Geometry;

/// Linear attenuation of water per unit length at the reference energy.
pub const MU_WATER: f64 = 0.0192;

/// Converts Hounsfield units to linear attenuation.
pub fn hu_to_mu(hu: f64, mu_water: f64) -> f64 {
    mu_water * (1.0 + hu / 1000.0)
}

/// Converts linear attenuation to Hounsfield units.
pub fn mu_to_hu(mu: f64, mu_water: f64) -> f64 {
    1000.0 * (mu - mu_water) / mu_water
}

pub(crate) fn check_mu_water(mu_water: f64) -> Result<()> {
    if !(mu_water > 0.0) || !mu_water.is_finite() {
        return Err(Error::Config(format!("mu_water must be positive, got {mu_water}")));
    }
    Ok(())
}

fn check_finite(what: &str, values: &Array2<f64>) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Contract(format!("{what} contains non-finite values")))
    }
}

/// A square or rectangular image in linear attenuation units.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    values: Array2<f64>,
    mu_water: f64,
}

impl Image {
    pub fn new(values: Array2<f64>, mu_water: f64) -> Result<Self> {
        check_mu_water(mu_water)?;
        check_finite("image", &values)?;
        Ok(Image { values, mu_water })
    }

    pub fn zeros(size: usize, mu_water: f64) -> Self {
        Image {
            values: Array2::zeros((size, size)),
            mu_water,
        }
    }

    /// Builds an image from Hounsfield values.
    pub fn from_hu(hu: &Array2<f64>, mu_water: f64) -> Result<Self> {
        check_mu_water(mu_water)?;
        Image::new(hu.mapv(|h| hu_to_mu(h, mu_water)), mu_water)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn mu_water(&self) -> f64 {
        self.mu_water
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn to_hu(&self) -> Array2<f64> {
        self.values.mapv(|m| mu_to_hu(m, self.mu_water))
    }

    /// Returns a copy with the same HU reference and new values.
    pub fn with_values(&self, values: Array2<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Image {
            values,
            mu_water: self.mu_water,
        }
    }

    pub fn check_geometry(&self, geom: &Geometry) -> Result<()> {
        ensure_shape("image", self.shape(), geom.image_shape())
    }
}

/// Line integrals indexed by (view, bin).
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    values: Array2<f64>,
}

impl Sinogram {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_finite("sinogram", &values)?;
        Ok(Sinogram { values })
    }

    pub fn zeros(geom: &Geometry) -> Self {
        Sinogram {
            values: Array2::zeros(geom.sinogram_shape()),
        }
    }

    pub(crate) fn from_raw(values: Array2<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Sinogram { values }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn check_geometry(&self, geom: &Geometry) -> Result<()> {
        ensure_shape("sinogram", self.shape(), geom.sinogram_shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hu_reference_points() {
        assert_eq!(hu_to_mu(0.0, MU_WATER), MU_WATER);
        assert_eq!(hu_to_mu(-1000.0, MU_WATER), 0.0);
        for h in [-1000.0, 0.0, 2500.0] {
            assert_eq!(mu_to_hu(hu_to_mu(h, MU_WATER), MU_WATER), h);
        }
    }

    #[test]
    fn rejects_bad_reference_and_nan() {
        assert!(matches!(Image::new(Array2::zeros((2, 2)), 0.0), Err(Error::Config(_))));
        assert!(Image::new(Array2::zeros((2, 2)), -1.0).is_err());
        let mut v = Array2::zeros((2, 2));
        v[[0, 1]] = f64::NAN;
        assert!(matches!(Image::new(v.clone(), MU_WATER), Err(Error::Contract(_))));
        assert!(Sinogram::new(v).is_err());
    }
}
