use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detector arrangement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamMode {
    Parallel,
    /// Fan beam with detector bins evenly spaced in angle.
    FanEquiangular,
}

/// Discrete 2-D CT acquisition geometry.
///
/// Pixel `(row, col)` has its center at `((col - c) * pixel_spacing, (row - c) * pixel_spacing)`
/// with `c = (image_size - 1) / 2`. For parallel beams `detector_spacing` is a length; for
/// fan beams it is the angular increment between bins in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub beam_mode: BeamMode,
    pub n_views: usize,
    pub n_bins: usize,
    pub angle_start: f64,
    pub angle_end: f64,
    /// Source-to-isocenter distance; only used by fan beams.
    pub source_to_center: f64,
    pub detector_spacing: f64,
    pub image_size: usize,
    pub pixel_spacing: f64,
    /// Radius of the reconstruction circle in pixels.
    pub recon_circle_radius: f64,
}

/// Detector coverage relative to the reconstruction circle diameter.
const DETECTOR_MARGIN: f64 = 1.05;

impl Geometry {
    /// Parallel-beam geometry over a full turn with detector covering the reconstruction
    /// circle plus a 5% margin.
    pub fn parallel(image_size: usize, n_views: usize, n_bins: usize) -> Self {
        let pixel_spacing = 1.0;
        let radius = image_size as f64 / 2.0;
        let detector_spacing = 2.0 * DETECTOR_MARGIN * radius * pixel_spacing / n_bins as f64;
        Geometry {
            beam_mode: BeamMode::Parallel,
            n_views,
            n_bins,
            angle_start: 0.0,
            angle_end: 2.0 * PI,
            source_to_center: 0.0,
            detector_spacing,
            image_size,
            pixel_spacing,
            recon_circle_radius: radius,
        }
    }

    /// Equiangular fan-beam geometry over a full turn. The source sits at three image
    /// half-widths from the isocenter; the fan covers the reconstruction circle plus 5%.
    pub fn fan(image_size: usize, n_views: usize, n_bins: usize) -> Self {
        let pixel_spacing = 1.0;
        let radius = image_size as f64 / 2.0;
        let source_to_center = 3.0 * radius * pixel_spacing;
        let half_fan = (radius * pixel_spacing / source_to_center).asin();
        let detector_spacing = 2.0 * DETECTOR_MARGIN * half_fan / n_bins as f64;
        Geometry {
            beam_mode: BeamMode::FanEquiangular,
            n_views,
            n_bins,
            angle_start: 0.0,
            angle_end: 2.0 * PI,
            source_to_center,
            detector_spacing,
            image_size,
            pixel_spacing,
            recon_circle_radius: radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("invalid geometry: {msg}")));
        if self.n_views < 1 || self.n_bins < 1 {
            return fail(format!(
                "need n_views >= 1 and n_bins >= 1 (got {} x {})",
                self.n_views, self.n_bins
            ));
        }
        if self.image_size < 2 {
            return fail(format!("image_size must be >= 2 (got {})", self.image_size));
        }
        if !(self.angle_end > self.angle_start) || !self.angle_start.is_finite() || !self.angle_end.is_finite() {
            return fail("angle_end must exceed angle_start".into());
        }
        if !(self.pixel_spacing > 0.0) || !(self.detector_spacing > 0.0) {
            return fail("pixel_spacing and detector_spacing must be positive".into());
        }
        if !(self.recon_circle_radius > 0.0) {
            return fail("recon_circle_radius must be positive".into());
        }
        if self.beam_mode == BeamMode::FanEquiangular {
            let min_dist = self.image_size as f64 * self.pixel_spacing / 2f64.sqrt();
            if !(self.source_to_center > min_dist) {
                return fail(format!(
                    "fan source distance {} must exceed {min_dist} (source inside the image)",
                    self.source_to_center
                ));
            }
            let half_span = self.detector_spacing * self.n_bins as f64 / 2.0;
            if half_span >= PI / 2.0 {
                return fail("fan angle must be below 180 degrees".into());
            }
        }
        Ok(())
    }

    pub fn sinogram_shape(&self) -> (usize, usize) {
        (self.n_views, self.n_bins)
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.image_size, self.image_size)
    }

    pub fn angular_step(&self) -> f64 {
        (self.angle_end - self.angle_start) / self.n_views as f64
    }

    pub fn view_angle(&self, view: usize) -> f64 {
        self.angle_start + view as f64 * self.angular_step()
    }

    /// Detector coordinate (length or angle) of a fractional bin position.
    pub fn bin_coordinate(&self, bin: f64) -> f64 {
        (bin - (self.n_bins as f64 - 1.0) / 2.0) * self.detector_spacing
    }

    pub(crate) fn pixel_center_offset(&self) -> f64 {
        (self.image_size as f64 - 1.0) / 2.0
    }

    /// Whether pixel `(row, col)` lies inside the reconstruction circle.
    pub fn in_recon_circle(&self, row: usize, col: usize) -> bool {
        let c = self.pixel_center_offset();
        let dx = col as f64 - c;
        let dy = row as f64 - c;
        dx * dx + dy * dy <= self.recon_circle_radius * self.recon_circle_radius
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Geometry::parallel(128, 160, 161).validate().unwrap();
        Geometry::fan(64, 96, 97).validate().unwrap();
        Geometry::fan(416, 640, 641).validate().unwrap();
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut g = Geometry::fan(64, 96, 97);
        g.source_to_center = 40.0;
        assert!(matches!(g.validate(), Err(Error::Config(_))));

        let mut g = Geometry::parallel(64, 96, 97);
        g.angle_end = g.angle_start;
        assert!(g.validate().is_err());

        let g = Geometry::parallel(1, 4, 4);
        assert!(g.validate().is_err());

        let g = Geometry::parallel(8, 0, 4);
        assert!(g.validate().is_err());
    }

    #[test]
    fn fan_covers_recon_circle() {
        let g = Geometry::fan(64, 96, 97);
        let half_fan = g.bin_coordinate(g.n_bins as f64 - 0.5);
        let needed = (g.recon_circle_radius / g.source_to_center).asin();
        assert!(half_fan > needed * 1.04);
    }

    #[test]
    fn views_evenly_spaced_half_open() {
        let g = Geometry::parallel(16, 8, 9);
        assert_eq!(g.view_angle(0), 0.0);
        assert!((g.view_angle(7) - 7.0 * PI / 4.0).abs() < 1e-15);
        assert!(g.view_angle(7) < g.angle_end);
    }
}
