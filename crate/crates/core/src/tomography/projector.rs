use std::f64::consts::PI;

use ndarray::Array2;

use super::filter::RampFilter;
use super::{BeamMode, Geometry, Image, Sinogram, MU_WATER};
use crate::error::Result;

/// Largest (views x pixels) count for which backprojection coordinates are tabulated.
const MAX_TABLE_ENTRIES: usize = 1 << 22;
/// Largest number of stored (pixel, weight) pairs for the forward system matrix.
const MAX_RAY_ENTRIES: usize = 1 << 22;

/// Two-tap linear interpolation into a row padded with one zero on each side.
#[derive(Debug, Clone, Copy)]
struct Taps {
    base: u32,
    w0: f64,
    w1: f64,
}

impl Taps {
    fn new((pos, w): (f64, f64), n_bins: usize) -> Self {
        let p0 = pos.floor();
        let i0 = p0 as isize;
        if i0 < -1 || i0 >= n_bins as isize {
            return Taps { base: 0, w0: 0.0, w1: 0.0 };
        }
        let t = pos - p0;
        Taps {
            base: (i0 + 1) as u32,
            w0: w * (1.0 - t),
            w1: w * t,
        }
    }
}

/// Joseph system matrix in compressed-row form, one row per (view, bin).
#[derive(Debug)]
struct RayTable {
    offsets: Vec<usize>,
    index: Vec<u32>,
    weight: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Ray {
    origin: [f64; 2],
    dir: [f64; 2],
}

/// Forward projector, its adjoint, and filtered back-projection for one geometry.
///
/// Forward projection uses Joseph's method: the ray is sampled once per row or column
/// along its dominant axis and the image is linearly interpolated across the other axis.
/// [`Projector::back_project`] is the exact transpose of that operator. Filtered
/// back-projection uses a separate pixel-driven backprojector with the analytic fan-beam
/// distance weighting.
#[derive(Debug)]
pub struct Projector {
    geom: Geometry,
    mu_water: f64,
    filter: RampFilter,
    /// `D cos(gamma)` per bin for fan beams.
    fan_preweight: Vec<f64>,
    circle_pixels: Vec<usize>,
    /// Per view, per reconstruction-circle pixel: interpolation taps into a zero-padded row.
    table: Option<Vec<Taps>>,
    rays: Option<RayTable>,
}

impl Projector {
    pub fn new(geom: &Geometry) -> Result<Self> {
        Self::with_options(geom, MU_WATER, false)
    }

    pub fn with_options(geom: &Geometry, mu_water: f64, hann: bool) -> Result<Self> {
        geom.validate()?;
        super::field::check_mu_water(mu_water)?;
        let n = geom.image_size;
        let circle_pixels: Vec<usize> = (0..n * n)
            .filter(|&i| geom.in_recon_circle(i / n, i % n))
            .collect();
        let fan_preweight = match geom.beam_mode {
            BeamMode::Parallel => vec![1.0; geom.n_bins],
            BeamMode::FanEquiangular => (0..geom.n_bins)
                .map(|j| geom.source_to_center * geom.bin_coordinate(j as f64).cos())
                .collect(),
        };
        let mut p = Projector {
            geom: geom.clone(),
            mu_water,
            filter: RampFilter::new(geom, hann),
            fan_preweight,
            circle_pixels,
            table: None,
            rays: None,
        };
        if geom.n_views * p.circle_pixels.len() <= MAX_TABLE_ENTRIES {
            let mut table = Vec::with_capacity(geom.n_views * p.circle_pixels.len());
            for view in 0..geom.n_views {
                for &idx in &p.circle_pixels {
                    table.push(Taps::new(p.pixel_bin(view, idx), geom.n_bins));
                }
            }
            p.table = Some(table);
        }
        if geom.n_views * geom.n_bins * 2 * n <= MAX_RAY_ENTRIES {
            p.rays = Some(p.build_rays());
        }
        Ok(p)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn mu_water(&self) -> f64 {
        self.mu_water
    }

    fn ray(&self, view: usize, bin: f64) -> Ray {
        let g = &self.geom;
        let beta = g.view_angle(view);
        let coord = g.bin_coordinate(bin);
        match g.beam_mode {
            BeamMode::Parallel => {
                let (s, c) = beta.sin_cos();
                Ray {
                    origin: [coord * c, coord * s],
                    dir: [-s, c],
                }
            }
            BeamMode::FanEquiangular => {
                let (s, c) = beta.sin_cos();
                let d = g.source_to_center;
                let (gs, gc) = (beta + coord).sin_cos();
                Ray {
                    origin: [d * c, d * s],
                    dir: [-gc, -gs],
                }
            }
        }
    }

    fn build_rays(&self) -> RayTable {
        let g = &self.geom;
        let rows = g.n_views * g.n_bins;
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut index = Vec::new();
        let mut weight = Vec::new();
        offsets.push(0);
        for view in 0..g.n_views {
            for bin in 0..g.n_bins {
                self.walk(self.ray(view, bin as f64), |i, w| {
                    index.push(i as u32);
                    weight.push(w);
                });
                offsets.push(index.len());
            }
        }
        RayTable {
            offsets,
            index,
            weight,
        }
    }

    /// Visits every (pixel, weight) pair of Joseph's interpolation along one ray.
    fn walk(&self, ray: Ray, mut visit: impl FnMut(usize, f64)) {
        let n = self.geom.image_size;
        let ps = self.geom.pixel_spacing;
        let cen = self.geom.pixel_center_offset();
        let [ox, oy] = ray.origin;
        let [dx, dy] = ray.dir;
        // Drive along x when the ray is closer to horizontal, otherwise along y.
        let (major_o, major_d, minor_o, minor_d, x_major) = if dx.abs() >= dy.abs() {
            (ox, dx, oy, dy, true)
        } else {
            (oy, dy, ox, dx, false)
        };
        let step = ps / major_d.abs();
        let slope = minor_d / major_d;
        let ni = n as isize;
        for k in 0..n {
            let major = (k as f64 - cen) * ps;
            let minor = minor_o + (major - major_o) * slope;
            let f = minor / ps + cen;
            let f0 = f.floor();
            let i0 = f0 as isize;
            if i0 < -1 || i0 >= ni {
                continue;
            }
            let w1 = f - f0;
            let index = |m: isize| -> usize {
                if x_major {
                    m as usize * n + k
                } else {
                    k * n + m as usize
                }
            };
            if i0 >= 0 {
                visit(index(i0), (1.0 - w1) * step);
            }
            if i0 + 1 < ni {
                visit(index(i0 + 1), w1 * step);
            }
        }
    }

    /// Line integrals of `values` for sub-rays offset by `offset` bins from each bin center.
    pub fn project_values(&self, values: &Array2<f64>, offset: f64) -> Array2<f64> {
        let g = &self.geom;
        let flat = values.as_slice().expect("standard layout");
        let mut out = Array2::zeros(g.sinogram_shape());
        if let (Some(rays), true) = (&self.rays, offset == 0.0) {
            let dst = out.as_slice_mut().expect("standard layout");
            for (r, o) in dst.iter_mut().enumerate() {
                let (a, b) = (rays.offsets[r], rays.offsets[r + 1]);
                let mut acc = 0.0;
                for (&i, &w) in rays.index[a..b].iter().zip(&rays.weight[a..b]) {
                    acc += w * flat[i as usize];
                }
                *o = acc;
            }
            return out;
        }
        for view in 0..g.n_views {
            for bin in 0..g.n_bins {
                let mut acc = 0.0;
                self.walk(self.ray(view, bin as f64 + offset), |i, w| acc += w * flat[i]);
                out[[view, bin]] = acc;
            }
        }
        out
    }

    pub fn forward(&self, img: &Image) -> Result<Sinogram> {
        img.check_geometry(&self.geom)?;
        let values = img.values().as_standard_layout().into_owned();
        Ok(Sinogram::from_raw(self.project_values(&values, 0.0)))
    }

    /// Exact adjoint of [`Projector::forward`].
    pub fn back_project(&self, sino: &Sinogram) -> Result<Image> {
        sino.check_geometry(&self.geom)?;
        let g = &self.geom;
        let n = g.image_size;
        let mut flat = vec![0.0; n * n];
        if let Some(rays) = &self.rays {
            let src = sino.values().as_standard_layout();
            for (r, &v) in src.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let (a, b) = (rays.offsets[r], rays.offsets[r + 1]);
                for (&i, &w) in rays.index[a..b].iter().zip(&rays.weight[a..b]) {
                    flat[i as usize] += w * v;
                }
            }
            let values = Array2::from_shape_vec((n, n), flat).expect("square image");
            return Ok(Image::new(values, self.mu_water).expect("finite backprojection"));
        }
        for view in 0..g.n_views {
            for bin in 0..g.n_bins {
                let v = sino.values()[[view, bin]];
                if v == 0.0 {
                    continue;
                }
                self.walk(self.ray(view, bin as f64), |i, w| flat[i] += w * v);
            }
        }
        let values = Array2::from_shape_vec((n, n), flat).expect("square image");
        Ok(Image::new(values, self.mu_water).expect("finite backprojection"))
    }

    /// Ramp-filters every view; fan data must already carry the cosine pre-weight.
    pub fn ramp_filter(&self, sino: &Sinogram) -> Result<Sinogram> {
        sino.check_geometry(&self.geom)?;
        Ok(Sinogram::from_raw(self.filter.apply(sino.values())))
    }

    fn pixel_bin(&self, view: usize, idx: usize) -> (f64, f64) {
        let g = &self.geom;
        let n = g.image_size;
        let cen = g.pixel_center_offset();
        let x = (idx % n) as f64 - cen;
        let y = (idx / n) as f64 - cen;
        let (x, y) = (x * g.pixel_spacing, y * g.pixel_spacing);
        let beta = g.view_angle(view);
        let (s, c) = beta.sin_cos();
        let mid = (g.n_bins as f64 - 1.0) / 2.0;
        match g.beam_mode {
            BeamMode::Parallel => ((x * c + y * s) / g.detector_spacing + mid, 1.0),
            BeamMode::FanEquiangular => {
                let d = g.source_to_center;
                let (vx, vy) = (x - d * c, y - d * s);
                let (ux, uy) = (-c, -s);
                let gamma = (ux * vy - uy * vx).atan2(ux * vx + uy * vy);
                (gamma / g.detector_spacing + mid, 1.0 / (vx * vx + vy * vy))
            }
        }
    }

    /// Pixel-driven weighted backprojection of filtered data, zero outside the circle.
    fn backproject_filtered(&self, filtered: &Array2<f64>) -> Array2<f64> {
        let g = &self.geom;
        let n = g.image_size;
        let scale = PI / (g.angle_end - g.angle_start) * g.angular_step();
        let mut acc = vec![0.0; self.circle_pixels.len()];
        let mut padded = vec![0.0; g.n_bins + 2];
        for view in 0..g.n_views {
            for (d, v) in padded[1..=g.n_bins].iter_mut().zip(filtered.row(view)) {
                *d = *v;
            }
            let deposit = |a: &mut f64, tap: Taps| {
                let b = tap.base as usize;
                *a += tap.w0 * padded[b] + tap.w1 * padded[b + 1];
            };
            match &self.table {
                Some(table) => {
                    let m = self.circle_pixels.len();
                    for (a, &tap) in acc.iter_mut().zip(&table[view * m..(view + 1) * m]) {
                        deposit(a, tap);
                    }
                }
                None => {
                    for (a, &idx) in acc.iter_mut().zip(&self.circle_pixels) {
                        deposit(a, Taps::new(self.pixel_bin(view, idx), g.n_bins));
                    }
                }
            }
        }
        let mut out = vec![0.0; n * n];
        for (&idx, v) in self.circle_pixels.iter().zip(acc) {
            out[idx] = v * scale;
        }
        Array2::from_shape_vec((n, n), out).expect("square image")
    }

    /// Filtered back-projection of raw line-integral values.
    pub fn fbp_values(&self, sino: &Array2<f64>) -> Array2<f64> {
        let weighted;
        let input = if self.geom.beam_mode == BeamMode::FanEquiangular {
            let mut w = sino.to_owned();
            for mut row in w.rows_mut() {
                for (v, pw) in row.iter_mut().zip(&self.fan_preweight) {
                    *v *= pw;
                }
            }
            weighted = w;
            &weighted
        } else {
            sino
        };
        let filtered = self.filter.apply(input);
        self.backproject_filtered(&filtered)
    }

    pub fn fbp(&self, sino: &Sinogram) -> Result<Image> {
        sino.check_geometry(&self.geom)?;
        Ok(Image::new(self.fbp_values(sino.values()), self.mu_water).expect("finite reconstruction"))
    }
}

/// One-shot forward projection. Prefer a shared [`Projector`] in loops.
pub fn forward_project(img: &Image, geom: &Geometry) -> Result<Sinogram> {
    Projector::with_options(geom, img.mu_water(), false)?.forward(img)
}

pub fn back_project(sino: &Sinogram, geom: &Geometry) -> Result<Image> {
    Projector::new(geom)?.back_project(sino)
}

pub fn ramp_filter(sino: &Sinogram, geom: &Geometry) -> Result<Sinogram> {
    sino.check_geometry(geom)?;
    geom.validate()?;
    Ok(Sinogram::from_raw(RampFilter::new(geom, false).apply(sino.values())))
}

pub fn fbp(sino: &Sinogram, geom: &Geometry) -> Result<Image> {
    Projector::new(geom)?.fbp(sino)
}
