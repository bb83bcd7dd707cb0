use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::phantom::TraceMask;
use crate::tomography::{hu_to_mu, mu_to_hu, Image, Projector, Sinogram};

/// Floor applied to the forward-projected prior before normalization.
pub const NMAR_EPSILON: f64 = 1e-3;

/// HU class boundaries of the NMAR prior image and the Gaussian width (pixels) applied
/// to it before forward projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmarThresholds {
    pub air_below_hu: f64,
    pub bone_from_hu: f64,
    pub smoothing_px: f64,
}

impl Default for NmarThresholds {
    fn default() -> Self {
        NmarThresholds { air_below_hu: -500.0, bone_from_hu: 300.0, smoothing_px: 1.0 }
    }
}

/// Separable Gaussian blur with edge replication; `sigma == 0` returns the input.
fn gaussian_blur(values: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return values.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-r..=r).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    let blur_rows = |a: &Array2<f64>| {
        let (h, w) = a.dim();
        Array2::from_shape_fn((h, w), |(i, j)| {
            taps.iter()
                .enumerate()
                .map(|(k, t)| t * a[[i, (j as isize + k as isize - r).clamp(0, w as isize - 1) as usize]])
                .sum()
        })
    };
    let once = blur_rows(values).reversed_axes();
    blur_rows(&once.as_standard_layout().into_owned()).reversed_axes().as_standard_layout().into_owned()
}

/// Fills each maximal run of trace bins in every view by linear interpolation between
/// its unaffected neighbours; runs touching the detector edge copy the nearest value.
/// A view with no unaffected bin is filled with the mean of all unaffected bins.
pub fn li_complete(values: &Array2<f64>, trace: &TraceMask) -> Array2<f64> {
    let mut out = values.clone();
    let n_bins = values.ncols();
    let mut fully_affected = Vec::new();
    for (view, (mut row, mask)) in out.rows_mut().into_iter().zip(trace.mask.rows()).enumerate() {
        if mask.iter().all(|&m| m) {
            fully_affected.push(view);
            continue;
        }
        let mut j = 0;
        while j < n_bins {
            if !mask[j] {
                j += 1;
                continue;
            }
            let start = j;
            while j < n_bins && mask[j] {
                j += 1;
            }
            let left = start.checked_sub(1).map(|i| (i, row[i]));
            let right = (j < n_bins).then(|| (j, row[j]));
            for k in start..j {
                row[k] = match (left, right) {
                    (Some((i0, v0)), Some((i1, v1))) => v0 + (v1 - v0) * (k - i0) as f64 / (i1 - i0) as f64,
                    (Some((_, v0)), None) => v0,
                    (None, Some((_, v1))) => v1,
                    (None, None) => unreachable!("row has an unaffected bin"),
                };
            }
        }
    }
    if !fully_affected.is_empty() {
        let (sum, count) = Zip::from(values)
            .and(&trace.mask)
            .fold((0.0, 0usize), |(s, c), &v, &m| if m { (s, c) } else { (s + v, c + 1) });
        let fill = if count > 0 { sum / count as f64 } else { 0.0 };
        log::warn!("{} fully affected views filled with the unaffected mean {fill}", fully_affected.len());
        for view in fully_affected {
            out.row_mut(view).fill(fill);
        }
    }
    out
}

/// Linear-interpolation MAR: FBP of the trace-interpolated sinogram.
pub fn li_baseline(s0: &Sinogram, trace: &TraceMask, projector: &Projector) -> Result<Image> {
    s0.check_geometry(projector.geometry())?;
    trace.check_geometry(projector.geometry())?;
    projector.fbp(&Sinogram::new(li_complete(s0.values(), trace))?)
}

/// Tissue-classified prior: air to -1000 HU, soft tissue to 0 HU, bone and denser kept.
pub fn nmar_prior(s0: &Sinogram, trace: &TraceMask, projector: &Projector, th: &NmarThresholds) -> Result<Image> {
    let li = li_baseline(s0, trace, projector)?;
    let mw = li.mu_water();
    let air = hu_to_mu(-1000.0, mw);
    let values = li.values().mapv(|m| {
        let hu = mu_to_hu(m, mw);
        if hu < th.air_below_hu {
            air
        } else if hu < th.bone_from_hu {
            mw
        } else {
            m
        }
    });
    Image::new(values, mw)
}

/// Normalized metal artifact reduction: interpolate `s0 / FP(prior)` over the trace, then
/// multiply back. Bins outside the trace keep their measured values exactly.
pub fn nmar_baseline(s0: &Sinogram, trace: &TraceMask, projector: &Projector) -> Result<Image> {
    nmar_baseline_with(s0, trace, projector, &NmarThresholds::default())
}

pub fn nmar_baseline_with(s0: &Sinogram, trace: &TraceMask, projector: &Projector, th: &NmarThresholds) -> Result<Image> {
    if !(th.smoothing_px >= 0.0 && th.smoothing_px.is_finite()) {
        return Err(Error::Config(format!("NMAR smoothing must be finite and non-negative, got {}", th.smoothing_px)));
    }
    let prior = nmar_prior(s0, trace, projector, th)?;
    let smoothed = Image::new(gaussian_blur(prior.values(), th.smoothing_px), prior.mu_water())?;
    let fp = projector.forward(&smoothed)?;
    let mut clamped = 0usize;
    let denom = Zip::from(fp.values()).and(&trace.mask).map_collect(|&p, &m| {
        if m && p < NMAR_EPSILON {
            clamped += 1;
        }
        p.max(NMAR_EPSILON)
    });
    if clamped > 0 {
        log::warn!("{clamped} metal-trace bins of the NMAR prior projection clamped at {NMAR_EPSILON}");
    }
    let normalized = s0.values() / &denom;
    let filled = li_complete(&normalized, trace);
    let completed = Zip::from(s0.values())
        .and(&filled)
        .and(&denom)
        .and(&trace.mask)
        .map_collect(|&s, &f, &d, &m| if m { f * d } else { s });
    projector.fbp(&Sinogram::new(completed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn interpolates_runs_and_edges() {
        let v = arr2(&[[1.0, 9.0, 9.0, 4.0, 9.0], [2.0, 9.0, 4.0, 5.0, 6.0]]);
        let m = TraceMask { mask: arr2(&[[false, true, true, false, true], [false, true, false, false, false]]) };
        let out = li_complete(&v, &m);
        assert_eq!(out.row(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0, 4.0]);
        assert_eq!(out.row(1).to_vec(), vec![2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let c = Array2::from_elem((9, 7), 2.5);
        assert!(gaussian_blur(&c, 1.0).iter().all(|v| (v - 2.5).abs() < 1e-12));
        let mut d = Array2::zeros((15, 15));
        d[[7, 7]] = 1.0;
        let b = gaussian_blur(&d, 1.0);
        assert!((b.sum() - 1.0).abs() < 1e-12);
        assert!((b[[6, 7]] - b[[7, 6]]).abs() < 1e-15 && (b[[6, 7]] - b[[8, 7]]).abs() < 1e-15);
        assert_eq!(gaussian_blur(&d, 0.0), d);
    }

    #[test]
    fn fully_affected_row_gets_global_mean() {
        let v = arr2(&[[1.0, 3.0], [7.0, 7.0]]);
        let m = TraceMask { mask: arr2(&[[false, false], [true, true]]) };
        let out = li_complete(&v, &m);
        assert_eq!(out.row(1).to_vec(), vec![2.0, 2.0]);
    }
}
