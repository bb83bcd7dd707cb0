use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{BeamMode, Geometry};

/// Band-limited Ram-Lak kernel sampled at integer offset `n` for detector spacing `spacing`.
pub fn ramp_kernel(n: i64, spacing: f64) -> f64 {
    if n == 0 {
        1.0 / (4.0 * spacing * spacing)
    } else if n % 2 == 0 {
        0.0
    } else {
        let nf = n as f64;
        -1.0 / (nf * nf * PI * PI * spacing * spacing)
    }
}

/// Ramp kernel for equiangular fan data: `(n a / sin(n a))^2 h(n a)`.
pub fn fan_ramp_kernel(n: i64, angular_spacing: f64) -> f64 {
    let h = ramp_kernel(n, angular_spacing);
    if n == 0 {
        return h;
    }
    let g = n as f64 * angular_spacing;
    let r = g / g.sin();
    r * r * h
}

/// Precomputed frequency response for filtering sinogram rows.
///
/// Rows are extended to a power-of-two length by repeating their edge values, so a
/// constant row stays constant and is annihilated by the zero DC response.
pub struct RampFilter {
    n_bins: usize,
    padded_len: usize,
    spacing: f64,
    response: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RampFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RampFilter")
            .field("n_bins", &self.n_bins)
            .field("padded_len", &self.padded_len)
            .finish()
    }
}

impl RampFilter {
    pub fn new(geom: &Geometry, hann: bool) -> Self {
        let n_bins = geom.n_bins;
        let padded_len = (2 * n_bins).next_power_of_two().max(2);
        let spacing = geom.detector_spacing;
        let kernel = |n: i64| match geom.beam_mode {
            BeamMode::Parallel => ramp_kernel(n, spacing),
            BeamMode::FanEquiangular => fan_ramp_kernel(n, spacing),
        };

        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(padded_len);
        let inverse = planner.plan_fft_inverse(padded_len);

        let half = padded_len / 2;
        let mut buf: Vec<Complex<f64>> = (0..padded_len)
            .map(|k| {
                let n = if k < half { k as i64 } else { k as i64 - padded_len as i64 };
                Complex::new(kernel(n), 0.0)
            })
            .collect();
        forward.process(&mut buf);
        let mut response: Vec<f64> = buf.iter().map(|c| c.re).collect();
        response[0] = 0.0;
        if hann {
            for (k, r) in response.iter_mut().enumerate() {
                let f = k.min(padded_len - k) as f64 / padded_len as f64;
                *r *= 0.5 * (1.0 + (2.0 * PI * f).cos());
            }
        }

        RampFilter {
            n_bins,
            padded_len,
            spacing,
            response,
            forward,
            inverse,
        }
    }

    /// Filtered row on the full extended grid (length `padded_len`).
    #[cfg(test)]
    pub(crate) fn filter_row_padded(&self, row: ArrayView1<f64>) -> Vec<f64> {
        let n = self.n_bins;
        let p = self.padded_len;
        let first = row[0];
        let last = row[n - 1];
        let right = (p - n).div_ceil(2);
        let mut buf: Vec<Complex<f64>> = (0..p)
            .map(|k| {
                let v = if k < n {
                    row[k]
                } else if k < n + right {
                    last
                } else {
                    first
                };
                Complex::new(v, 0.0)
            })
            .collect();
        self.forward.process(&mut buf);
        for (c, r) in buf.iter_mut().zip(&self.response) {
            *c *= *r;
        }
        self.inverse.process(&mut buf);
        let scale = self.spacing / p as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    fn extend_into(&self, row: ArrayView1<f64>, buf: &mut [Complex<f64>], imag: bool) {
        let n = self.n_bins;
        let right = n + (self.padded_len - n).div_ceil(2);
        let (first, last) = (row[0], row[n - 1]);
        for (k, c) in buf.iter_mut().enumerate() {
            let v = if k < n {
                row[k]
            } else if k < right {
                last
            } else {
                first
            };
            if imag {
                c.im = v;
            } else {
                *c = Complex::new(v, 0.0);
            }
        }
    }

    /// Filters rows two at a time: the response is real and even, so the real and
    /// imaginary parts of one complex transform stay independent.
    pub(crate) fn apply(&self, sino: &Array2<f64>) -> Array2<f64> {
        let p = self.padded_len;
        let n = self.n_bins;
        let scale = self.spacing / p as f64;
        let mut out = Array2::zeros(sino.dim());
        let mut buf = vec![Complex::new(0.0, 0.0); p];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.forward.get_inplace_scratch_len().max(self.inverse.get_inplace_scratch_len())];
        let rows = sino.nrows();
        let mut r = 0;
        while r < rows {
            let pair = r + 1 < rows;
            self.extend_into(sino.row(r), &mut buf, false);
            if pair {
                self.extend_into(sino.row(r + 1), &mut buf, true);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (c, resp) in buf.iter_mut().zip(&self.response) {
                *c *= *resp;
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            for (k, c) in buf[..n].iter().enumerate() {
                out[[r, k]] = c.re * scale;
                if pair {
                    out[[r + 1, k]] = c.im * scale;
                }
            }
            r += 2;
        }
        out
    }

    pub fn padded_len(&self) -> usize {
        self.padded_len
    }
}
