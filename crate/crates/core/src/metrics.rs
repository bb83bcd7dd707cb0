//! Image quality metrics on a clipped HU window and metal-size grouped summaries.

use ndarray::{s, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::tomography::{mu_to_hu, Image};

const SSIM_SIGMA: f64 = 1.5;
const SSIM_RADIUS: usize = 5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// HU interval that images are clipped to and rescaled onto [0, 1] before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuWindow {
    pub lo: f64,
    pub hi: f64,
}

impl Default for HuWindow {
    fn default() -> Self {
        HuWindow { lo: -1000.0, hi: 4208.0 }
    }
}

impl HuWindow {
    pub fn validate(&self) -> Result<()> {
        if !(self.hi > self.lo) {
            return Err(Error::Config(format!("empty HU window [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    /// Clipped, rescaled copy of `img`.
    pub fn apply(&self, img: &Image) -> Array2<f64> {
        let mw = img.mu_water();
        let w = self.hi - self.lo;
        img.values().mapv(|m| (mu_to_hu(m, mw).clamp(self.lo, self.hi) - self.lo) / w)
    }
}

fn check_pair(x: &Image, reference: &Image, exclude: Option<&Array2<bool>>) -> Result<()> {
    ensure_shape("image", x.shape(), reference.shape())?;
    if let Some(m) = exclude {
        ensure_shape("exclusion mask", m.dim(), reference.shape())?;
    }
    Ok(())
}

/// PSNR in dB of windowed images; `f64::INFINITY` when they agree exactly.
pub fn psnr(x: &Image, reference: &Image, window: &HuWindow) -> Result<f64> {
    psnr_masked(x, reference, window, None)
}

/// PSNR over the pixels not set in `exclude`.
pub fn psnr_masked(x: &Image, reference: &Image, window: &HuWindow, exclude: Option<&Array2<bool>>) -> Result<f64> {
    window.validate()?;
    check_pair(x, reference, exclude)?;
    let a = window.apply(x);
    let b = window.apply(reference);
    psnr_unit(&a, &b, exclude)
}

/// PSNR of arrays already on a unit dynamic range.
pub fn psnr_unit(a: &Array2<f64>, b: &Array2<f64>, exclude: Option<&Array2<bool>>) -> Result<f64> {
    ensure_shape("image", a.dim(), b.dim())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((idx, &u), &v) in a.indexed_iter().zip(b) {
        if exclude.is_some_and(|m| m[idx]) {
            continue;
        }
        sum += (u - v) * (u - v);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Data("no pixels left to score".into()));
    }
    let mse = sum / count as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn gaussian_taps() -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Separable Gaussian filter evaluated only where the window fits inside the image.
fn filter_valid(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = taps.len();
    let rows: Array2<f64> = Array2::from_shape_fn((h, w - k + 1), |(i, j)| taps.iter().enumerate().map(|(t, c)| c * img[[i, j + t]]).sum());
    Array2::from_shape_fn((h - k + 1, w - k + 1), |(i, j)| taps.iter().enumerate().map(|(t, c)| c * rows[[i + t, j]]).sum())
}

/// Mean SSIM of windowed images (Gaussian window sigma 1.5 over 11x11, K1 = 0.01,
/// K2 = 0.03), averaged over positions where the window lies inside the image.
pub fn ssim(x: &Image, reference: &Image, window: &HuWindow) -> Result<f64> {
    ssim_masked(x, reference, window, None)
}

/// SSIM averaged over window centres not set in `exclude`.
pub fn ssim_masked(x: &Image, reference: &Image, window: &HuWindow, exclude: Option<&Array2<bool>>) -> Result<f64> {
    window.validate()?;
    check_pair(x, reference, exclude)?;
    ssim_unit(&window.apply(x), &window.apply(reference), exclude)
}

/// SSIM of arrays with unit dynamic range.
pub fn ssim_unit(a: &Array2<f64>, b: &Array2<f64>, exclude: Option<&Array2<bool>>) -> Result<f64> {
    ensure_shape("image", a.dim(), b.dim())?;
    let k = 2 * SSIM_RADIUS + 1;
    let (h, w) = a.dim();
    if h < k || w < k {
        return Err(Error::Contract(format!("SSIM needs at least {k}x{k} pixels, got {h}x{w}")));
    }
    if a == b {
        return Ok(1.0);
    }
    let taps = gaussian_taps();
    let mu_a = filter_valid(a, &taps);
    let mu_b = filter_valid(b, &taps);
    let aa = filter_valid(&(a * a), &taps);
    let bb = filter_valid(&(b * b), &taps);
    let ab = filter_valid(&(a * b), &taps);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let map = Zip::from(&mu_a).and(&mu_b).and(&aa).and(&bb).and(&ab).map_collect(|&ma, &mb, &aa, &bb, &ab| {
        let va = aa - ma * ma;
        let vb = bb - mb * mb;
        let cov = ab - ma * mb;
        ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
    });
    let r = SSIM_RADIUS;
    let keep = exclude.map(|m| m.slice(s![r..h - r, r..w - r]).to_owned());
    let mut sum = 0.0;
    let mut count = 0usize;
    for (idx, &v) in map.indexed_iter() {
        if keep.as_ref().is_some_and(|m| m[idx]) {
            continue;
        }
        sum += v;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Data("no pixels left to score".into()));
    }
    Ok(sum / count as f64)
}

/// JSON has no NaN or infinity; serde_json writes them as `null`, read back as NaN.
fn f64_or_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// One scored reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub case_id: String,
    pub method: String,
    #[serde(deserialize_with = "f64_or_nan")]
    pub psnr: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub ssim: f64,
    pub metal_area_px: Option<usize>,
    pub group: Option<usize>,
}

/// Metal-size groups, largest first: group `g` holds areas `>= thresholds[g]` that are
/// below every earlier threshold; areas under the last threshold form the final group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupThresholds(pub Vec<usize>);

impl GroupThresholds {
    /// Five groups for the ten reference implant sizes.
    pub fn reference() -> Self {
        GroupThresholds(vec![1000, 600, 200, 80])
    }

    /// Five groups for the desk-scale implant ladder.
    pub fn desk() -> Self {
        GroupThresholds(vec![100, 50, 20, 8])
    }

    pub fn group_count(&self) -> usize {
        self.0.len() + 1
    }

    pub fn group_of(&self, area: usize) -> usize {
        self.0.iter().position(|&th| area >= th).unwrap_or(self.0.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config("group thresholds must be strictly decreasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    #[serde(deserialize_with = "f64_or_nan")]
    pub psnr: f64,
    #[serde(deserialize_with = "f64_or_nan")]
    pub ssim: f64,
}

impl Summary {
    fn of<'a>(records: impl Iterator<Item = &'a ScoreRecord>) -> Self {
        let (mut count, mut p, mut s) = (0usize, 0.0, 0.0);
        for r in records {
            count += 1;
            p += r.psnr;
            s += r.ssim;
        }
        if count == 0 {
            Summary { count, psnr: f64::NAN, ssim: f64::NAN }
        } else {
            Summary { count, psnr: p / count as f64, ssim: s / count as f64 }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub groups: Vec<Summary>,
    pub overall: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub thresholds: GroupThresholds,
    pub methods: Vec<MethodReport>,
}

impl GroupReport {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Per-group and overall means for each method, in first-appearance order of methods.
/// Overall means are taken over records, not over group means. Records without a metal
/// area are skipped with a warning.
pub fn group_report(records: &[ScoreRecord], thresholds: &GroupThresholds) -> Result<GroupReport> {
    thresholds.validate()?;
    if records.is_empty() {
        return Err(Error::Data("no score records".into()));
    }
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    let missing = records.iter().filter(|r| r.metal_area_px.is_none()).count();
    if missing > 0 {
        log::warn!("{missing} score records without metal area excluded from the report");
    }
    let methods = order
        .iter()
        .map(|&name| {
            let mine: Vec<&ScoreRecord> =
                records.iter().filter(|r| r.method == name && r.metal_area_px.is_some()).collect();
            let groups = (0..thresholds.group_count())
                .map(|g| Summary::of(mine.iter().copied().filter(|r| thresholds.group_of(r.metal_area_px.unwrap_or(0)) == g)))
                .collect();
            MethodReport { method: name.to_string(), groups, overall: Summary::of(mine.iter().copied()) }
        })
        .collect();
    Ok(GroupReport { thresholds: thresholds.clone(), methods })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_grouping() {
        let g = GroupThresholds::reference();
        let groups: Vec<usize> = crate::phantom::REFERENCE_METAL_AREAS.iter().map(|&a| g.group_of(a)).collect();
        assert_eq!(groups, vec![0, 1, 1, 2, 2, 3, 3, 3, 4, 4]);
        let d = GroupThresholds::desk();
        let groups: Vec<usize> = [150, 70, 30, 12, 5].iter().map(|&a| d.group_of(a)).collect();
        assert_eq!(groups, vec![0, 1, 2, 3, 4]);
    }
}
