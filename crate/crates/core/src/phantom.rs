//! Procedural phantoms, metal implants, polychromatic metal-artifact simulation and
//! metal-trace extraction.

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};
use crate::tomography::{hu_to_mu, mu_to_hu, Geometry, Image, Projector, Sinogram};

/// Reconstructed attenuation at or above this value is classified as metal.
pub const METAL_THRESHOLD_HU: f64 = 2500.0;
/// Default implant material.
pub const DEFAULT_METAL_HU: f64 = 3000.0;
/// Forward-projected mask values above this mark a ray as metal-affected.
pub const TRACE_EPSILON: f64 = 1e-6;
/// Pixel areas of the ten implant masks of the reference benchmark, large to small.
pub const REFERENCE_METAL_AREAS: [usize; 10] = [2061, 890, 881, 451, 254, 124, 118, 112, 53, 35];

const SUPERSAMPLE: usize = 4;

/// An ellipse in image-fraction coordinates: the image spans [-0.5, 0.5] on both axes,
/// with `y` increasing with the row index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub rotation: f64,
    pub tissue_hu: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let u = (dx * c + dy * s) / self.semi_x;
        let v = (-dx * s + dy * c) / self.semi_y;
        u * u + v * v <= 1.0
    }

    fn boundary_point(&self, theta: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let u = self.semi_x * theta.cos();
        let v = self.semi_y * theta.sin();
        (self.center_x + u * c - v * s, self.center_y + u * s + v * c)
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.semi_x * self.semi_y
    }
}

/// Ordered ellipse list; later ellipses paint over earlier ones. The first ellipse is the
/// body outline and must enclose every other ellipse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub ellipses: Vec<Ellipse>,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let Some(body) = self.ellipses.first() else {
            return Err(Error::Config("phantom has no ellipses".into()));
        };
        for (i, e) in self.ellipses.iter().enumerate() {
            if !(-1000.0..=3000.0).contains(&e.tissue_hu) {
                return Err(Error::Config(format!(
                    "ellipse {i} HU {} outside [-1000, 3000]",
                    e.tissue_hu
                )));
            }
            if !(e.semi_x > 0.0 && e.semi_y > 0.0) {
                return Err(Error::Config(format!("ellipse {i} has non-positive semi-axes")));
            }
            if i > 0 {
                let outside = (0..64)
                    .map(|k| e.boundary_point(k as f64 * std::f64::consts::TAU / 64.0))
                    .any(|(x, y)| !body.contains(x, y));
                if outside {
                    return Err(Error::Config(format!("ellipse {i} is not enclosed by the body")));
                }
            }
        }
        Ok(())
    }

    /// Abdomen-like cross-section whose organ sizes, positions and densities are jittered
    /// by `seed`.
    pub fn anatomical(seed: u64, family: &PhantomFamily) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = family.jitter;
        let mut uni = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
        let mut ellipses = Vec::new();

        let body_sx = 0.40 * (1.0 + j * uni(-0.08, 0.04));
        let body_sy = 0.30 * (1.0 + j * uni(-0.08, 0.06));
        let body_y = 0.02 + j * uni(-0.01, 0.01);
        let body_rot = j * uni(-0.05, 0.05);
        ellipses.push(Ellipse { center_x: 0.0, center_y: body_y, semi_x: body_sx, semi_y: body_sy, rotation: body_rot, tissue_hu: -90.0 + j * uni(-15.0, 15.0) });
        // Muscle wall and abdominal cavity.
        ellipses.push(Ellipse { center_x: 0.0, center_y: body_y, semi_x: body_sx - 0.035, semi_y: body_sy - 0.03, rotation: body_rot, tissue_hu: 45.0 + j * uni(-10.0, 10.0) });
        ellipses.push(Ellipse { center_x: 0.0, center_y: body_y + 0.005, semi_x: body_sx - 0.06, semi_y: body_sy - 0.055, rotation: body_rot, tissue_hu: 20.0 + j * uni(-10.0, 10.0) });

        let sx = body_sx / 0.40;
        let sy = body_sy / 0.30;
        let organ = |cx: f64, cy: f64, ax: f64, ay: f64, rot: f64, hu: f64, uni: &mut dyn FnMut(f64, f64) -> f64| {
            let scale = 1.0 + j * uni(-0.12, 0.12);
            Ellipse {
                center_x: (cx + j * uni(-0.015, 0.015)) * sx,
                center_y: body_y - 0.02 + (cy + j * uni(-0.015, 0.015)) * sy,
                semi_x: ax * scale * sx,
                semi_y: ay * scale * sy,
                rotation: rot + j * uni(-0.2, 0.2),
                tissue_hu: hu + j * uni(-12.0, 12.0),
            }
        };
        // Liver, stomach, kidneys, aorta, iliac bones, vertebral body and canal.
        ellipses.push(organ(-0.12, -0.07, 0.15, 0.10, 0.35, 60.0, &mut uni));
        ellipses.push(organ(0.17, -0.08, 0.08, 0.06, -0.4, 35.0, &mut uni));
        ellipses.push(organ(-0.13, 0.10, 0.045, 0.065, 0.3, 30.0, &mut uni));
        ellipses.push(organ(0.13, 0.10, 0.045, 0.065, -0.3, 30.0, &mut uni));
        ellipses.push(organ(0.035, 0.05, 0.022, 0.022, 0.0, 160.0, &mut uni));
        ellipses.push(organ(-0.27, 0.10, 0.045, 0.075, 0.25, 550.0, &mut uni));
        ellipses.push(organ(0.27, 0.10, 0.045, 0.075, -0.25, 550.0, &mut uni));
        ellipses.push(organ(0.0, 0.17, 0.055, 0.045, 0.0, 750.0, &mut uni));
        let canal = ellipses.last().copied().expect("vertebra pushed");
        ellipses.push(Ellipse { semi_x: canal.semi_x * 0.35, semi_y: canal.semi_y * 0.35, tissue_hu: 25.0, ..canal });

        if family.lesions {
            // A low-contrast lesion in the liver and a bowel gas pocket.
            let liver = ellipses[3];
            let (a, r) = (uni(0.0, std::f64::consts::TAU), uni(0.0, 0.5));
            ellipses.push(Ellipse {
                center_x: liver.center_x + r * liver.semi_x * a.cos() * 0.6,
                center_y: liver.center_y + r * liver.semi_y * a.sin() * 0.6,
                semi_x: uni(0.015, 0.03),
                semi_y: uni(0.015, 0.03),
                rotation: uni(0.0, 3.0),
                tissue_hu: 60.0 + uni(-40.0, 40.0),
            });
            ellipses.push(Ellipse {
                center_x: uni(-0.05, 0.12),
                center_y: body_y + uni(-0.14, -0.06),
                semi_x: uni(0.012, 0.025),
                semi_y: uni(0.01, 0.02),
                rotation: uni(0.0, 3.0),
                tissue_hu: -900.0,
            });
        }
        PhantomSpec { ellipses, seed }
    }
}

/// Variation controls for [`PhantomSpec::anatomical`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomFamily {
    /// Multiplier on all random perturbations; 0 yields the mean anatomy.
    pub jitter: f64,
    pub lesions: bool,
}

impl Default for PhantomFamily {
    fn default() -> Self {
        PhantomFamily { jitter: 1.0, lesions: true }
    }
}

/// Rasterizes `spec` with 4x4 supersampling; uncovered area is air (-1000 HU).
pub fn generate_phantom(spec: &PhantomSpec, size: usize, mu_water: f64) -> Result<Image> {
    spec.validate()?;
    if size < 2 {
        return Err(Error::Config(format!("phantom size must be >= 2, got {size}")));
    }
    let n = size as f64;
    let cen = (n - 1.0) / 2.0;
    let ss = SUPERSAMPLE as f64;
    let hu = Array2::from_shape_fn((size, size), |(r, c)| {
        let mut acc = 0.0;
        for i in 0..SUPERSAMPLE {
            for k in 0..SUPERSAMPLE {
                let y = (r as f64 - cen + (i as f64 + 0.5) / ss - 0.5) / n;
                let x = (c as f64 - cen + (k as f64 + 0.5) / ss - 0.5) / n;
                let v = spec
                    .ellipses
                    .iter()
                    .rev()
                    .find(|e| e.contains(x, y))
                    .map_or(-1000.0, |e| e.tissue_hu);
                acc += v;
            }
        }
        acc / (ss * ss)
    });
    Image::from_hu(&hu, mu_water)
}

/// Image-shaped implant mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MetalMask {
    pub mask: Array2<bool>,
    pub metal_hu: f64,
}

impl MetalMask {
    pub fn empty(size: usize) -> Self {
        MetalMask { mask: Array2::from_elem((size, size), false), metal_hu: DEFAULT_METAL_HU }
    }

    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    /// Sorensen-Dice overlap with another mask of the same shape.
    pub fn dice(&self, other: &MetalMask) -> f64 {
        let both = Zip::from(&self.mask).and(&other.mask).fold(0usize, |n, &a, &b| n + (a && b) as usize);
        let total = self.area() + other.area();
        if total == 0 {
            1.0
        } else {
            2.0 * both as f64 / total as f64
        }
    }

    /// A compact elliptical blob with exactly `area` pixels: the `area` pixels nearest to
    /// `(center_row, center_col)` in the metric of an ellipse with the given aspect ratio
    /// and rotation.
    pub fn blob(size: usize, center_row: f64, center_col: f64, area: usize, aspect: f64, rotation: f64) -> Result<Self> {
        if area > size * size {
            return Err(Error::Config(format!("metal area {area} exceeds image of {size}x{size}")));
        }
        if !(aspect > 0.0) {
            return Err(Error::Config("metal aspect must be positive".into()));
        }
        let (s, c) = rotation.sin_cos();
        let mut order: Vec<(f64, usize)> = (0..size * size)
            .map(|i| {
                let dy = (i / size) as f64 - center_row;
                let dx = (i % size) as f64 - center_col;
                let u = dx * c + dy * s;
                let v = (-dx * s + dy * c) * aspect;
                (u * u + v * v, i)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut mask = Array2::from_elem((size, size), false);
        for &(_, i) in &order[..area] {
            mask[[i / size, i % size]] = true;
        }
        Ok(MetalMask { mask, metal_hu: DEFAULT_METAL_HU })
    }
}

/// Places a blob of exactly `area` pixels at a seeded random position inside the body
/// (pixels above -500 HU) and inside the reconstruction circle.
pub fn random_implant(phantom: &Image, geom: &Geometry, area: usize, seed: u64) -> Result<MetalMask> {
    phantom.check_geometry(geom)?;
    let n = geom.image_size;
    let mw = phantom.mu_water();
    let body = phantom.values().mapv(|m| mu_to_hu(m, mw) > -500.0);
    let cen = (n as f64 - 1.0) / 2.0;
    let inner = geom.recon_circle_radius - 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..500 {
        let r = rng.random_range(0.0..n as f64 - 1.0);
        let c = rng.random_range(0.0..n as f64 - 1.0);
        if !body[[r.round() as usize, c.round() as usize]] {
            continue;
        }
        let aspect = rng.random_range(1.0..1.8);
        let rotation = rng.random_range(0.0..std::f64::consts::PI);
        let blob = MetalMask::blob(n, r, c, area, aspect, rotation)?;
        let fits = blob.mask.indexed_iter().all(|((i, j), &m)| {
            !m || (body[[i, j]] && (i as f64 - cen).hypot(j as f64 - cen) <= inner)
        });
        if fits {
            return Ok(blob);
        }
    }
    Err(Error::Data(format!("no placement for a {area}-pixel implant inside the body")))
}

/// Sinogram-shaped boolean mask of metal-affected rays.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMask {
    pub mask: Array2<bool>,
}

impl TraceMask {
    pub fn empty(geom: &Geometry) -> Self {
        TraceMask { mask: Array2::from_elem(geom.sinogram_shape(), false) }
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn as_float(&self) -> Array2<f64> {
        self.mask.mapv(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn check_geometry(&self, geom: &Geometry) -> Result<()> {
        ensure_shape("trace mask", self.mask.dim(), geom.sinogram_shape())
    }
}

/// Sets the masked pixels to the implant attenuation.
pub fn insert_metal(img: &Image, mask: &MetalMask) -> Result<Image> {
    ensure_shape("metal mask", mask.mask.dim(), img.shape())?;
    let metal = hu_to_mu(mask.metal_hu, img.mu_water());
    let mut values = img.values().clone();
    Zip::from(&mut values).and(&mask.mask).for_each(|v, &m| {
        if m {
            *v = metal;
        }
    });
    Ok(img.with_values(values))
}

/// Thresholds a reconstruction at [`METAL_THRESHOLD_HU`].
pub fn segment_metal(recon: &Image) -> MetalMask {
    segment_metal_at(recon, METAL_THRESHOLD_HU)
}

pub fn segment_metal_at(recon: &Image, threshold_hu: f64) -> MetalMask {
    let mw = recon.mu_water();
    MetalMask {
        mask: recon.values().mapv(|m| mu_to_hu(m, mw) >= threshold_hu),
        metal_hu: DEFAULT_METAL_HU,
    }
}

/// Rays whose forward projection of the 0/1 metal image exceeds [`TRACE_EPSILON`].
pub fn compute_trace(mask: &MetalMask, projector: &Projector) -> Result<TraceMask> {
    let geom = projector.geometry();
    ensure_shape("metal mask", mask.mask.dim(), geom.image_shape())?;
    let indicator = mask.mask.mapv(|b| if b { 1.0 } else { 0.0 });
    let proj = projector.project_values(&indicator, 0.0);
    Ok(TraceMask { mask: proj.mapv(|v| v > TRACE_EPSILON) })
}

/// One energy bin of a discretized tube spectrum. Attenuation at this energy is the
/// reference attenuation times the material's scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBin {
    pub weight: f64,
    pub water_scale: f64,
    pub metal_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumModel {
    pub bins: Vec<EnergyBin>,
    /// Incident photons per detector bin.
    pub photons: f64,
}

impl Default for SpectrumModel {
    fn default() -> Self {
        let weights = [0.15, 0.25, 0.30, 0.20, 0.10];
        let water = [1.35, 1.15, 1.0, 0.9, 0.83];
        let metal = [3.2, 2.2, 1.6, 1.25, 1.0];
        SpectrumModel {
            bins: (0..5)
                .map(|i| EnergyBin { weight: weights[i], water_scale: water[i], metal_scale: metal[i] })
                .collect(),
            photons: 1e6,
        }
    }
}

impl SpectrumModel {
    /// A single reference-energy bin: the model reduces to plain line integrals.
    pub fn monochromatic(photons: f64) -> Self {
        SpectrumModel {
            bins: vec![EnergyBin { weight: 1.0, water_scale: 1.0, metal_scale: 1.0 }],
            photons,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.is_empty() {
            return Err(Error::Config("spectrum has no energy bins".into()));
        }
        if !(self.photons > 0.0) || !self.photons.is_finite() {
            return Err(Error::Config(format!("photon count must be positive, got {}", self.photons)));
        }
        let positive = self.bins.iter().all(|b| b.weight > 0.0 && b.water_scale > 0.0 && b.metal_scale > 0.0);
        if !positive {
            return Err(Error::Config("spectrum entries must be positive".into()));
        }
        let total: f64 = self.bins.iter().map(|b| b.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("spectrum weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// Poisson-sample the detected photon counts.
    pub noise: bool,
    /// Sub-rays per detector bin; their transmitted intensities are averaged.
    pub subrays: usize,
    /// Pixels at or above this HU are attenuated with the metal spectrum.
    pub metal_threshold_hu: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions { noise: true, subrays: 2, metal_threshold_hu: METAL_THRESHOLD_HU }
    }
}

/// Mixes a base seed with a stream index (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Polychromatic, partial-volume, Poisson-noise measurement of an image with metal.
///
/// Pixels are split into tissue (water-like spectral scaling) and metal by thresholding.
/// Per sub-ray the transmitted intensity is `sum_e w_e N0 exp(-(s_w(e) L_w + s_m(e) L_m))`;
/// sub-ray intensities are averaged, optionally Poisson-sampled with a per-view generator
/// derived from `seed`, and log-converted with a floor of one photon.
pub fn simulate_metal_sinogram(
    img: &Image,
    spectrum: &SpectrumModel,
    projector: &Projector,
    seed: u64,
    opts: &SimulationOptions,
) -> Result<Sinogram> {
    spectrum.validate()?;
    let geom = projector.geometry();
    img.check_geometry(geom)?;
    if opts.subrays == 0 {
        return Err(Error::Config("need at least one sub-ray per bin".into()));
    }
    let mw = img.mu_water();
    let values = img.values();
    let is_metal = values.mapv(|m| mu_to_hu(m, mw) >= opts.metal_threshold_hu);
    let tissue = Zip::from(values).and(&is_metal).map_collect(|&v, &m| if m { 0.0 } else { v });
    let metal = Zip::from(values).and(&is_metal).map_collect(|&v, &m| if m { v } else { 0.0 });
    let any_metal = is_metal.iter().any(|&m| m);

    let m = opts.subrays;
    let mut intensity = Array2::<f64>::zeros(geom.sinogram_shape());
    for k in 0..m {
        let offset = (k as f64 + 0.5) / m as f64 - 0.5;
        let lw = projector.project_values(&tissue, offset);
        let lm = if any_metal { Some(projector.project_values(&metal, offset)) } else { None };
        for ((view, bin), acc) in intensity.indexed_iter_mut() {
            let w_len = lw[[view, bin]];
            let m_len = lm.as_ref().map_or(0.0, |l| l[[view, bin]]);
            let i: f64 = spectrum
                .bins
                .iter()
                .map(|b| b.weight * (-(b.water_scale * w_len + b.metal_scale * m_len)).exp())
                .sum();
            *acc += i * spectrum.photons / m as f64;
        }
    }

    let n0 = spectrum.photons;
    let mut out = Array2::zeros(geom.sinogram_shape());
    for (view, (row_in, mut row_out)) in intensity.rows().into_iter().zip(out.rows_mut()).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, view as u64));
        for (&lambda, o) in row_in.iter().zip(row_out.iter_mut()) {
            let detected = if opts.noise && lambda > 0.0 {
                Poisson::new(lambda).map(|p| p.sample(&mut rng)).unwrap_or(lambda)
            } else {
                lambda
            };
            *o = -(detected.max(1.0) / n0).ln();
        }
    }
    Sinogram::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomography::MU_WATER;

    fn one_ellipse(hu: f64) -> PhantomSpec {
        PhantomSpec {
            ellipses: vec![Ellipse { center_x: 0.0, center_y: 0.0, semi_x: 0.3, semi_y: 0.2, rotation: 0.4, tissue_hu: hu }],
            seed: 0,
        }
    }

    #[test]
    fn water_ellipse_interior_is_mu_water() {
        let img = generate_phantom(&one_ellipse(0.0), 64, MU_WATER).unwrap();
        assert_eq!(img.values()[[32, 32]], MU_WATER);
        assert_eq!(img.values()[[0, 0]], 0.0);
    }

    #[test]
    fn ellipse_area_matches_analytic() {
        let spec = one_ellipse(0.0);
        let img = generate_phantom(&spec, 128, MU_WATER).unwrap();
        let covered: f64 = img.values().iter().map(|v| v / MU_WATER).sum();
        let want = spec.ellipses[0].area() * 128.0 * 128.0;
        assert!((covered - want).abs() / want < 0.02, "{covered} vs {want}");
    }

    #[test]
    fn empty_and_invalid_specs_rejected() {
        let empty = PhantomSpec { ellipses: vec![], seed: 0 };
        assert!(matches!(generate_phantom(&empty, 32, MU_WATER), Err(Error::Config(_))));
        assert!(one_ellipse(3500.0).validate().is_err());
        let mut spec = one_ellipse(0.0);
        spec.ellipses.push(Ellipse { center_x: 0.25, center_y: 0.0, semi_x: 0.1, semi_y: 0.1, rotation: 0.0, tissue_hu: 40.0 });
        assert!(spec.validate().is_err(), "inner ellipse pokes out of the body");
    }

    #[test]
    fn anatomical_phantoms_are_valid_and_seeded() {
        let fam = PhantomFamily::default();
        for seed in 0..50 {
            PhantomSpec::anatomical(seed, &fam).validate().unwrap();
        }
        let a = generate_phantom(&PhantomSpec::anatomical(7, &fam), 64, MU_WATER).unwrap();
        let b = generate_phantom(&PhantomSpec::anatomical(7, &fam), 64, MU_WATER).unwrap();
        let c = generate_phantom(&PhantomSpec::anatomical(8, &fam), 64, MU_WATER).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn anatomical_phantom_fits_recon_circle() {
        let fam = PhantomFamily::default();
        let geom = Geometry::fan(64, 8, 9);
        for seed in 0..20 {
            let img = generate_phantom(&PhantomSpec::anatomical(seed, &fam), 64, MU_WATER).unwrap();
            for ((r, c), &v) in img.values().indexed_iter() {
                if v > 0.0 {
                    assert!(geom.in_recon_circle(r, c));
                }
            }
        }
    }

    #[test]
    fn metal_insertion() {
        let img = generate_phantom(&one_ellipse(40.0), 64, MU_WATER).unwrap();
        assert_eq!(insert_metal(&img, &MetalMask::empty(64)).unwrap(), img);

        let full = MetalMask { mask: Array2::from_elem((64, 64), true), metal_hu: 3000.0 };
        let all = insert_metal(&img, &full).unwrap();
        assert!(all.values().iter().all(|&v| v == hu_to_mu(3000.0, MU_WATER)));

        let blob = MetalMask::blob(64, 30.0, 34.0, 254, 1.5, 0.3).unwrap();
        assert_eq!(blob.area(), 254);
        let with = insert_metal(&img, &blob).unwrap();
        let changed = Zip::from(with.values()).and(img.values()).fold(0, |n, a, b| n + (a != b) as usize);
        assert_eq!(changed, 254);

        assert!(insert_metal(&img, &MetalMask::empty(63)).is_err());
    }

    #[test]
    fn blob_hits_every_reference_area() {
        for &a in &REFERENCE_METAL_AREAS {
            assert_eq!(MetalMask::blob(128, 60.0, 70.0, a, 1.3, 0.5).unwrap().area(), a);
        }
    }

    #[test]
    fn segmentation_threshold() {
        let water = Image::from_hu(&Array2::zeros((16, 16)), MU_WATER).unwrap();
        assert!(segment_metal(&water).is_empty());
        let mut hu = Array2::zeros((16, 16));
        hu[[3, 9]] = 3000.0;
        let seg = segment_metal(&Image::from_hu(&hu, MU_WATER).unwrap());
        assert_eq!(seg.area(), 1);
        assert!(seg.mask[[3, 9]]);
    }

    #[test]
    fn spectrum_validation() {
        SpectrumModel::default().validate().unwrap();
        let mut s = SpectrumModel::default();
        s.bins[0].weight = 0.2;
        assert!(s.validate().is_err());
        let mut s = SpectrumModel::default();
        s.photons = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
