//! Simulated test set: one directory per case plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use dudodp::phantom::{
    compute_trace, derive_seed, generate_phantom, insert_metal, random_implant, segment_metal,
    simulate_metal_sinogram, MetalMask, PhantomSpec, TraceMask,
};
use dudodp::tomography::io::{read_header, read_image, read_mask, read_sinogram, write_image, write_mask, write_sinogram, FieldKind};
use dudodp::tomography::{Geometry, Image, Projector, Sinogram};
use dudodp::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::write_json;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFiles {
    pub phantom: PathBuf,
    pub ground_truth: PathBuf,
    pub clean_sinogram: PathBuf,
    pub ma_sinogram: PathBuf,
    pub metal_mask: PathBuf,
    pub trace: PathBuf,
}

impl CaseFiles {
    fn for_case(id: &str) -> Self {
        let dir = PathBuf::from("cases").join(id);
        CaseFiles {
            phantom: dir.join("phantom.f32"),
            ground_truth: dir.join("ground_truth.f32"),
            clean_sinogram: dir.join("clean_sinogram.f32"),
            ma_sinogram: dir.join("ma_sinogram.f32"),
            metal_mask: dir.join("metal_mask.f32"),
            trace: dir.join("trace.f32"),
        }
    }

    pub fn all(&self) -> [&Path; 6] {
        [&self.phantom, &self.ground_truth, &self.clean_sinogram, &self.ma_sinogram, &self.metal_mask, &self.trace]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub index: usize,
    pub phantom_seed: u64,
    pub implant_seed: u64,
    pub noise_seed: u64,
    pub metal_area_px: usize,
    pub files: CaseFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub geometry: Geometry,
    pub mu_water: f64,
    pub metal_hu: f64,
    pub cases: Vec<CaseEntry>,
}

/// Loaded inputs of one case.
#[derive(Debug, Clone)]
pub struct CaseData {
    pub ground_truth: Image,
    pub s0: Sinogram,
    pub metal: MetalMask,
    pub trace: TraceMask,
}

fn plan(config: &ExperimentConfig) -> Vec<CaseEntry> {
    let mut cases = Vec::new();
    for (p, phantom_seed) in config.phantoms.seeds().enumerate() {
        for (k, &area) in config.metal.areas.iter().enumerate() {
            let index = cases.len() as u64;
            let id = format!("p{p:03}_m{k}");
            cases.push(CaseEntry {
                files: CaseFiles::for_case(&id),
                id,
                index: index as usize,
                phantom_seed,
                implant_seed: derive_seed(config.metal.seed, index),
                noise_seed: derive_seed(config.simulation.seed, index),
                metal_area_px: area,
            });
        }
    }
    cases
}

fn generate_case(config: &ExperimentConfig, projector: &Projector, root: &Path, case: &CaseEntry) -> Result<()> {
    let geom = projector.geometry();
    let spec = PhantomSpec::anatomical(case.phantom_seed, &config.phantoms.family());
    let phantom = generate_phantom(&spec, geom.image_size, config.geometry.mu_water)?;
    let mut metal = random_implant(&phantom, geom, case.metal_area_px, case.implant_seed)?;
    metal.metal_hu = config.metal.metal_hu;
    let gt = insert_metal(&phantom, &metal)?;
    let s0 = simulate_metal_sinogram(&gt, &config.simulation.spectrum, projector, case.noise_seed, &config.simulation.options)?;
    let clean = projector.forward(&phantom)?;
    let trace = compute_trace(&segment_metal(&projector.fbp(&s0)?), projector)?;
    let f = &case.files;
    write_image(&root.join(&f.phantom), &phantom, Some(geom))?;
    write_image(&root.join(&f.ground_truth), &gt, Some(geom))?;
    write_sinogram(&root.join(&f.clean_sinogram), &clean, geom)?;
    write_sinogram(&root.join(&f.ma_sinogram), &s0, geom)?;
    write_mask(&root.join(&f.metal_mask), &metal.mask, FieldKind::Image, Some(geom))?;
    write_mask(&root.join(&f.trace), &trace.mask, FieldKind::Sinogram, Some(geom))
}

/// Writes every case and the manifest under the configured dataset directory.
pub fn generate(config: &ExperimentConfig) -> Result<Manifest> {
    config.validate()?;
    let geom = config.geometry.build();
    let projector = Projector::with_options(&geom, config.geometry.mu_water, false)?;
    let root = config.dataset_dir();
    let cases = plan(config);
    cases.par_iter().try_for_each(|case| {
        generate_case(config, &projector, &root, case)?;
        log::debug!("generated case {}", case.id);
        Ok::<(), Error>(())
    })?;
    let manifest = Manifest { geometry: geom, mu_water: config.geometry.mu_water, metal_hu: config.metal.metal_hu, cases };
    write_json(&root.join(MANIFEST), &manifest)?;
    log::info!("wrote {} cases to {}", manifest.cases.len(), root.display());
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    /// Reads the manifest and checks every referenced file's presence and shape.
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = fs::read(&path).map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest: Manifest =
            serde_json::from_slice(&text).map_err(|e| Error::Data(format!("malformed manifest {}: {e}", path.display())))?;
        manifest.geometry.validate()?;
        let image = [manifest.geometry.image_size; 2];
        let sino = [manifest.geometry.n_views, manifest.geometry.n_bins];
        for case in &manifest.cases {
            let f = &case.files;
            let expected = [image, image, sino, sino, image, sino];
            for (file, shape) in f.all().into_iter().zip(expected) {
                let full = root.join(file);
                let meta = fs::metadata(&full).map_err(|e| Error::Data(format!("case {}: missing {}: {e}", case.id, full.display())))?;
                let header = read_header(&full)?;
                if header.shape != shape || meta.len() != (shape[0] * shape[1] * 4) as u64 {
                    return Err(Error::Data(format!(
                        "case {}: {} has shape {:?}, expected {shape:?}",
                        case.id,
                        full.display(),
                        header.shape
                    )));
                }
            }
        }
        Ok(Dataset { root: root.to_path_buf(), manifest })
    }

    pub fn load_case(&self, case: &CaseEntry) -> Result<CaseData> {
        let f = &case.files;
        let ground_truth = read_image(&self.root.join(&f.ground_truth))?;
        let (s0, _) = read_sinogram(&self.root.join(&f.ma_sinogram))?;
        let (metal, _) = read_mask(&self.root.join(&f.metal_mask))?;
        let (trace, _) = read_mask(&self.root.join(&f.trace))?;
        Ok(CaseData {
            ground_truth,
            s0,
            metal: MetalMask { mask: metal, metal_hu: self.manifest.metal_hu },
            trace: TraceMask { mask: trace },
        })
    }

    pub fn select(&self, id: Option<&str>) -> Result<Vec<&CaseEntry>> {
        match id {
            None => Ok(self.manifest.cases.iter().collect()),
            Some(id) => {
                let case = self
                    .manifest
                    .cases
                    .iter()
                    .find(|c| c.id == id)
                    .ok_or_else(|| Error::Data(format!("no case {id:?} in the manifest")))?;
                Ok(vec![case])
            }
        }
    }
}
