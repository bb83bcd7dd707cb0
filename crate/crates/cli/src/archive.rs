//! Template prior archive: stacked normalized templates plus a checksummed descriptor.

use std::fs;
use std::path::{Path, PathBuf};

use dudodp::diffusion::{Normalization, TemplatePrior};
use dudodp::phantom::{generate_phantom, PhantomSpec};
use dudodp::tomography::io::{read_field, write_field, FieldHeader, FieldKind, Units};
use dudodp::{Error, Result};
use ndarray::{concatenate, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::{sha256_hex, write_json};

pub const TEMPLATES_FILE: &str = "templates.f32";
pub const DESCRIPTOR_FILE: &str = "prior.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorDescriptor {
    pub templates: usize,
    pub shape: [usize; 2],
    pub seeds: [u64; 2],
    pub normalization: Normalization,
    pub mu_water: f64,
    pub file: PathBuf,
    pub sha256: String,
}

/// Generates `prior.templates` metal-free phantoms from the template seed range.
pub fn build(config: &ExperimentConfig) -> Result<PriorDescriptor> {
    config.validate()?;
    config.check_disjoint_seeds()?;
    let size = config.geometry.image_size;
    let mw = config.geometry.mu_water;
    let norm = Normalization { lo_hu: config.prior.lo_hu, hi_hu: config.prior.hi_hu };
    norm.validate()?;
    let family = config.phantoms.family();
    let seeds: Vec<u64> = config.prior.seeds().collect();
    let units = seeds
        .par_iter()
        .map(|&s| Ok(norm.to_unit(&generate_phantom(&PhantomSpec::anatomical(s, &family), size, mw)?)))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = units.iter().map(|u| u.view()).collect();
    let stacked = concatenate(Axis(0), &views).expect("templates share a shape");

    let dir = config.prior_dir();
    let path = dir.join(TEMPLATES_FILE);
    write_field(&path, &stacked, &FieldHeader::new(stacked.dim(), FieldKind::Image, Units::Normalized))?;
    let bytes = fs::read(&path).map_err(|e| Error::Data(format!("cannot reread {}: {e}", path.display())))?;
    let descriptor = PriorDescriptor {
        templates: seeds.len(),
        shape: [size, size],
        seeds: [config.prior.seeds().start, config.prior.seeds().end],
        normalization: norm,
        mu_water: mw,
        file: PathBuf::from(TEMPLATES_FILE),
        sha256: sha256_hex(&bytes),
    };
    write_json(&dir.join(DESCRIPTOR_FILE), &descriptor)?;
    log::info!("wrote {} templates to {}", descriptor.templates, dir.display());
    Ok(descriptor)
}

/// Loads an archive, verifying its checksum and layout.
pub fn load(dir: &Path) -> Result<(TemplatePrior, PriorDescriptor)> {
    let desc_path = dir.join(DESCRIPTOR_FILE);
    let text = fs::read(&desc_path).map_err(|e| Error::Data(format!("cannot read {}: {e}", desc_path.display())))?;
    let desc: PriorDescriptor =
        serde_json::from_slice(&text).map_err(|e| Error::Data(format!("malformed {}: {e}", desc_path.display())))?;
    let path = dir.join(&desc.file);
    let bytes = fs::read(&path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    if sha256_hex(&bytes) != desc.sha256 {
        return Err(Error::Data(format!("{} does not match its recorded checksum", path.display())));
    }
    let (stacked, header) = read_field(&path)?;
    let [h, w] = desc.shape;
    if header.shape != [desc.templates * h, w] {
        return Err(Error::Data(format!("{} has shape {:?}, descriptor implies {:?}", path.display(), header.shape, [desc.templates * h, w])));
    }
    let templates = (0..desc.templates)
        .map(|k| stacked.slice(ndarray::s![k * h..(k + 1) * h, ..]).to_owned())
        .collect();
    Ok((TemplatePrior::new(templates)?, desc))
}
