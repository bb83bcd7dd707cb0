//! Experiment configuration: JSON file plus dotted-path overrides.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use dudodp::mar::FusionConfig;
use dudodp::metrics::{GroupThresholds, HuWindow};
use dudodp::phantom::{PhantomFamily, SimulationOptions, SpectrumModel};
use dudodp::tomography::{BeamMode, Geometry, MU_WATER};
use dudodp::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub beam: BeamMode,
    pub image_size: usize,
    pub n_views: usize,
    pub n_bins: usize,
    pub mu_water: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig { beam: BeamMode::FanEquiangular, image_size: 64, n_views: 96, n_bins: 97, mu_water: MU_WATER }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Geometry {
        match self.beam {
            BeamMode::Parallel => Geometry::parallel(self.image_size, self.n_views, self.n_bins),
            BeamMode::FanEquiangular => Geometry::fan(self.image_size, self.n_views, self.n_bins),
        }
    }
}

/// Test phantoms use seeds `seed .. seed + count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub count: usize,
    pub seed: u64,
    pub jitter: f64,
    pub lesions: bool,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let family = PhantomFamily::default();
        PhantomConfig { count: 20, seed: 100_000, jitter: family.jitter, lesions: family.lesions }
    }
}

impl PhantomConfig {
    pub fn family(&self) -> PhantomFamily {
        PhantomFamily { jitter: self.jitter, lesions: self.lesions }
    }

    pub fn seeds(&self) -> Range<u64> {
        self.seed..self.seed + self.count as u64
    }
}

/// Each phantom receives one implant of every listed area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetalConfig {
    pub areas: Vec<usize>,
    pub metal_hu: f64,
    pub seed: u64,
}

impl Default for MetalConfig {
    fn default() -> Self {
        MetalConfig { areas: vec![150, 70, 30, 12, 5], metal_hu: 3000.0, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub spectrum: SpectrumModel,
    pub options: SimulationOptions,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { spectrum: SpectrumModel::default(), options: SimulationOptions::default(), seed: 11 }
    }
}

/// Templates use seeds `seed .. seed + templates`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub templates: usize,
    pub seed: u64,
    pub lo_hu: f64,
    pub hi_hu: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { templates: 100, seed: 0, lo_hu: -1000.0, hi_hu: 3000.0 }
    }
}

impl PriorConfig {
    pub fn seeds(&self) -> Range<u64> {
        self.seed..self.seed + self.templates as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub window: HuWindow,
    pub exclude_metal: bool,
    pub groups: GroupThresholds,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { window: HuWindow::default(), exclude_metal: false, groups: GroupThresholds::desk() }
    }
}

/// Run-level settings shared by `run`, `ablate` and `mask-sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Command line of an external denoiser; the built-in template prior when empty.
    pub plugin: Vec<String>,
    pub plugin_timeout_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { seed: 2024, plugin: Vec::new(), plugin_timeout_s: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub phantoms: PhantomConfig,
    pub metal: MetalConfig,
    pub simulation: SimulationConfig,
    pub prior: PriorConfig,
    pub method: FusionConfig,
    pub run: RunConfig,
    pub metrics: MetricsConfig,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            geometry: GeometryConfig::default(),
            phantoms: PhantomConfig::default(),
            metal: MetalConfig::default(),
            simulation: SimulationConfig::default(),
            prior: PriorConfig::default(),
            method: FusionConfig::default(),
            run: RunConfig::default(),
            metrics: MetricsConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, Error> {
        serde_json::from_str(text).map_err(|e| config_error(format!("invalid config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key.path=value` overrides. Values parse as JSON, falling back to a string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, Error> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree = serde_json::to_value(self).expect("config serializes");
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| config_error(format!("override {item:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut tree, key, value)?;
        }
        serde_json::from_value(tree).map_err(|e| config_error(format!("invalid override: {e}")))
    }

    pub fn validate(&self) -> Result<(), Error> {
        let geom = self.geometry.build();
        geom.validate()?;
        if self.phantoms.count == 0 {
            return Err(config_error("phantoms.count must be at least 1"));
        }
        if !(self.phantoms.jitter >= 0.0 && self.phantoms.jitter.is_finite()) {
            return Err(config_error("phantoms.jitter must be finite and >= 0"));
        }
        if self.metal.areas.is_empty() || self.metal.areas.contains(&0) {
            return Err(config_error("metal.areas must be a non-empty list of positive areas"));
        }
        if self.prior.templates == 0 {
            return Err(config_error("prior.templates must be at least 1"));
        }
        self.simulation.spectrum.validate()?;
        self.method.validate()?;
        self.metrics.window.validate()?;
        self.metrics.groups.validate()?;
        Ok(())
    }

    /// Rejects template seeds that overlap the test phantom seeds.
    pub fn check_disjoint_seeds(&self) -> Result<(), Error> {
        let test = self.phantoms.seeds();
        let prior = self.prior.seeds();
        if test.start < prior.end && prior.start < test.end {
            return Err(config_error(format!(
                "template seeds {prior:?} overlap test phantom seeds {test:?}; the prior would see test images"
            )));
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.output.join("dataset")
    }

    pub fn prior_dir(&self) -> PathBuf {
        self.output.join("prior")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.output.join("runs")
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<(), Error> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_error(format!("override key {key:?}: {part:?} is not inside an object")))?;
        let slot = obj.get_mut(*part).ok_or_else(|| config_error(format!("unknown config key {key:?}")))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(config_error("empty override key"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_are_disjoint() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        c.check_disjoint_seeds().unwrap();
        assert_eq!(c.phantoms.count * c.metal.areas.len(), 100);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = ExperimentConfig::default()
            .with_overrides(&["method.a=0.3", "phantoms.count=2", "output=elsewhere", "method.mask_scale=\"auto\""])
            .unwrap();
        assert_eq!(c.method.a, 0.3);
        assert_eq!(c.phantoms.count, 2);
        assert_eq!(c.output, PathBuf::from("elsewhere"));
        assert_eq!(c.method.mask_scale, dudodp::mar::MaskScale::Auto);
        assert!(ExperimentConfig::default().with_overrides(&["method.nope=1"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["method.a"]).is_err());
    }
}
