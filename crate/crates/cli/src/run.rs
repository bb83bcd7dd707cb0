//! Execution of one method over the dataset: outputs, previews and scores.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use dudodp::diffusion::{Denoiser, NoiseSchedule, Normalization, PluginDenoiser, TemplatePrior};
use dudodp::mar::{
    dudodp_run, li_baseline, nmar_baseline, restore_metal, FusionConfig, FusionMode, LatentUpdate, MarInput, MarTrace,
    MaskScale,
};
use dudodp::metrics::{group_report, psnr_masked, ssim_masked, GroupReport, ScoreRecord};
use dudodp::phantom::derive_seed;
use dudodp::tomography::io::{write_field, write_image, FieldHeader, FieldKind, Units};
use dudodp::tomography::{Image, Projector};
use dudodp::{Error, Result};
use ndarray::{concatenate, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive;
use crate::config::ExperimentConfig;
use crate::dataset::{CaseEntry, Dataset};
use crate::in_case;
use crate::output::{write_csv, write_json, write_preview};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dudodp,
    Li,
    Nmar,
    Ma,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dudodp => "dudodp",
            Method::Li => "li",
            Method::Nmar => "nmar",
            Method::Ma => "ma",
        })
    }
}

/// Everything that determines a run's outputs besides the dataset and prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDescriptor {
    /// Output directory name under `runs/`, also the method label in score records.
    pub name: String,
    /// Restricts the run to one case id.
    pub case: Option<String>,
    pub method: Method,
    pub mode: FusionMode,
    pub a: f64,
    pub n: f64,
    pub delta_y: f64,
    pub steps: usize,
    pub seed: u64,
    pub mask_scale: MaskScale,
    pub clamp_masks: bool,
    pub latent_update: LatentUpdate,
    pub emit_trace: bool,
}

impl RunDescriptor {
    pub fn new(config: &ExperimentConfig, method: Method) -> Self {
        let m = &config.method;
        RunDescriptor {
            name: method.to_string(),
            case: None,
            method,
            mode: m.mode,
            a: m.a,
            n: m.n,
            delta_y: m.delta_y,
            steps: m.steps,
            seed: config.run.seed,
            mask_scale: m.mask_scale,
            clamp_masks: m.clamp_masks,
            latent_update: m.latent_update,
            emit_trace: false,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            a: self.a,
            n: self.n,
            delta_y: self.delta_y,
            mask_scale: self.mask_scale,
            mode: self.mode,
            steps: self.steps,
            clamp_masks: self.clamp_masks,
            latent_update: self.latent_update,
        }
    }

    /// Seed of the reverse diffusion for a case; runs sharing `seed` share it per case.
    pub fn case_seed(&self, case: &CaseEntry) -> u64 {
        derive_seed(self.seed, case.index as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(Error::Config(format!("run name {:?} is not a plain directory name", self.name)));
        }
        self.fusion().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSeed {
    pub case_id: String,
    pub seed: u64,
}

/// Contents of `scores.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub descriptor: RunDescriptor,
    pub seeds: Vec<CaseSeed>,
    pub records: Vec<ScoreRecord>,
    pub report: GroupReport,
}

impl RunResult {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("malformed {}: {e}", path.display())))
    }

    pub fn mean_psnr(&self) -> f64 {
        self.report.methods.first().map_or(f64::NAN, |m| m.overall.psnr)
    }
}

/// Dataset, projector and (lazily required) prior shared by the runs of one command.
pub struct RunContext {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub projector: Arc<Projector>,
    pub schedule: NoiseSchedule,
    prior: Option<(TemplatePrior, Normalization)>,
}

impl RunContext {
    /// Opens the dataset; loads the prior archive when `with_prior` and no plugin is set.
    pub fn open(config: &ExperimentConfig, with_prior: bool) -> Result<Self> {
        config.validate()?;
        let dataset = Dataset::open(&config.dataset_dir())?;
        let m = &dataset.manifest;
        let projector = Arc::new(Projector::with_options(&m.geometry, m.mu_water, false)?);
        let prior = if with_prior && config.run.plugin.is_empty() {
            let (prior, desc) = archive::load(&config.prior_dir())?;
            if desc.shape != [m.geometry.image_size; 2] {
                return Err(Error::Data(format!("prior shape {:?} does not match the dataset", desc.shape)));
            }
            Some((prior, desc.normalization))
        } else {
            None
        };
        Ok(RunContext { config: config.clone(), dataset, projector, schedule: NoiseSchedule::default(), prior })
    }

    fn normalization(&self) -> Normalization {
        match &self.prior {
            Some((_, norm)) => *norm,
            None => Normalization { lo_hu: self.config.prior.lo_hu, hi_hu: self.config.prior.hi_hu },
        }
    }

    fn spawn_plugin(&self) -> Result<PluginDenoiser> {
        let argv = &self.config.run.plugin;
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..]);
        let t = self.config.run.plugin_timeout_s;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("run.plugin_timeout_s must be positive, got {t}")));
        }
        let n = self.dataset.manifest.geometry.image_size;
        PluginDenoiser::spawn(cmd, (n, n), self.schedule.steps(), Duration::from_secs_f64(t))
    }

    fn reconstruct(&self, desc: &RunDescriptor, input: &MarInput, case: &CaseEntry) -> Result<(Image, MarTrace)> {
        let p = &self.projector;
        Ok(match desc.method {
            Method::Ma => (input.y0.clone(), MarTrace::default()),
            Method::Li => (li_baseline(&input.s0, &input.trace, p)?, MarTrace::default()),
            Method::Nmar => (nmar_baseline(&input.s0, &input.trace, p)?, MarTrace::default()),
            Method::Dudodp => {
                let mut denoiser: Box<dyn Denoiser + '_> = match &self.prior {
                    Some((prior, _)) => Box::new(prior),
                    None if !self.config.run.plugin.is_empty() => Box::new(self.spawn_plugin()?),
                    None => return Err(Error::Config("dudodp needs a prior archive or run.plugin".into())),
                };
                let norm = self.normalization();
                let fusion = desc.fusion();
                dudodp_run(input, &mut denoiser, &self.schedule, &fusion, &norm, desc.case_seed(case), desc.emit_trace)?
            }
        })
    }

    fn run_case(&self, desc: &RunDescriptor, case: &CaseEntry, dir: &Path) -> Result<ScoreRecord> {
        let start = Instant::now();
        let data = self.dataset.load_case(case)?;
        let input = MarInput::new(data.s0, data.trace, self.projector.clone(), None)?;
        let (out, trace) = self.reconstruct(desc, &input, case)?;
        let out = restore_metal(&out, &input.y0)?;

        let cfg = &self.config.metrics;
        let exclude = cfg.exclude_metal.then_some(&data.metal.mask);
        let psnr = psnr_masked(&out, &data.ground_truth, &cfg.window, exclude)?;
        let ssim = ssim_masked(&out, &data.ground_truth, &cfg.window, exclude)?;

        let case_dir = dir.join("cases").join(&case.id);
        let geom = &self.dataset.manifest.geometry;
        write_image(&case_dir.join("output.f32"), &out, Some(geom))?;
        write_preview(&case_dir.join("preview.png"), &out)?;
        if desc.emit_trace && !trace.steps.is_empty() {
            let priors: Vec<_> = trace.steps.iter().map(|s| s.f.values().view()).collect();
            let stacked = concatenate(Axis(0), &priors).expect("step images share a shape");
            let header = FieldHeader::new(stacked.dim(), FieldKind::Image, Units::Mu);
            write_field(&case_dir.join("trace_f.f32"), &stacked, &header)?;
            let steps: Vec<_> = trace.steps.iter().map(|s| (s.t, s.delta)).collect();
            write_json(&case_dir.join("trace_steps.json"), &steps)?;
        }
        log::info!("{} {}: {:.2} dB in {:.2?}", desc.name, case.id, psnr, start.elapsed());
        Ok(ScoreRecord {
            case_id: case.id.clone(),
            method: desc.name.clone(),
            psnr,
            ssim,
            metal_area_px: Some(case.metal_area_px),
            group: Some(cfg.groups.group_of(case.metal_area_px)),
        })
    }

    pub fn run_dir(&self, name: &str) -> PathBuf {
        self.config.runs_dir().join(name)
    }

    /// Runs `desc` over the selected cases and writes `runs/<name>/`.
    pub fn execute(&self, desc: &RunDescriptor) -> Result<RunResult> {
        desc.validate()?;
        let cases = self.dataset.select(desc.case.as_deref())?;
        let dir = self.run_dir(&desc.name);
        let start = Instant::now();
        let records = cases
            .par_iter()
            .map(|case| self.run_case(desc, case, &dir).map_err(|e| in_case(&case.id, e)))
            .collect::<Result<Vec<_>>>()?;
        let seeds = cases.iter().map(|c| CaseSeed { case_id: c.id.clone(), seed: desc.case_seed(c) }).collect();
        let report = group_report(&records, &self.config.metrics.groups)?;
        let result = RunResult { descriptor: desc.clone(), seeds, records, report };
        write_json(&dir.join("descriptor.json"), desc)?;
        write_csv(&dir.join("scores.csv"), &result.records)?;
        write_json(&dir.join("scores.json"), &result)?;
        log::info!(
            "{}: {} cases, mean PSNR {:.3} dB, {:.1?}",
            desc.name,
            result.records.len(),
            result.mean_psnr(),
            start.elapsed()
        );
        Ok(result)
    }
}
