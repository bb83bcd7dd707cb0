//! Module ablation, mask-parameter sweep and cross-run reports.

use std::fs;
use std::path::Path;

use dudodp::mar::FusionMode;
use dudodp::metrics::{group_report, GroupReport, GroupThresholds, Summary};
use dudodp::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::output::{write_csv, write_json};
use crate::run::{CaseSeed, Method, RunContext, RunDescriptor, RunResult};

pub const SWEEP_A: [f64; 3] = [0.3, 0.4, 0.5];
pub const SWEEP_N: [f64; 3] = [3.0, 4.0, 5.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: char,
    pub mode: FusionMode,
    pub run: String,
    pub psnr: f64,
    pub ssim: f64,
    pub groups: Vec<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Shared by every row: the rows differ only in `mode`.
    pub base: RunDescriptor,
    pub seeds: Vec<CaseSeed>,
    pub rows: Vec<AblationRow>,
}

#[derive(Serialize)]
struct AblationCsvRow<'a> {
    label: char,
    mode: &'a str,
    psnr: f64,
    ssim: f64,
}

/// Runs the four fusion modes with constant masks (`a = 1`) and shared per-case seeds.
pub fn ablate(ctx: &RunContext) -> Result<AblationReport> {
    let mut base = RunDescriptor::new(&ctx.config, Method::Dudodp);
    base.a = 1.0;
    let mut rows = Vec::new();
    let mut seeds = None;
    for mode in FusionMode::ALL {
        let desc = RunDescriptor { name: format!("ablate_{}", mode.label()), mode, ..base.clone() };
        let result = ctx.execute(&desc)?;
        let method = &result.report.methods[0];
        rows.push(AblationRow {
            label: mode.label(),
            mode,
            run: desc.name.clone(),
            psnr: method.overall.psnr,
            ssim: method.overall.ssim,
            groups: method.groups.clone(),
        });
        match &seeds {
            None => seeds = Some(result.seeds),
            Some(s) if *s != result.seeds => return Err(Error::Contract("ablation rows used different seeds".into())),
            Some(_) => {}
        }
    }
    base.name = "ablate".into();
    let report = AblationReport { base, seeds: seeds.unwrap_or_default(), rows };
    let out = &ctx.config.output;
    write_json(&out.join("ablation.json"), &report)?;
    let csv: Vec<_> =
        report.rows.iter().map(|r| AblationCsvRow { label: r.label, mode: r.mode.name(), psnr: r.psnr, ssim: r.ssim }).collect();
    write_csv(&out.join("ablation.csv"), &csv)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub a: f64,
    /// Absent for the constant-mask cell.
    pub n: Option<f64>,
    pub run: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub base: RunDescriptor,
    pub seeds: Vec<CaseSeed>,
    /// Nine dynamic cells in `a`-major order, then the constant cell.
    pub cells: Vec<SweepCell>,
    pub best_dynamic_psnr: f64,
    pub constant_psnr: f64,
    pub dynamic_spread_db: f64,
}

impl SweepReport {
    pub fn dynamic(&self) -> &[SweepCell] {
        &self.cells[..self.cells.len() - 1]
    }

    pub fn constant(&self) -> &SweepCell {
        self.cells.last().expect("sweep has a constant cell")
    }
}

/// Runs the full mode over a ∈ {0.3, 0.4, 0.5} × n ∈ {3, 4, 5} plus constant a = 1.
pub fn mask_sweep(ctx: &RunContext) -> Result<SweepReport> {
    let mut base = RunDescriptor::new(&ctx.config, Method::Dudodp);
    base.mode = FusionMode::Full;
    let mut grid: Vec<(f64, Option<f64>)> = SWEEP_A.iter().flat_map(|&a| SWEEP_N.iter().map(move |&n| (a, Some(n)))).collect();
    grid.push((1.0, None));
    let mut cells = Vec::new();
    let mut seeds = Vec::new();
    for (a, n) in grid {
        let name = match n {
            Some(n) => format!("sweep_a{a}_n{n}"),
            None => "sweep_constant".to_string(),
        };
        let desc = RunDescriptor { name: name.clone(), a, n: n.unwrap_or(base.n), ..base.clone() };
        let result = ctx.execute(&desc)?;
        let overall = result.report.methods[0].overall;
        cells.push(SweepCell { a, n, run: name, psnr: overall.psnr, ssim: overall.ssim });
        seeds = result.seeds;
    }
    let dynamic = &cells[..cells.len() - 1];
    let best = dynamic.iter().map(|c| c.psnr).fold(f64::NEG_INFINITY, f64::max);
    let worst = dynamic.iter().map(|c| c.psnr).fold(f64::INFINITY, f64::min);
    base.name = "mask_sweep".into();
    let report = SweepReport {
        base,
        seeds,
        best_dynamic_psnr: best,
        constant_psnr: cells[cells.len() - 1].psnr,
        dynamic_spread_db: best - worst,
        cells,
    };
    let out = &ctx.config.output;
    write_json(&out.join("mask_sweep.json"), &report)?;
    write_csv(&out.join("mask_sweep.csv"), &report.cells)?;
    Ok(report)
}

#[derive(Serialize)]
struct ReportCsvRow<'a> {
    method: &'a str,
    group: String,
    count: usize,
    psnr: f64,
    ssim: f64,
}

/// Names of the completed runs under `runs/`, sorted.
pub fn list_runs(config: &ExperimentConfig) -> Result<Vec<String>> {
    let dir = config.runs_dir();
    let entries = fs::read_dir(&dir).map_err(|e| Error::Data(format!("cannot list {}: {e}", dir.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("scores.json").is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    Ok(names)
}

/// Per-group table over the named runs (all completed runs when empty), written to
/// `report.json` and `report.csv`.
pub fn report(config: &ExperimentConfig, runs: &[String]) -> Result<GroupReport> {
    let names = if runs.is_empty() { list_runs(config)? } else { runs.to_vec() };
    if names.is_empty() {
        return Err(Error::Data(format!("no completed runs under {}", config.runs_dir().display())));
    }
    let mut records = Vec::new();
    for name in &names {
        let result = RunResult::load(&config.runs_dir().join(name).join("scores.json"))?;
        records.extend(result.records);
    }
    let thresholds: &GroupThresholds = &config.metrics.groups;
    let report = group_report(&records, thresholds)?;
    write_report(&config.output, &report)?;
    Ok(report)
}

fn write_report(dir: &Path, report: &GroupReport) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    let mut rows = Vec::new();
    for m in &report.methods {
        for (g, s) in m.groups.iter().enumerate() {
            rows.push(ReportCsvRow { method: &m.method, group: (g + 1).to_string(), count: s.count, psnr: s.psnr, ssim: s.ssim });
        }
        let s = &m.overall;
        rows.push(ReportCsvRow { method: &m.method, group: "all".into(), count: s.count, psnr: s.psnr, ssim: s.ssim });
    }
    write_csv(&dir.join("report.csv"), &rows)
}
