use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dudodp_cli::config::ExperimentConfig;
use dudodp_cli::run::{Method, RunContext, RunDescriptor};
use dudodp_cli::{archive, dataset, exit_code, experiments};

/// Flags accepted both before and after the subcommand; later occurrences extend or
/// replace earlier ones.
#[derive(Debug, Clone, Default, Args)]
struct Common {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set method.a=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads for case-level parallelism; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn merge(&self, later: &Common) -> Common {
        Common {
            config: later.config.clone().or_else(|| self.config.clone()),
            overrides: self.overrides.iter().chain(&later.overrides).cloned().collect(),
            jobs: later.jobs.or(self.jobs),
        }
    }
}

/// Metal artifact reduction experiments with diffusion priors.
#[derive(Debug, Parser)]
#[command(name = "dudodp", version)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the test set.
    Gen(Plain),
    /// Build the template prior archive.
    BuildPrior(Plain),
    /// Run one method over the test set.
    Run(RunArgs),
    /// Compare the four fusion modes with constant masks.
    Ablate(Plain),
    /// Sweep the dynamic mask parameters.
    MaskSweep(Plain),
    /// Group table over completed runs.
    Report(ReportArgs),
    /// Print the effective config.
    Config(Plain),
}

#[derive(Debug, Args)]
struct Plain {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = Method::Dudodp)]
    method: Method,
    /// Run directory name; defaults to the method name.
    #[arg(long)]
    name: Option<String>,
    /// Only this case id.
    #[arg(long)]
    case: Option<String>,
    /// Also write the per-step prior images.
    #[arg(long)]
    emit_trace: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run names; every completed run when omitted.
    runs: Vec<String>,
    #[command(flatten)]
    common: Common,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen(a) | Command::BuildPrior(a) | Command::Ablate(a) | Command::MaskSweep(a) | Command::Config(a) => {
                &a.common
            }
            Command::Run(a) => &a.common,
            Command::Report(a) => &a.common,
        }
    }
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let base = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    Ok(base.with_overrides(&common.overrides)?)
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let common = cli.common.merge(cli.command.common());
    let config = load_config(&common)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs.unwrap_or(0))
        .build_global()
        .context("cannot start worker pool")?;
    match &cli.command {
        Command::Gen(_) => {
            dataset::generate(&config)?;
        }
        Command::BuildPrior(_) => {
            archive::build(&config)?;
        }
        Command::Run(RunArgs { method, name, case, emit_trace, .. }) => {
            let ctx = RunContext::open(&config, *method == Method::Dudodp)?;
            let mut desc = RunDescriptor::new(&config, *method);
            if let Some(name) = name {
                desc.name = name.clone();
            }
            desc.case = case.clone();
            desc.emit_trace = *emit_trace;
            ctx.execute(&desc)?;
        }
        Command::Ablate(_) => {
            let ctx = RunContext::open(&config, true)?;
            let report = experiments::ablate(&ctx)?;
            for row in &report.rows {
                log::info!("({}) {:16} {:.3} dB  SSIM {:.4}", row.label, row.mode.name(), row.psnr, row.ssim);
            }
        }
        Command::MaskSweep(_) => {
            let ctx = RunContext::open(&config, true)?;
            let report = experiments::mask_sweep(&ctx)?;
            log::info!(
                "best dynamic {:.3} dB, constant {:.3} dB, dynamic spread {:.3} dB",
                report.best_dynamic_psnr,
                report.constant_psnr,
                report.dynamic_spread_db
            );
        }
        Command::Report(ReportArgs { runs, .. }) => {
            let report = experiments::report(&config, runs)?;
            for m in &report.methods {
                log::info!("{:20} {:.3} dB  SSIM {:.4}  ({} cases)", m.method, m.overall.psnr, m.overall.ssim, m.overall.count);
            }
        }
        Command::Config(_) => {
            println!("{}", config.to_json());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            log::error!("{err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
