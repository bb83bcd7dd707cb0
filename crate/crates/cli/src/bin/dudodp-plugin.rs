//! Reference denoiser plugins for the line-delimited JSON protocol.
//!
//! `echo` returns its input. `template` computes the posterior mean of a template archive
//! from first principles, as an out-of-process cross-check of the in-process prior.
//! `--exit-after` and `--hang-after` inject failures.

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use dudodp::diffusion::{PluginRequest, PluginResponse};
use dudodp::tomography::io::{read_field, write_field};
use ndarray::{s, Array2};

#[derive(Debug, Parser)]
#[command(name = "dudodp-plugin")]
struct Cli {
    /// Exit without answering the Nth denoise request.
    #[arg(long)]
    exit_after: Option<u64>,
    /// Stop answering from the Nth denoise request on.
    #[arg(long)]
    hang_after: Option<u64>,
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Debug, Subcommand)]
enum Mode {
    Echo,
    Template {
        /// Directory holding `prior.json` and the stacked templates.
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        beta_start: f64,
        #[arg(long, default_value_t = 2e-2)]
        beta_end: f64,
    },
}

struct Templates {
    images: Vec<Array2<f64>>,
    beta_start: f64,
    beta_end: f64,
    alpha_bar: Vec<f64>,
}

impl Templates {
    fn load(dir: &Path, beta_start: f64, beta_end: f64) -> anyhow::Result<Self> {
        let desc: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("prior.json"))?)?;
        let k = desc["templates"].as_u64().ok_or_else(|| anyhow!("prior.json lacks templates"))? as usize;
        let file = desc["file"].as_str().ok_or_else(|| anyhow!("prior.json lacks file"))?;
        let (stacked, _) = read_field(&dir.join(file))?;
        let h = stacked.nrows() / k;
        let images = (0..k).map(|i| stacked.slice(s![i * h..(i + 1) * h, ..]).to_owned()).collect();
        Ok(Templates { images, beta_start, beta_end, alpha_bar: Vec::new() })
    }

    fn set_steps(&mut self, steps: usize) {
        let mut acc = 1.0;
        self.alpha_bar = (1..=steps)
            .map(|t| {
                let beta = self.beta_start + (self.beta_end - self.beta_start) * (t - 1) as f64 / (steps - 1) as f64;
                acc *= 1.0 - beta;
                acc
            })
            .collect();
    }

    fn posterior_mean(&self, x: &Array2<f64>, t: usize) -> anyhow::Result<Array2<f64>> {
        if t == 0 || t > self.alpha_bar.len() {
            bail!("timestep {t} outside 1..={}", self.alpha_bar.len());
        }
        let ab = self.alpha_bar[t - 1];
        let scale = ab.sqrt();
        let log_w: Vec<f64> = self
            .images
            .iter()
            .map(|c| {
                let d2: f64 = x.iter().zip(c.iter()).map(|(&xv, &cv)| (xv - scale * cv).powi(2)).sum();
                -d2 / (2.0 * (1.0 - ab))
            })
            .collect();
        let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut out = Array2::<f64>::zeros(x.dim());
        for (c, wk) in self.images.iter().zip(&w) {
            out = out + c * (wk / total);
        }
        Ok(out)
    }
}

fn reply(out: &mut impl Write, msg: &PluginResponse) -> io::Result<()> {
    writeln!(out, "{}", serde_json::to_string(msg).expect("responses serialize"))?;
    out.flush()
}

fn serve(cli: &Cli) -> anyhow::Result<()> {
    let mut templates = match &cli.mode {
        Mode::Echo => None,
        Mode::Template { archive, beta_start, beta_end } => Some(
            Templates::load(archive, *beta_start, *beta_end)
                .with_context(|| format!("cannot load archive {}", archive.display()))?,
        ),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut served = 0u64;
    for line in io::stdin().lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: PluginRequest = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                reply(&mut out, &PluginResponse::Error(format!("bad request: {e}")))?;
                continue;
            }
        };
        match request {
            PluginRequest::Hello { steps, .. } => {
                if let Some(tp) = templates.as_mut() {
                    tp.set_steps(steps);
                }
                reply(&mut out, &PluginResponse::Ready(true))?;
            }
            PluginRequest::Denoise { t, file } => {
                served += 1;
                if cli.exit_after == Some(served) {
                    std::process::exit(9);
                }
                if cli.hang_after.is_some_and(|n| served >= n) {
                    loop {
                        thread::sleep(Duration::from_secs(3600));
                    }
                }
                let (x, header) = read_field(&file)?;
                let f = match &templates {
                    None => x,
                    Some(tp) => match tp.posterior_mean(&x, t) {
                        Ok(f) => f,
                        Err(e) => {
                            reply(&mut out, &PluginResponse::Error(e.to_string()))?;
                            continue;
                        }
                    },
                };
                let mut out_file = file.clone().into_os_string();
                out_file.push(".out.f32");
                let out_file = PathBuf::from(out_file);
                write_field(&out_file, &f, &header)?;
                reply(&mut out, &PluginResponse::Done { file: out_file })?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match serve(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dudodp-plugin: {e:#}");
            ExitCode::FAILURE
        }
    }
}
