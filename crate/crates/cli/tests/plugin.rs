use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dudodp::diffusion::{gaussian_field, rng_from_seed, Denoiser, NoiseSchedule, PluginDenoiser};
use dudodp::tomography::io::{decode_f32, encode_f32};
use dudodp::Error;
use dudodp_cli::archive;
use dudodp_cli::config::ExperimentConfig;
use tempfile::TempDir;

fn plugin(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dudodp-plugin"));
    cmd.args(args);
    cmd
}

fn f32_exact(x: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    decode_f32(&encode_f32(x), x.dim()).unwrap()
}

#[test]
fn echo_round_trips_bit_exact() {
    let schedule = NoiseSchedule::default();
    let mut p = PluginDenoiser::spawn(plugin(&["echo"]), (16, 12), 1000, Duration::from_secs(10)).unwrap();
    let mut rng = rng_from_seed(3);
    for t in [1, 500, 1000] {
        let x = f32_exact(&gaussian_field((16, 12), &mut rng));
        let y = p.denoise(&x, t, &schedule).unwrap();
        assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

fn archive_in(dir: &Path, templates: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.output = dir.to_path_buf();
    c.geometry.image_size = 24;
    c.geometry.n_bins = 37;
    c.prior.templates = templates;
    archive::build(&c).unwrap();
    c
}

#[test]
fn template_plugin_matches_in_process_prior() {
    let tmp = TempDir::new().unwrap();
    let c = archive_in(tmp.path(), 6);
    let (mut prior, _) = archive::load(&c.prior_dir()).unwrap();
    let schedule = NoiseSchedule::default();
    let dir = c.prior_dir();
    let mut p = PluginDenoiser::spawn(
        plugin(&["template", "--archive", dir.to_str().unwrap()]),
        (24, 24),
        1000,
        Duration::from_secs(10),
    )
    .unwrap();
    let mut rng = rng_from_seed(9);
    let mut worst = 0.0f64;
    for t in [1, 10, 100, 400, 618, 900, 1000] {
        let x = f32_exact(&gaussian_field((24, 24), &mut rng));
        let inproc = prior.denoise(&x, t, &schedule).unwrap();
        let outproc = p.denoise(&x, t, &schedule).unwrap();
        let err = inproc.iter().zip(&outproc).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err);
    }
    assert!(worst < 1e-6, "max deviation {worst}");
}

#[test]
fn killed_plugin_is_a_denoiser_error() {
    let schedule = NoiseSchedule::default();
    let mut p = PluginDenoiser::spawn(plugin(&["--exit-after", "2", "echo"]), (8, 8), 1000, Duration::from_secs(10)).unwrap();
    let x = ndarray::Array2::zeros((8, 8));
    p.denoise(&x, 10, &schedule).unwrap();
    let start = Instant::now();
    assert!(matches!(p.denoise(&x, 9, &schedule), Err(Error::DenoiserUnavailable(_))));
    assert!(start.elapsed() < Duration::from_secs(10));
    assert!(matches!(p.denoise(&x, 8, &schedule), Err(Error::DenoiserUnavailable(_))));
}

#[test]
fn hung_plugin_times_out() {
    let schedule = NoiseSchedule::default();
    let mut p =
        PluginDenoiser::spawn(plugin(&["--hang-after", "1", "echo"]), (8, 8), 1000, Duration::from_millis(300)).unwrap();
    let start = Instant::now();
    let err = p.denoise(&ndarray::Array2::zeros((8, 8)), 5, &schedule).unwrap_err();
    assert!(matches!(err, Error::DenoiserUnavailable(_)), "{err}");
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn missing_plugin_executable_is_a_denoiser_error() {
    let cmd = Command::new("/nonexistent/dudodp-denoiser");
    assert!(matches!(
        PluginDenoiser::spawn(cmd, (8, 8), 1000, Duration::from_secs(1)),
        Err(Error::DenoiserUnavailable(_))
    ));
}
