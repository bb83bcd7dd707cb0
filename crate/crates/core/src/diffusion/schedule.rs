use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_shape, Error, Result};

/// Variance used for the reverse-process noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaChoice {
    /// The true posterior variance `beta_tilde_t`.
    #[default]
    BetaTilde,
    /// The forward variance `beta_t`.
    Beta,
}

/// Linear DDPM schedule. All accessors are 1-indexed by timestep; `alpha_bar(0)` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_bar: Vec<f64>,
    posterior_variances: Vec<f64>,
    sigma_choice: SigmaChoice,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(1000, 1e-4, 2e-2).expect("default schedule is valid")
    }
}

/// Builds a schedule whose betas rise linearly from `beta_1` to `beta_t`.
pub fn make_schedule(steps: usize, beta_1: f64, beta_t: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::Config(format!("schedule needs at least 2 steps, got {steps}")));
    }
    if !(0.0 < beta_1 && beta_1 < beta_t && beta_t < 1.0) {
        return Err(Error::Config(format!("need 0 < beta_1 < beta_T < 1, got {beta_1}, {beta_t}")));
    }
    let step = (beta_t - beta_1) / (steps - 1) as f64;
    let betas: Vec<f64> = (0..steps).map(|i| beta_1 + i as f64 * step).collect();
    let mut alphas_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alphas_bar.push(acc);
    }
    let posterior_variances = (0..steps)
        .map(|i| if i == 0 { 0.0 } else { (1.0 - alphas_bar[i - 1]) / (1.0 - alphas_bar[i]) * betas[i] })
        .collect();
    Ok(NoiseSchedule { betas, alphas_bar, posterior_variances, sigma_choice: SigmaChoice::BetaTilde })
}

impl NoiseSchedule {
    pub fn with_sigma_choice(mut self, choice: SigmaChoice) -> Self {
        self.sigma_choice = choice;
        self
    }

    pub fn sigma_choice(&self) -> SigmaChoice {
        self.sigma_choice
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphas_bar[t - 1]
        }
    }

    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.posterior_variances[t - 1]
    }

    /// Reverse-process variance for the adjacent step `t -> t-1`.
    pub fn sigma2(&self, t: usize) -> f64 {
        match self.sigma_choice {
            SigmaChoice::BetaTilde => self.posterior_variance(t),
            SigmaChoice::Beta => {
                if t == 1 {
                    0.0
                } else {
                    self.beta(t)
                }
            }
        }
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Contract(format!("timestep {t} outside [1, {}]", self.steps())));
        }
        Ok(())
    }
}

fn check_pair(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    ensure_shape(what, b.dim(), a.dim())
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn sample_xt(x0: &Array2<f64>, t: usize, eps: &Array2<f64>, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
    schedule.check_step(t)?;
    check_pair(x0, eps, "noise")?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(x0).and(eps).map_collect(|&x, &e| a * x + b * e))
}

/// Mean coefficients `(c_x0, c_xt)` and variance of `q(x_{t_prev} | x_t, x0)`.
///
/// Adjacent steps use `beta_t` directly; longer jumps use the effective
/// `beta' = 1 - abar_t / abar_prev`. A jump to 0 returns `x0` with zero variance.
pub fn posterior_coefficients(t: usize, t_prev: usize, schedule: &NoiseSchedule) -> Result<(f64, f64, f64)> {
    schedule.check_step(t)?;
    if t_prev >= t {
        return Err(Error::Contract(format!("t_prev {t_prev} must be below t {t}")));
    }
    if t_prev == 0 {
        return Ok((1.0, 0.0, 0.0));
    }
    let ab_t = schedule.alpha_bar(t);
    let ab_p = schedule.alpha_bar(t_prev);
    let beta = if t_prev + 1 == t { schedule.beta(t) } else { 1.0 - ab_t / ab_p };
    let alpha = 1.0 - beta;
    let c_x0 = ab_p.sqrt() * beta / (1.0 - ab_t);
    let c_xt = alpha.sqrt() * (1.0 - ab_p) / (1.0 - ab_t);
    let var = if t_prev + 1 == t {
        schedule.sigma2(t)
    } else {
        match schedule.sigma_choice() {
            SigmaChoice::BetaTilde => (1.0 - ab_p) / (1.0 - ab_t) * beta,
            SigmaChoice::Beta => beta,
        }
    };
    Ok((c_x0, c_xt, var))
}

/// Mean and variance of `q(x_{t-1} | x_t, x0)`.
pub fn posterior_params(
    x_t: &Array2<f64>,
    x0: &Array2<f64>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<(Array2<f64>, f64)> {
    check_pair(x_t, x0, "x0")?;
    schedule.check_step(t)?;
    let (cx0, cxt, var) = posterior_coefficients(t, t - 1, schedule)?;
    let mean = if t == 1 { x0.clone() } else { Zip::from(x0).and(x_t).map_collect(|&a, &b| cx0 * a + cxt * b) };
    Ok((mean, var))
}

/// Draws `x_{t_prev}` from the (possibly retimed) posterior given the prediction `f`.
/// `eta` scales the posterior standard deviation; `eta = 0` is deterministic.
pub fn retimed_step(
    x_t: &Array2<f64>,
    f: &Array2<f64>,
    t: usize,
    t_prev: usize,
    noise: &Array2<f64>,
    eta: f64,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    check_pair(x_t, f, "prediction")?;
    check_pair(x_t, noise, "noise")?;
    let (cx0, cxt, var) = posterior_coefficients(t, t_prev, schedule)?;
    if t_prev == 0 {
        return Ok(f.clone());
    }
    let sd = eta * var.sqrt();
    Ok(Zip::from(f).and(x_t).and(noise).map_collect(|&a, &b, &z| cx0 * a + cxt * b + sd * z))
}

/// One ancestral step `x_{t-1} = mean + sigma_t noise`; at `t = 1` returns `f` exactly.
pub fn ancestral_step(
    x_t: &Array2<f64>,
    f: &Array2<f64>,
    t: usize,
    noise: &Array2<f64>,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    schedule.check_step(t)?;
    retimed_step(x_t, f, t, t - 1, noise, 1.0, schedule)
}

/// `f = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`.
pub fn eps_to_x0(x_t: &Array2<f64>, eps: &Array2<f64>, t: usize, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
    schedule.check_step(t)?;
    check_pair(x_t, eps, "eps")?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(x_t).and(eps).map_collect(|&x, &e| (x - b * e) / a))
}

pub fn x0_to_eps(x_t: &Array2<f64>, x0: &Array2<f64>, t: usize, schedule: &NoiseSchedule) -> Result<Array2<f64>> {
    schedule.check_step(t)?;
    check_pair(x_t, x0, "x0")?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(x_t).and(x0).map_collect(|&x, &f| (x - a * f) / b))
}

/// `k` strictly decreasing timesteps starting at `T` with stride `floor(T/k)`; the last
/// element is 1 when `k >= 2`. `k = T` gives `[T, T-1, ..., 1]`.
pub fn subsequence_schedule(schedule: &NoiseSchedule, k: usize) -> Result<Vec<usize>> {
    let total = schedule.steps();
    if k == 0 || k > total {
        return Err(Error::Config(format!("step count {k} outside [1, {total}]")));
    }
    let stride = total / k;
    let mut steps: Vec<usize> = (0..k).map(|i| total - i * stride).collect();
    if k >= 2 {
        steps[k - 1] = 1;
    }
    Ok(steps)
}
