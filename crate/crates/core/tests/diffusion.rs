use dudodp::diffusion::{
    analytic_denoise, ancestral_step, eps_to_x0, gaussian_field, make_schedule, posterior_params, retimed_step,
    rng_from_seed, sample_xt, subsequence_schedule, unconditional_sample, x0_to_eps, Denoiser, NoiseSchedule,
    TemplatePrior,
};
use ndarray::{arr2, Array2};
use proptest::prelude::*;
use rand::Rng;

// Exact rational products evaluated offline for the default schedule.
const ALPHA_BAR_2: f64 = 0.9997800920720721;
const ALPHA_BAR_10: f64 = 0.9981052047858346;
const ALPHA_BAR_500: f64 = 0.07858724288177824;
const ALPHA_BAR_1000: f64 = 4.0358297653756835e-05;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn rms(a: &Array2<f64>) -> f64 {
    (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt()
}

fn check_invariants(s: &NoiseSchedule) {
    let t_max = s.steps();
    let step = s.beta(2) - s.beta(1);
    for t in 2..=t_max {
        assert!(s.beta(t) > s.beta(t - 1));
        assert!((s.beta(t) - s.beta(t - 1) - step).abs() < 1e-12);
        assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        assert!((s.alpha_bar(t) - s.alpha_bar(t - 1) * (1.0 - s.beta(t))).abs() < 1e-15);
        let want = (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
        assert!((s.posterior_variance(t) - want).abs() <= 1e-15 * want.max(1e-300));
    }
    for t in 1..=t_max {
        let ab = s.alpha_bar(t);
        assert!(ab > 0.0 && ab < 1.0);
    }
}

#[test]
fn default_schedule_matches_exact_products() {
    let s = NoiseSchedule::default();
    check_invariants(&s);
    assert!((s.beta(2) - (1e-4 + (2e-2 - 1e-4) / 999.0)).abs() < 1e-18);
    assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-15);
    assert!(rel(s.alpha_bar(2), ALPHA_BAR_2) < 1e-12);
    assert!(rel(s.alpha_bar(10), ALPHA_BAR_10) < 1e-12);
    assert!(rel(s.alpha_bar(500), ALPHA_BAR_500) < 1e-10);
    assert!(rel(s.alpha_bar(1000), ALPHA_BAR_1000) < 1e-9);
    assert!(s.alpha_bar(1000) < 1e-2);
}

proptest! {
    #[test]
    fn random_schedules_satisfy_invariants(steps in 2usize..400, lo in 1e-6f64..1e-2, span in 1e-4f64..0.3) {
        let s = make_schedule(steps, lo, lo + span).unwrap();
        check_invariants(&s);
    }

    #[test]
    fn eps_and_x0_conversions_are_inverse(seed in 0u64..10_000, t in 1usize..=1000) {
        let s = NoiseSchedule::default();
        let mut rng = rng_from_seed(seed);
        let x_t = gaussian_field((4, 5), &mut rng);
        let e = gaussian_field((4, 5), &mut rng);
        let back = x0_to_eps(&x_t, &eps_to_x0(&x_t, &e, t, &s).unwrap(), t, &s).unwrap();
        for (a, b) in back.iter().zip(&e) {
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()) * (1.0 / s.alpha_bar(t).sqrt()));
        }
    }

    #[test]
    fn denoiser_output_is_convex_combination(seed in 0u64..10_000, t in 1usize..=1000, k in 1usize..6) {
        let s = NoiseSchedule::default();
        let mut rng = rng_from_seed(seed);
        let templates: Vec<_> = (0..k).map(|_| gaussian_field((3, 3), &mut rng)).collect();
        let x_t = gaussian_field((3, 3), &mut rng);
        let out = TemplatePrior::new(templates.clone()).unwrap().analytic_denoise(&x_t, t, &s).unwrap();
        for ((i, j), v) in out.indexed_iter() {
            let lo = templates.iter().map(|c| c[[i, j]]).fold(f64::INFINITY, f64::min);
            let hi = templates.iter().map(|c| c[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }
}

#[test]
fn forward_sample_limits() {
    let s = NoiseSchedule::default();
    let x0 = arr2(&[[0.5, -0.25], [1.0, 0.0]]);
    let zero = Array2::zeros((2, 2));
    let a = s.alpha_bar(300).sqrt();
    assert_eq!(sample_xt(&x0, 300, &zero, &s).unwrap(), x0.mapv(|v| a * v));
    let x_t = sample_xt(&x0, 1000, &zero, &s).unwrap();
    assert!(rms(&x_t) <= 0.1 * rms(&x0));
    assert!(sample_xt(&x0, 0, &zero, &s).is_err());
    assert!(sample_xt(&x0, 1001, &zero, &s).is_err());
}

#[test]
fn forward_sample_monte_carlo_mean() {
    let s = NoiseSchedule::default();
    let t = 400;
    let x0 = arr2(&[[0.8, -0.3, 0.1], [-1.0, 0.0, 0.45]]);
    let n = 10_000;
    let mut rng = rng_from_seed(17);
    let mut sum = Array2::<f64>::zeros((2, 3));
    for _ in 0..n {
        sum += &sample_xt(&x0, t, &gaussian_field((2, 3), &mut rng), &s).unwrap();
    }
    let se = (1.0 - s.alpha_bar(t)).sqrt() / (n as f64).sqrt();
    for (m, x) in sum.iter().zip(&x0) {
        let mean = m / n as f64;
        assert!((mean - s.alpha_bar(t).sqrt() * x).abs() < 3.0 * se, "mean {mean} off by > 3 SE");
    }
}

#[test]
fn posterior_identities() {
    let s = NoiseSchedule::default();
    let mut rng = rng_from_seed(3);
    let x0 = gaussian_field((3, 3), &mut rng);
    let x_t = gaussian_field((3, 3), &mut rng);
    let (mean, var) = posterior_params(&x_t, &x0, 1, &s).unwrap();
    assert_eq!(mean, x0);
    assert_eq!(var, 0.0);
    for t in [2, 10, 250, 999, 1000] {
        let scaled = x0.mapv(|v| s.alpha_bar(t).sqrt() * v);
        let (mean, var) = posterior_params(&scaled, &x0, t, &s).unwrap();
        let want = s.alpha_bar(t - 1).sqrt();
        for (m, x) in mean.iter().zip(&x0) {
            assert!((m - want * x).abs() < 1e-12, "t={t}");
        }
        assert_eq!(var, s.posterior_variance(t));
        let c = Array2::from_elem((2, 2), 0.7);
        let (mc, _) = posterior_params(&c.mapv(|v| s.alpha_bar(t).sqrt() * v), &c, t, &s).unwrap();
        assert!(mc.iter().all(|v| (v - want * 0.7).abs() < 1e-12));
    }
    assert!(posterior_params(&x_t, &x0, 0, &s).is_err());
}

#[test]
fn ancestral_step_final_and_variance() {
    let s = NoiseSchedule::default();
    let mut rng = rng_from_seed(5);
    let x_t = gaussian_field((2, 2), &mut rng);
    let f = gaussian_field((2, 2), &mut rng);
    let noise = gaussian_field((2, 2), &mut rng);
    assert_eq!(ancestral_step(&x_t, &f, 1, &noise, &s).unwrap(), f);

    let t = 700;
    let zero = Array2::zeros((1, 1));
    let (x, fx) = (Array2::from_elem((1, 1), 0.4), Array2::from_elem((1, 1), -0.2));
    let mean = ancestral_step(&x, &fx, t, &zero, &s).unwrap()[[0, 0]];
    let n = 10_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| ancestral_step(&x, &fx, t, &gaussian_field((1, 1), &mut rng), &s).unwrap()[[0, 0]])
        .collect();
    let m = draws.iter().sum::<f64>() / n as f64;
    let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(rel(v, s.posterior_variance(t)) < 0.05, "variance {v}");
    assert!((m - mean).abs() < 3.0 * (s.posterior_variance(t) / n as f64).sqrt());
}

#[test]
fn conversions_agree_with_forward_sample() {
    let s = NoiseSchedule::default();
    let mut rng = rng_from_seed(9);
    let x0 = gaussian_field((4, 4), &mut rng);
    let e = gaussian_field((4, 4), &mut rng);
    let zero = Array2::zeros((4, 4));
    for t in [1, 37, 500, 1000] {
        let x_t = sample_xt(&x0, t, &e, &s).unwrap();
        let back = eps_to_x0(&x_t, &e, t, &s).unwrap();
        assert!(back.iter().zip(&x0).all(|(a, b)| (a - b).abs() < 1e-8));
        let plain = eps_to_x0(&x_t, &zero, t, &s).unwrap();
        assert!(plain.iter().zip(&x_t).all(|(a, b)| (a - b / s.alpha_bar(t).sqrt()).abs() < 1e-12));
    }
}

#[test]
fn template_denoiser_closed_forms() {
    let s = NoiseSchedule::default();
    let c1 = arr2(&[[1.0, -1.0], [0.5, 0.0]]);
    let c2 = arr2(&[[-1.0, 1.0], [0.5, 0.0]]);
    let p = TemplatePrior::new(vec![c1.clone(), c2.clone()]).unwrap();
    // x_t is equidistant from sqrt(abar) c1 and sqrt(abar) c2.
    let x_t = arr2(&[[0.0, 0.0], [0.3, -2.0]]);
    let out = analytic_denoise(&p, &x_t, 200, &s).unwrap();
    let mid = (&c1 + &c2) / 2.0;
    assert!(out.iter().zip(&mid).all(|(a, b)| (a - b).abs() < 1e-15));
    assert!(TemplatePrior::new(vec![]).is_err());
}

#[test]
fn template_denoiser_matches_brute_force_bayes() {
    // Monte Carlo Bayes rule: draw x0 from the prior, weight by the Gaussian likelihood.
    let s = NoiseSchedule::default();
    let mut rng = rng_from_seed(23);
    for trial in 0..5 {
        let templates: Vec<Array2<f64>> = (0..3).map(|_| gaussian_field((1, 2), &mut rng) * 0.6).collect();
        let t = [150, 300, 450, 600, 800][trial];
        let x_t = gaussian_field((1, 2), &mut rng);
        let prior = TemplatePrior::new(templates.clone()).unwrap();
        let exact = prior.analytic_denoise(&x_t, t, &s).unwrap();

        let (a, var) = (s.alpha_bar(t).sqrt(), 1.0 - s.alpha_bar(t));
        let (mut num, mut den) = ([0.0f64; 2], 0.0f64);
        for _ in 0..1_000_000 {
            let c = &templates[rng.random_range(0..3)];
            let d2 = (x_t[[0, 0]] - a * c[[0, 0]]).powi(2) + (x_t[[0, 1]] - a * c[[0, 1]]).powi(2);
            let w = (-d2 / (2.0 * var)).exp();
            num[0] += w * c[[0, 0]];
            num[1] += w * c[[0, 1]];
            den += w;
        }
        for p in 0..2 {
            let mc = num[p] / den;
            let scale = templates.iter().map(|c| c[[0, p]].abs()).fold(0.0, f64::max);
            assert!((exact[[0, p]] - mc).abs() <= 0.01 * scale, "trial {trial}: {} vs {mc}", exact[[0, p]]);
        }
    }
}

#[test]
fn template_denoiser_recovers_at_small_noise() {
    let s = NoiseSchedule::default();
    let sep = 10.0 * (1.0 - s.alpha_bar(1)).sqrt();
    let c: Vec<Array2<f64>> = (0..4).map(|k| Array2::from_elem((2, 2), k as f64 * sep)).collect();
    let p = TemplatePrior::new(c.clone()).unwrap();
    for cj in &c {
        let x_t = cj.mapv(|v| s.alpha_bar(1).sqrt() * v);
        let out = p.analytic_denoise(&x_t, 1, &s).unwrap();
        assert!(out.iter().zip(cj).all(|(a, b)| (a - b).abs() < 1e-6));
    }
}

struct Recorder {
    prior: TemplatePrior,
    calls: Vec<(usize, Array2<f64>)>,
}

impl Denoiser for Recorder {
    fn denoise(&mut self, x_t: &Array2<f64>, t: usize, s: &NoiseSchedule) -> dudodp::Result<Array2<f64>> {
        self.calls.push((t, x_t.clone()));
        self.prior.analytic_denoise(x_t, t, s)
    }
}

#[test]
fn full_length_deterministic_sampler_is_mean_iteration() {
    let s = make_schedule(50, 1e-3, 0.2).unwrap();
    let mut rng = rng_from_seed(1);
    let prior = TemplatePrior::new((0..3).map(|_| gaussian_field((2, 3), &mut rng)).collect()).unwrap();
    let out = unconditional_sample(&mut &prior, &s, (2, 3), 50, 0.0, 77).unwrap();

    let mut rng = rng_from_seed(77);
    let mut x = gaussian_field((2, 3), &mut rng);
    for t in (1..=50).rev() {
        let f = prior.analytic_denoise(&x, t, &s).unwrap();
        x = posterior_params(&x, &f, t, &s).unwrap().0;
    }
    assert_eq!(out, x);
}

#[test]
fn single_step_sampler_returns_first_prediction() {
    let s = NoiseSchedule::default();
    let mut rng = rng_from_seed(2);
    let prior = TemplatePrior::new((0..3).map(|_| gaussian_field((2, 2), &mut rng)).collect()).unwrap();
    let mut rec = Recorder { prior, calls: vec![] };
    let out = unconditional_sample(&mut rec, &s, (2, 2), 1, 1.0, 4).unwrap();
    assert_eq!(rec.calls.len(), 1);
    assert_eq!(rec.calls[0].0, 1000);
    let first = rec.prior.analytic_denoise(&rec.calls[0].1, 1000, &s).unwrap();
    assert_eq!(out, first);
}

#[test]
fn sampler_visits_strided_steps_and_is_seeded() {
    let s = NoiseSchedule::default();
    let mut rng = rng_from_seed(3);
    let prior = TemplatePrior::new((0..4).map(|_| gaussian_field((3, 3), &mut rng)).collect()).unwrap();
    let mut rec = Recorder { prior: prior.clone(), calls: vec![] };
    let a = unconditional_sample(&mut rec, &s, (3, 3), 100, 1.0, 9).unwrap();
    let visited: Vec<usize> = rec.calls.iter().map(|c| c.0).collect();
    assert_eq!(visited, subsequence_schedule(&s, 100).unwrap());
    let b = unconditional_sample(&mut &prior, &s, (3, 3), 100, 1.0, 9).unwrap();
    assert_eq!(a, b);
    let c = unconditional_sample(&mut &prior, &s, (3, 3), 100, 1.0, 10).unwrap();
    assert_ne!(a, c);
}

#[test]
fn retimed_step_shapes_checked() {
    let s = NoiseSchedule::default();
    let a = Array2::zeros((2, 2));
    let b = Array2::zeros((2, 3));
    assert!(retimed_step(&a, &b, 10, 5, &a, 1.0, &s).is_err());
    assert!(retimed_step(&a, &a, 10, 10, &a, 1.0, &s).is_err());
}
