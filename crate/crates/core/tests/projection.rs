//! Under a misspecified working model the fitted parameter tracks the
//! maximizer of the population criterion `∫ log f(y; θ) f*(y) dy`.

use distline::detection::{DetectionCurve, DetectionModel};
use distline::fit::{fit_working_model, FitOptions};
use distline::geometry::{SamplingMode, StudyDesign};
use distline::rng::stream;
use distline::survey::{generate_population, run_survey, Placement};
use distline::{KeyFunction, ModelSpec, WorkingModel};
use statrs::function::erf::erf;

const W: f64 = 0.05;
const PROB: f64 = 0.3;
const BREAK: f64 = 0.02;

/// Second moment of the detected-distance density `g / ∫g` for the step curve.
fn step_second_moment() -> f64 {
    let mass = BREAK + PROB * (W - BREAK);
    (BREAK.powi(3) / 3.0 + PROB * (W.powi(3) - BREAK.powi(3)) / 3.0) / mass
}

/// Expected log of the truncated half-normal density under the step law.
fn criterion(sigma: f64) -> f64 {
    let z = sigma * (std::f64::consts::PI / 2.0).sqrt() * erf(W / (sigma * 2f64.sqrt()));
    -step_second_moment() / (2.0 * sigma * sigma) - z.ln()
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-12 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

fn sigma_hats(n: usize, k: usize, replicates: u64, seed: u64) -> Vec<f64> {
    let detection = DetectionModel::homogeneous(DetectionCurve::Step { prob: PROB, breakpoint: BREAK }).unwrap();
    let design = StudyDesign::new(W, k, SamplingMode::PlusSampling).unwrap();
    let model = WorkingModel::new(ModelSpec::new(KeyFunction::HalfNormalKey, 0), W).unwrap();
    (0..replicates)
        .map(|r| {
            let mut rng = stream(seed, r);
            let pop = generate_population(n, &[1.0], &Placement::UniformRandom, &mut rng).unwrap();
            let data = run_survey(&pop, &design, &detection, &mut rng).unwrap();
            let fit = fit_working_model(&model, &data, &FitOptions::default()).unwrap();
            assert!(fit.converged && !fit.boundary_flag);
            model.natural_key_params(&fit.theta_hat)[0]
        })
        .collect()
}

#[test]
fn half_normal_fit_to_step_data_converges_to_projection() {
    let sigma0 = golden_max(criterion, 0.2 * W, 5.0 * W);
    let mut previous_se = f64::INFINITY;
    for (n, k) in [(500, 40), (2000, 80)] {
        let s = sigma_hats(n, k, 40, 77 + n as u64);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let sd = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (s.len() - 1) as f64).sqrt();
        let se = sd / (s.len() as f64).sqrt();
        assert!((mean - sigma0).abs() < 3.0 * se, "n={n}: mean σ̂ {mean} vs σ₀ {sigma0} (se {se})");
        assert!(se < previous_se);
        previous_se = se;
    }
}
