//! M-estimation of the working-model parameters by maximizing the pooled
//! detected-distance log-likelihood `Σ_j Σ_{y∈Y_j} log f(y; θ)`.
//!
//! The maximizer is a BFGS quasi-Newton iteration with backtracking line
//! search, run from several jittered starting points. The curvature matrix
//! `V̂` is the Hessian of the pooled criterion at `θ̂`, taken by central
//! differences of the analytic gradient.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::density::{KeyFunction, ModelSpec, Theta, WorkingModel, MAX_ADJUSTMENTS};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::survey::SurveyData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub n_starts: usize,
    /// Seed of the jitter applied to starts after the first.
    pub jitter_seed: u64,
    /// Starting point; method-of-moments default when absent.
    pub init: Option<Theta>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            n_starts: 5,
            jitter_seed: 0x5eed,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub truncation: f64,
    pub theta_hat: Theta,
    pub loglik: f64,
    /// Hessian of the pooled log-likelihood at `theta_hat`, row-major.
    pub v_hat: Vec<f64>,
    pub converged: bool,
    pub n_detections_used: usize,
    pub boundary_flag: bool,
    pub iterations: usize,
    pub gradient_max_norm: f64,
    /// Largest log-likelihood gap between converged starts.
    pub multistart_loglik_spread: f64,
    /// Largest Euclidean distance from `theta_hat` to another converged optimum.
    pub multistart_theta_spread: f64,
}

impl FitResult {
    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn v_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.v_hat)
    }

    pub fn model(&self) -> Result<WorkingModel> {
        WorkingModel::new(self.spec.clone(), self.truncation)
    }
}

/// Pooled detected distances with their cosine basis precomputed.
pub(crate) struct PooledSample {
    ys: Vec<f64>,
    cos: Vec<f64>,
    m: usize,
}

impl PooledSample {
    pub(crate) fn new(model: &WorkingModel, ys: impl Iterator<Item = f64>) -> Self {
        let ys: Vec<f64> = ys.collect();
        let m = model.num_adjustments();
        let mut cos = vec![0.0; ys.len() * m];
        if m > 0 {
            for (y, chunk) in ys.iter().zip(cos.chunks_mut(m)) {
                model.cosines(*y, chunk);
            }
        }
        Self { ys, cos, m }
    }

    fn len(&self) -> usize {
        self.ys.len()
    }

    fn cos(&self, i: usize) -> &[f64] {
        &self.cos[i * self.m..(i + 1) * self.m]
    }
}

/// Log-likelihood and gradient; `−∞` for infeasible or degenerate θ.
pub(crate) fn loglik_and_grad(model: &WorkingModel, sample: &PooledSample, theta: &Theta) -> (f64, Vec<f64>) {
    let d = model.dim();
    let fail = (f64::NEG_INFINITY, vec![0.0; d]);
    if theta.0.iter().any(|x| !x.is_finite()) || !model.is_feasible(theta) {
        return fail;
    }
    let norm = match model.normalizer(theta) {
        Ok(n) => n,
        Err(_) => return fail,
    };
    let t = theta.as_slice();
    let mut grad = vec![0.0; d];
    let mut gu = [0.0; 2 + MAX_ADJUSTMENTS];
    let mut sum_log = 0.0;
    for i in 0..sample.len() {
        let (u, _) = model.unnormalized_with_grad(t, sample.ys[i], sample.cos(i), &mut gu[..d]);
        if !(u > 0.0) {
            return fail;
        }
        sum_log += u.ln();
        for (g, x) in grad.iter_mut().zip(&gu[..d]) {
            *g += x / u;
        }
    }
    let n = sample.len() as f64;
    for (g, gz) in grad.iter_mut().zip(&norm.grad) {
        *g -= n * gz / norm.z;
    }
    (sum_log - n * norm.z.ln(), grad)
}

/// `Σ_j Σ_{y∈Y_j} log f(y; θ)`; `−∞` when θ is infeasible.
pub fn pooled_loglik(model: &WorkingModel, theta: &Theta, data: &SurveyData) -> Result<f64> {
    if data.total_detections() == 0 {
        return Err(Error::NoDetections);
    }
    if theta.len() != model.dim() {
        return Err(Error::InvalidModel(format!(
            "θ has {} entries, model needs {}",
            theta.len(),
            model.dim()
        )));
    }
    let sample = PooledSample::new(model, data.distances());
    Ok(loglik_and_grad(model, &sample, theta).0)
}

/// Gradient of the pooled log-likelihood.
pub fn pooled_score(model: &WorkingModel, theta: &Theta, data: &SurveyData) -> Result<Vec<f64>> {
    if data.total_detections() == 0 {
        return Err(Error::NoDetections);
    }
    let sample = PooledSample::new(model, data.distances());
    let (l, g) = loglik_and_grad(model, &sample, theta);
    if l.is_finite() {
        Ok(g)
    } else {
        Err(Error::InvalidModel("θ is infeasible".into()))
    }
}

fn default_init(model: &WorkingModel, sample: &PooledSample) -> Theta {
    let w = model.truncation();
    let n = sample.len().max(1) as f64;
    let rms = (sample.ys.iter().map(|y| y * y).sum::<f64>() / n).sqrt();
    let sigma = rms.clamp(1e-3 * w, 10.0 * w);
    let key: Vec<f64> = match model.spec().key {
        KeyFunction::UniformKey => vec![],
        KeyFunction::HalfNormalKey => vec![sigma],
        KeyFunction::HazardRateKey => vec![sigma, 3.0],
    };
    let key = model.spec().key_params_init.clone().unwrap_or(key);
    model
        .theta_from_natural(&key, &vec![0.0; model.num_adjustments()])
        .expect("dimensions match the model")
}

fn tolerance(loglik: f64) -> f64 {
    1e-8 * (1.0 + loglik.abs())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Run {
    theta: Theta,
    loglik: f64,
    grad: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// BFGS on `−L` with an inverse-Hessian approximation.
fn maximize(model: &WorkingModel, sample: &PooledSample, start: Theta, max_iter: usize) -> Run {
    let d = model.dim();
    let mut x = start;
    let (mut l, mut g) = loglik_and_grad(model, sample, &x);
    if !l.is_finite() {
        return Run {
            theta: x,
            loglik: l,
            grad: g,
            converged: false,
            iterations: 0,
        };
    }
    let identity = DMatrix::<f64>::identity(d, d);
    let mut h = identity.clone();
    let mut h_is_identity = true;

    for iter in 0..max_iter {
        if max_abs(&g) < tolerance(l) {
            return Run {
                theta: x,
                loglik: l,
                grad: g,
                converged: true,
                iterations: iter,
            };
        }
        // ascent direction on L: p = H ∇L
        let gv = nalgebra::DVector::from_column_slice(&g);
        let mut p: Vec<f64> = (&h * &gv).iter().copied().collect();
        if dot(&p, &g) <= 0.0 {
            h = identity.clone();
            h_is_identity = true;
            p = g.clone();
        }
        let cap = max_abs(&p);
        if cap > 1.0 {
            p.iter_mut().for_each(|v| *v /= cap);
        }
        let slope = dot(&p, &g);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = Theta(x.0.iter().zip(&p).map(|(a, b)| a + step * b).collect());
            let (lt, gt) = loglik_and_grad(model, sample, &trial);
            if lt.is_finite() {
                let armijo = lt >= l + 1e-4 * step * slope;
                // flat within rounding but with a smaller gradient
                let flat = (lt - l).abs() <= 1e-13 * l.abs().max(1.0) && max_abs(&gt) < max_abs(&g);
                if armijo || flat {
                    accepted = Some((trial, lt, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, l_new, g_new)) = accepted else {
            if h_is_identity {
                return Run {
                    theta: x,
                    loglik: l,
                    grad: g,
                    converged: false,
                    iterations: iter,
                };
            }
            h = identity.clone();
            h_is_identity = true;
            continue;
        };

        // curvature pair for the minimization of −L
        let s: Vec<f64> = x_new.0.iter().zip(&x.0).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            let sv = nalgebra::DVector::from_vec(s);
            let yvv = nalgebra::DVector::from_vec(yv);
            if h_is_identity {
                h = &identity * (sy / yvv.dot(&yvv));
            }
            let rho = 1.0 / sy;
            let left = &identity - (&sv * yvv.transpose()) * rho;
            let right = &identity - (&yvv * sv.transpose()) * rho;
            h = &left * &h * &right + (&sv * sv.transpose()) * rho;
            h_is_identity = false;
        }
        x = x_new;
        l = l_new;
        g = g_new;
    }
    let converged = max_abs(&g) < tolerance(l);
    Run {
        theta: x,
        loglik: l,
        grad: g,
        converged,
        iterations: max_iter,
    }
}

fn jittered<R: Rng>(model: &WorkingModel, base: &Theta, rng: &mut R) -> Theta {
    let key_noise = Normal::new(0.0, 0.25).expect("valid normal");
    let adj_noise = Normal::new(0.0, 0.05).expect("valid normal");
    let kd = model.key_dim();
    let mut t = base.clone();
    for (i, v) in t.0.iter_mut().enumerate() {
        *v += if i < kd { key_noise.sample(rng) } else { adj_noise.sample(rng) };
    }
    if !model.is_feasible(&t) {
        t.0[kd..].iter_mut().for_each(|a| *a = 0.0);
    }
    t
}

/// `base` with the key scale at `10·w`, where the key is nearly flat on
/// `[0, w]` and the adjustments carry the shape.
fn wide_key(model: &WorkingModel, base: &Theta) -> Theta {
    let mut t = base.clone();
    t.0[0] = (10.0 * model.truncation()).ln();
    t
}

/// Hessian of the pooled log-likelihood by central differences of its
/// gradient, symmetrized.
pub(crate) fn hessian(model: &WorkingModel, sample: &PooledSample, theta: &Theta) -> Vec<f64> {
    let d = model.dim();
    let mut hm = vec![0.0; d * d];
    for i in 0..d {
        let step = 1e-5 * (1.0 + theta.0[i].abs());
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up.0[i] += step;
        dn.0[i] -= step;
        let (_, gu) = loglik_and_grad(model, sample, &up);
        let (_, gd) = loglik_and_grad(model, sample, &dn);
        for j in 0..d {
            hm[i * d + j] = (gu[j] - gd[j]) / (2.0 * step);
        }
    }
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (hm[i * d + j] + hm[j * d + i]);
            hm[i * d + j] = avg;
            hm[j * d + i] = avg;
        }
    }
    hm
}

fn near_boundary(model: &WorkingModel, theta: &Theta) -> bool {
    let w = model.truncation();
    let key = model.natural_key_params(theta);
    match model.spec().key {
        KeyFunction::UniformKey => false,
        KeyFunction::HalfNormalKey => key[0] < 1e-4 * w || key[0] > 1e4 * w,
        KeyFunction::HazardRateKey => key[0] < 1e-4 * w || key[0] > 1e4 * w || key[1] - 1.0 < 1e-6 || key[1] > 1e3,
    }
}

/// Fits the working model to the pooled detected distances.
///
/// Returns a result with `converged = false` if no start reached the
/// gradient tolerance within `max_iter` iterations.
pub fn fit_working_model(model: &WorkingModel, data: &SurveyData, options: &FitOptions) -> Result<FitResult> {
    let n = data.total_detections();
    if n == 0 {
        return Err(Error::NoDetections);
    }
    let d = model.dim();
    let required = 5.max(2 * d);
    if n < required {
        return Err(Error::UnderdeterminedFit { detections: n, required });
    }
    let sample = PooledSample::new(model, data.distances());

    if d == 0 {
        let theta = Theta(vec![]);
        let (loglik, _) = loglik_and_grad(model, &sample, &theta);
        return Ok(FitResult {
            spec: model.spec().clone(),
            truncation: model.truncation(),
            theta_hat: theta,
            loglik,
            v_hat: vec![],
            converged: loglik.is_finite(),
            n_detections_used: n,
            boundary_flag: false,
            iterations: 0,
            gradient_max_norm: 0.0,
            multistart_loglik_spread: 0.0,
            multistart_theta_spread: 0.0,
        });
    }

    let base = match &options.init {
        Some(t) if t.len() == d => t.clone(),
        Some(t) => {
            return Err(Error::InvalidModel(format!("initial θ has {} entries, model needs {d}", t.len())));
        }
        None => default_init(model, &sample),
    };
    let mut rng = seeded(options.jitter_seed);
    let starts: Vec<Theta> = (0..options.n_starts.max(1))
        .map(|i| match i {
            0 => base.clone(),
            1 if model.key_dim() > 0 => wide_key(model, &base),
            _ => jittered(model, &base, &mut rng),
        })
        .collect();
    let runs: Vec<Run> = starts
        .into_iter()
        .map(|s| maximize(model, &sample, s, options.max_iter))
        .collect();

    let any_converged = runs.iter().any(|r| r.converged);
    let pool: Vec<&Run> = runs
        .iter()
        .filter(|r| r.loglik.is_finite() && (r.converged || !any_converged))
        .collect();
    let Some(first) = pool.first() else {
        return Err(Error::NonConvergence);
    };
    let mut best = *first;
    for &r in &pool[1..] {
        let tie = (r.loglik - best.loglik).abs() <= 1e-9 * (1.0 + best.loglik.abs());
        if (tie && r.theta.norm() < best.theta.norm()) || (!tie && r.loglik > best.loglik) {
            best = r;
        }
    }
    let converged_runs: Vec<&Run> = runs.iter().filter(|r| r.converged).collect();
    let ll_spread = converged_runs
        .iter()
        .map(|r| best.loglik - r.loglik)
        .fold(0.0f64, f64::max);
    let theta_spread = converged_runs
        .iter()
        .map(|r| {
            r.theta
                .0
                .iter()
                .zip(&best.theta.0)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0f64, f64::max);

    Ok(FitResult {
        spec: model.spec().clone(),
        truncation: model.truncation(),
        theta_hat: best.theta.clone(),
        loglik: best.loglik,
        v_hat: hessian(model, &sample, &best.theta),
        converged: best.converged,
        n_detections_used: n,
        boundary_flag: near_boundary(model, &best.theta),
        iterations: runs.iter().map(|r| r.iterations).sum(),
        gradient_max_norm: max_abs(&best.grad),
        multistart_loglik_spread: ll_spread,
        multistart_theta_spread: theta_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{DetectionCurve, DetectionModel};
    use crate::geometry::{SamplingMode, StudyDesign, Transect};
    use crate::rng::stream;
    use crate::survey::{generate_population, run_survey, Placement};
    use approx::assert_relative_eq;

    fn survey(w: f64, sets: Vec<Vec<f64>>) -> SurveyData {
        let t = (0..sets.len()).map(|i| Transect::new(i as f64 / 10.0)).collect();
        SurveyData::new(w, t, sets).unwrap()
    }

    fn hn_model(w: f64, m: usize) -> WorkingModel {
        WorkingModel::new(ModelSpec::new(KeyFunction::HalfNormalKey, m), w).unwrap()
    }

    fn simulate(curve: DetectionCurve, w: f64, n: usize, k: usize, seed: u64) -> SurveyData {
        let g = DetectionModel::homogeneous(curve).unwrap();
        let design = StudyDesign::new(w, k, SamplingMode::PlusSampling).unwrap();
        let mut rng = stream(seed, 0);
        let pop = generate_population(n, &[1.0], &Placement::UniformRandom, &mut rng).unwrap();
        run_survey(&pop, &design, &g, &mut rng).unwrap()
    }

    #[test]
    fn uniform_loglik_is_count_times_log_inverse_width() {
        let w = 0.05;
        let data = survey(w, vec![vec![0.01, 0.02], vec![], vec![0.049, 0.0, 0.03]]);
        let m = WorkingModel::new(ModelSpec::new(KeyFunction::UniformKey, 0), w).unwrap();
        let l = pooled_loglik(&m, &Theta(vec![]), &data).unwrap();
        assert_relative_eq!(l, 5.0 * 20f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn loglik_sums_multiset_terms() {
        let w = 0.05;
        let m = hn_model(w, 0);
        let t = m.theta_from_natural(&[0.02], &[]).unwrap();
        let one = survey(w, vec![vec![0.013]]);
        assert_relative_eq!(
            pooled_loglik(&m, &t, &one).unwrap(),
            m.log_pdf(&t, 0.013).unwrap(),
            max_relative = 1e-12
        );
        let two = survey(w, vec![vec![0.01], vec![0.01, 0.02]]);
        let expected = 2.0 * m.log_pdf(&t, 0.01).unwrap() + m.log_pdf(&t, 0.02).unwrap();
        assert_relative_eq!(pooled_loglik(&m, &t, &two).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn pooled_loglik_errors() {
        let w = 0.05;
        let m = hn_model(w, 1);
        let empty = survey(w, vec![vec![], vec![]]);
        assert!(matches!(pooled_loglik(&m, &Theta(vec![0.0, 0.0]), &empty), Err(Error::NoDetections)));
        let data = survey(w, vec![vec![0.01]]);
        let infeasible = Theta(vec![(0.02f64).ln(), 2.0]);
        assert_eq!(pooled_loglik(&m, &infeasible, &data).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn uniform_fit_is_trivial() {
        let w = 0.05;
        let data = survey(w, vec![vec![0.01, 0.02, 0.03], vec![0.04, 0.005, 0.01]]);
        let m = WorkingModel::new(ModelSpec::new(KeyFunction::UniformKey, 0), w).unwrap();
        let fit = fit_working_model(&m, &data, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.v_hat.is_empty());
        assert_relative_eq!(fit.loglik, 6.0 * (1.0 / w).ln(), max_relative = 1e-12);
    }

    #[test]
    fn underdetermined_errors() {
        let w = 0.05;
        let data = survey(w, vec![vec![0.01, 0.02, 0.03, 0.04]]);
        assert!(matches!(
            fit_working_model(&hn_model(w, 0), &data, &FitOptions::default()),
            Err(Error::UnderdeterminedFit { detections: 4, required: 5 })
        ));
        let data = survey(w, vec![vec![0.01; 7]]);
        assert!(matches!(
            fit_working_model(&hn_model(w, 3), &data, &FitOptions::default()),
            Err(Error::UnderdeterminedFit { required: 8, .. })
        ));
        let empty = survey(w, vec![vec![]]);
        assert!(matches!(
            fit_working_model(&hn_model(w, 0), &empty, &FitOptions::default()),
            Err(Error::NoDetections)
        ));
    }

    #[test]
    fn degenerate_data_runs_to_boundary() {
        let w = 0.05;
        let data = survey(w, vec![vec![0.0; 20]]);
        let fit = fit_working_model(&hn_model(w, 0), &data, &FitOptions::default()).unwrap();
        assert!(fit.boundary_flag || !fit.converged, "{fit:?}");
    }

    #[test]
    fn half_normal_recovers_sigma() {
        let (w, sigma) = (0.05, 0.02);
        // 10⁴+ pooled detections
        let data = simulate(DetectionCurve::HalfNormal { sigma }, w, 400, 700, 21);
        assert!(data.total_detections() >= 10_000);
        let m = hn_model(w, 0);
        let fit = fit_working_model(&m, &data, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let sigma_hat = m.natural_key_params(&fit.theta_hat)[0];
        // SE of σ̂ from the observed information at θ̂ (delta method on log σ)
        let se = sigma_hat * (-1.0 / fit.v_hat[0]).sqrt();
        assert!((sigma_hat - sigma).abs() < 3.0 * se, "σ̂ = {sigma_hat}, se = {se}");
    }

    #[test]
    fn first_order_condition_and_curvature() {
        let w = 0.05;
        let data = simulate(DetectionCurve::HalfNormal { sigma: 0.025 }, w, 300, 150, 5);
        for m in 0..=3 {
            let model = hn_model(w, m);
            let fit = fit_working_model(&model, &data, &FitOptions::default()).unwrap();
            assert!(fit.converged, "m = {m}");
            let score = pooled_score(&model, &fit.theta_hat, &data).unwrap();
            assert!(max_abs(&score) < 1e-6 * (1.0 + fit.loglik.abs()), "m = {m}: {score:?}");
            let v = fit.v_matrix();
            assert!((&v - v.transpose()).amax() < 1e-10);
            let eig = v.symmetric_eigen().eigenvalues;
            let scale = eig.amax();
            assert!(eig.iter().all(|&e| e < -1e-8 * scale), "m = {m}: {eig:?}");
        }
    }

    #[test]
    fn hazard_rate_fit_converges() {
        let w = 0.05;
        let data = simulate(DetectionCurve::HazardRate { sigma: 0.015, shape: 3.0 }, w, 300, 200, 8);
        let model = WorkingModel::new(ModelSpec::new(KeyFunction::HazardRateKey, 0), w).unwrap();
        let fit = fit_working_model(&model, &data, &FitOptions::default()).unwrap();
        assert!(fit.converged, "{fit:?}");
        let key = model.natural_key_params(&fit.theta_hat);
        assert!((key[0] - 0.015).abs() < 0.005 && key[1] > 1.5 && key[1] < 6.0, "{key:?}");
    }

    #[test]
    fn fit_is_deterministic() {
        let w = 0.05;
        let data = simulate(DetectionCurve::HalfNormal { sigma: 0.02 }, w, 200, 60, 2);
        let model = hn_model(w, 2);
        let a = fit_working_model(&model, &data, &FitOptions::default()).unwrap();
        let b = fit_working_model(&model, &data, &FitOptions::default()).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: FitResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }
}
