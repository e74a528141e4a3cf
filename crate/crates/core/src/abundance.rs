//! Plug-in abundance estimator, per-transect influence values and standard
//! errors, and the pooled empirical CDF with its pooling identity.
//!
//! With coverage probability `p = P{x ∈ a(S; w)}`, `k` transects and
//! `N = Σ_j #Y_j` detections,
//!
//! ```text
//! ψ̂ = w / (k·p) · f(0; θ̂) · N
//! ```
//!
//! Influence values use the convention `ψ̂ − ψ̃ ≈ Σ_j φ̂_j`, so the sandwich
//! variance is `Σ_j φ̂_j²`:
//!
//! ```text
//! φ̂_j = w/(k·p) · [ f(0;θ̂)(#Y_j − m̄) − m̄ · ḟ(0;θ̂)ᵀ V̂₁⁻¹ Σ_{y∈Y_j} ∇log f(y;θ̂) ]
//! ```
//!
//! where `m̄` is the mean count per transect and `V̂₁ = V̂ / k` is the
//! per-transect curvature (the fit reports the pooled Hessian `V̂`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ecdf::EmpiricalCdf;
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::geometry::{SamplingMode, StudyDesign};
use crate::survey::{SurveyData, TaggedSurvey};

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    /// Permit minus-sampling designs. The estimator then uses the interior
    /// coverage `2w`, which is biased near the edges.
    pub allow_minus_sampling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbundanceEstimate {
    pub psi_hat: f64,
    pub theta_hat: Vec<f64>,
    pub f0_hat: f64,
    pub total_detections: usize,
    pub num_transects: usize,
    pub coverage_prob: f64,
    pub se_sandwich: f64,
    pub se_naive: f64,
    pub ci_95: (f64, f64),
    pub influence_values: Vec<f64>,
}

fn coverage_for(design: &StudyDesign, options: &EstimateOptions) -> Result<f64> {
    match design.sampling_mode() {
        SamplingMode::PlusSampling => Ok(design.interior_coverage()),
        SamplingMode::MinusSampling if options.allow_minus_sampling => Ok(design.interior_coverage()),
        SamplingMode::MinusSampling => Err(Error::MinusSamplingOverride),
    }
}

fn check_inputs(data: &SurveyData, design: &StudyDesign, fit: &FitResult) -> Result<()> {
    if data.total_detections() == 0 {
        return Err(Error::NoDetections);
    }
    if !fit.converged {
        return Err(Error::NonConvergence);
    }
    if data.half_width() != design.half_width() || fit.truncation != design.half_width() {
        return Err(Error::InvalidConfig(format!(
            "half-width mismatch: data {}, design {}, fit {}",
            data.half_width(),
            design.half_width(),
            fit.truncation
        )));
    }
    Ok(())
}

/// Ingredients shared by the estimate and both standard errors.
struct Plugin {
    scale: f64,
    f0: f64,
    grad_f0: Vec<f64>,
    counts: Vec<f64>,
    mean_count: f64,
    /// Per-transect score sums `Σ_{y∈Y_j} ∇log f(y; θ̂)`.
    scores: Vec<Vec<f64>>,
}

fn plugin(data: &SurveyData, design: &StudyDesign, fit: &FitResult, coverage: f64) -> Result<Plugin> {
    let model = fit.model()?;
    let density = model.at(&fit.theta_hat)?;
    let k = data.num_transects();
    let d = fit.dim();
    let counts: Vec<f64> = data.counts().iter().map(|&c| c as f64).collect();
    let scores = data
        .detections()
        .iter()
        .map(|ys| {
            let mut acc = vec![0.0; d];
            for &y in ys {
                for (a, g) in acc.iter_mut().zip(density.grad_log_pdf(y)?) {
                    *a += g;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Plugin {
        scale: design.half_width() / (k as f64 * coverage),
        f0: density.pdf_at_zero(),
        grad_f0: density.grad_pdf_at_zero(),
        mean_count: counts.iter().sum::<f64>() / k as f64,
        counts,
        scores,
    })
}

fn inverse(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.nrows() == 0 {
        return Ok(v.clone());
    }
    let inv = v.clone().try_inverse().ok_or(Error::SingularInformation)?;
    if inv.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularInformation);
    }
    Ok(inv)
}

fn influence_from(p: &Plugin, fit: &FitResult, k: usize) -> Result<Vec<f64>> {
    let per_transect_v = fit.v_matrix() / k as f64;
    let v_inv = inverse(&per_transect_v)?;
    let grad_f0 = DVector::from_column_slice(&p.grad_f0);
    // row vector ḟ(0)ᵀ V̂₁⁻¹
    let weights = v_inv.transpose() * grad_f0;
    Ok(p.counts
        .iter()
        .zip(&p.scores)
        .map(|(&c, s)| {
            let score_term: f64 = weights.iter().zip(s).map(|(a, b)| a * b).sum();
            p.scale * (p.f0 * (c - p.mean_count) - p.mean_count * score_term)
        })
        .collect())
}

/// Per-transect influence values `φ̂_j`.
pub fn influence_values(
    data: &SurveyData,
    design: &StudyDesign,
    fit: &FitResult,
    options: &EstimateOptions,
) -> Result<Vec<f64>> {
    check_inputs(data, design, fit)?;
    let coverage = coverage_for(design, options)?;
    let p = plugin(data, design, fit, coverage)?;
    influence_from(&p, fit, data.num_transects())
}

/// `sqrt(Σ_j φ̂_j²)`.
pub fn sandwich_se(influence: &[f64]) -> Result<f64> {
    if influence.len() < 2 {
        return Err(Error::TooFewTransects(influence.len()));
    }
    Ok(influence.iter().map(|x| x * x).sum::<f64>().sqrt())
}

fn naive_from(p: &Plugin, fit: &FitResult) -> Result<f64> {
    let k = p.counts.len();
    if k < 2 {
        return Err(Error::TooFewTransects(k));
    }
    let total: f64 = p.counts.iter().sum();
    let count_var: f64 = p.counts.iter().map(|c| (c - p.mean_count).powi(2)).sum();
    let f0_var = if fit.dim() == 0 {
        0.0
    } else {
        // model-based: inverse observed information of the pooled fit
        let info_inv = inverse(&(-fit.v_matrix()))?;
        let g = DVector::from_column_slice(&p.grad_f0);
        (g.transpose() * info_inv * &g)[(0, 0)]
    };
    Ok(p.scale * (p.f0 * p.f0 * count_var + total * total * f0_var).max(0.0).sqrt())
}

/// Delta-method standard error treating `f(0; θ̂)` and `Σ_j #Y_j` as
/// uncorrelated, with a model-based variance for `f(0; θ̂)`.
pub fn naive_se(data: &SurveyData, design: &StudyDesign, fit: &FitResult, options: &EstimateOptions) -> Result<f64> {
    check_inputs(data, design, fit)?;
    let coverage = coverage_for(design, options)?;
    let p = plugin(data, design, fit, coverage)?;
    naive_from(&p, fit)
}

/// The plug-in estimate with both standard errors and a normal 95% interval
/// (from the sandwich SE, truncated at zero).
pub fn estimate_abundance(
    data: &SurveyData,
    design: &StudyDesign,
    fit: &FitResult,
    options: &EstimateOptions,
) -> Result<AbundanceEstimate> {
    check_inputs(data, design, fit)?;
    let k = data.num_transects();
    if k != design.num_transects() {
        return Err(Error::InvalidConfig(format!(
            "survey has {k} transects, design expects {}",
            design.num_transects()
        )));
    }
    let coverage = coverage_for(design, options)?;
    let p = plugin(data, design, fit, coverage)?;
    let total = data.total_detections();
    let psi_hat = design.half_width() / (k as f64 * coverage) * p.f0 * total as f64;
    let influence = influence_from(&p, fit, k)?;
    let se_sandwich = sandwich_se(&influence)?;
    let se_naive = naive_from(&p, fit)?;
    Ok(AbundanceEstimate {
        psi_hat,
        theta_hat: fit.theta_hat.0.clone(),
        f0_hat: p.f0,
        total_detections: total,
        num_transects: k,
        coverage_prob: coverage,
        se_sandwich,
        se_naive,
        ci_95: ((psi_hat - Z_95 * se_sandwich).max(0.0), psi_hat + Z_95 * se_sandwich),
        influence_values: influence,
    })
}

/// Sample analog of the pooled detected-distance distribution function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledEmpiricalCdf {
    ecdf: EmpiricalCdf,
}

impl PooledEmpiricalCdf {
    pub fn eval(&self, u: f64) -> f64 {
        self.ecdf.eval(u)
    }

    pub fn total(&self) -> usize {
        self.ecdf.len()
    }

    pub fn sorted_distances(&self) -> &[f64] {
        self.ecdf.sorted()
    }
}

pub fn pooled_cdf(data: &SurveyData) -> PooledEmpiricalCdf {
    PooledEmpiricalCdf {
        ecdf: EmpiricalCdf::new(data.distances().collect()),
    }
}

/// Grid size for [`pooling_check`].
pub const POOLING_GRID: usize = 1024;

/// `max_u |F̂(u) − Σ_s ŵ_s F̂⁽ˢ⁾(u)|` over a uniform grid on `[0, w]`, with
/// `ŵ_s` the stratum's share of the detections.
pub fn pooling_check(data: &TaggedSurvey) -> Result<f64> {
    let survey = data.survey();
    if survey.total_detections() == 0 {
        return Err(Error::NoDetections);
    }
    let pooled = pooled_cdf(survey);
    let n_strata = data.tags().iter().flatten().max().map_or(0, |m| m + 1);
    let mut by_stratum = vec![Vec::new(); n_strata];
    for (ys, tags) in survey.detections().iter().zip(data.tags()) {
        for (&y, &s) in ys.iter().zip(tags) {
            by_stratum[s].push(y);
        }
    }
    let total = pooled.total() as f64;
    let strata: Vec<(f64, EmpiricalCdf)> = by_stratum
        .into_iter()
        .filter(|ys| !ys.is_empty())
        .map(|ys| (ys.len() as f64 / total, EmpiricalCdf::new(ys)))
        .collect();
    let w = survey.half_width();
    let mut worst = 0.0f64;
    for i in 0..POOLING_GRID {
        let u = w * i as f64 / (POOLING_GRID - 1) as f64;
        let mixed: f64 = strata.iter().map(|(share, f)| share * f.eval(u)).sum();
        worst = worst.max((pooled.eval(u) - mixed).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{KeyFunction, ModelSpec, WorkingModel};
    use crate::fit::{fit_working_model, FitOptions};
    use crate::geometry::Transect;
    use approx::assert_relative_eq;

    fn plus(w: f64, k: usize) -> StudyDesign {
        StudyDesign::new(w, k, SamplingMode::PlusSampling).unwrap()
    }

    fn survey(w: f64, sets: Vec<Vec<f64>>) -> SurveyData {
        let t = (0..sets.len()).map(|i| Transect::new(i as f64 / sets.len() as f64)).collect();
        SurveyData::new(w, t, sets).unwrap()
    }

    fn uniform_fit(data: &SurveyData) -> FitResult {
        let m = WorkingModel::new(ModelSpec::new(KeyFunction::UniformKey, 0), data.half_width()).unwrap();
        fit_working_model(&m, data, &FitOptions::default()).unwrap()
    }

    /// k = 10 transects carrying 91 detections in total.
    fn ninety_one(w: f64) -> SurveyData {
        let counts = [9, 10, 8, 11, 9, 7, 12, 9, 8, 8];
        assert_eq!(counts.iter().sum::<usize>(), 91);
        survey(w, counts.iter().map(|&c| (0..c).map(|i| w * i as f64 / 13.0).collect()).collect())
    }

    #[test]
    fn hand_arithmetic_example() {
        let w = 0.05;
        let data = ninety_one(w);
        let fit = uniform_fit(&data);
        let est = estimate_abundance(&data, &plus(w, 10), &fit, &EstimateOptions::default()).unwrap();
        assert_relative_eq!(est.f0_hat, 20.0, epsilon = 1e-12);
        assert_relative_eq!(est.psi_hat, 100.1, epsilon = 1e-10);
        assert_eq!(
            est.psi_hat,
            w / (10.0 * est.coverage_prob) * est.f0_hat * est.total_detections as f64
        );
    }

    #[test]
    fn no_detections() {
        let w = 0.05;
        let data = survey(w, vec![vec![], vec![]]);
        let fit = uniform_fit(&ninety_one(w));
        assert!(matches!(
            estimate_abundance(&data, &plus(w, 2), &fit, &EstimateOptions::default()),
            Err(Error::NoDetections)
        ));
    }

    #[test]
    fn doubling_detections_doubles_estimate() {
        let w = 0.05;
        let data = ninety_one(w);
        let doubled = survey(
            w,
            data.detections()
                .iter()
                .map(|ys| ys.iter().flat_map(|&y| [y, y]).collect())
                .collect(),
        );
        let design = plus(w, 10);
        let a = estimate_abundance(&data, &design, &uniform_fit(&data), &EstimateOptions::default()).unwrap();
        let b = estimate_abundance(&doubled, &design, &uniform_fit(&doubled), &EstimateOptions::default()).unwrap();
        assert_relative_eq!(b.psi_hat, 2.0 * a.psi_hat, max_relative = 1e-14);
        assert_eq!(a.f0_hat, b.f0_hat);
    }

    #[test]
    fn minus_sampling_needs_override() {
        let w = 0.05;
        let data = ninety_one(w);
        let fit = uniform_fit(&data);
        let minus = StudyDesign::new(w, 10, SamplingMode::MinusSampling).unwrap();
        assert!(matches!(
            estimate_abundance(&data, &minus, &fit, &EstimateOptions::default()),
            Err(Error::MinusSamplingOverride)
        ));
        let est = estimate_abundance(&data, &minus, &fit, &EstimateOptions { allow_minus_sampling: true }).unwrap();
        assert_relative_eq!(est.coverage_prob, 2.0 * w, epsilon = 1e-15);
    }

    #[test]
    fn uniform_influence_values_are_centered_counts() {
        let w = 0.05;
        let data = ninety_one(w);
        let fit = uniform_fit(&data);
        let design = plus(w, 10);
        let phi = influence_values(&data, &design, &fit, &EstimateOptions::default()).unwrap();
        let p = design.interior_coverage();
        let mean = 9.1;
        for (phi_j, c) in phi.iter().zip(data.counts()) {
            assert_relative_eq!(*phi_j, w / (10.0 * p) * 20.0 * (c as f64 - mean), epsilon = 1e-10);
        }
        assert!(phi.iter().sum::<f64>().abs() < 1e-10);
        let naive = naive_se(&data, &design, &fit, &EstimateOptions::default()).unwrap();
        assert_relative_eq!(naive, sandwich_se(&phi).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn equal_counts_give_zero_influence() {
        let w = 0.05;
        let data = survey(w, vec![vec![0.01, 0.02, 0.03]; 4]);
        let fit = uniform_fit(&data);
        let phi = influence_values(&data, &plus(w, 4), &fit, &EstimateOptions::default()).unwrap();
        assert!(phi.iter().all(|&x| x == 0.0));
        assert_eq!(sandwich_se(&phi).unwrap(), 0.0);
    }

    #[test]
    fn sandwich_se_arithmetic() {
        assert_eq!(sandwich_se(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_relative_eq!(sandwich_se(&[1.5, -1.5]).unwrap(), 1.5 * 2f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(sandwich_se(&[1.0]), Err(Error::TooFewTransects(1))));
    }

    #[test]
    fn naive_se_without_count_variance_is_f0_term() {
        let w = 0.05;
        let sets: Vec<Vec<f64>> = (0..6).map(|j| (0..8).map(|i| w * ((i * 7 + j * 3) % 17) as f64 / 40.0).collect()).collect();
        let data = survey(w, sets);
        let design = plus(w, 6);
        let model = WorkingModel::new(ModelSpec::new(KeyFunction::HalfNormalKey, 0), w).unwrap();
        let fit = fit_working_model(&model, &data, &FitOptions::default()).unwrap();
        let naive = naive_se(&data, &design, &fit, &EstimateOptions::default()).unwrap();
        let density = model.at(&fit.theta_hat).unwrap();
        let g = density.grad_pdf_at_zero()[0];
        let var_f0 = g * g / (-fit.v_hat[0]);
        let expected = w / (6.0 * design.interior_coverage()) * 48.0 * var_f0.sqrt();
        assert_relative_eq!(naive, expected, max_relative = 1e-10);
    }

    #[test]
    fn pooled_cdf_is_right_continuous_and_ends_at_one() {
        let w = 0.05;
        let data = survey(w, vec![vec![0.01, 0.02], vec![0.02, 0.05]]);
        let f = pooled_cdf(&data);
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.eval(0.01), 0.25);
        assert_eq!(f.eval(0.02), 0.75);
        assert_eq!(f.eval(w), 1.0);
    }

    #[test]
    fn pooling_identity_simple_cases() {
        let w = 0.05;
        let data = survey(w, vec![vec![0.01, 0.03], vec![0.02, 0.04]]);
        let single = TaggedSurvey::new(data.clone(), vec![vec![0, 0], vec![0, 0]]).unwrap();
        assert_eq!(pooling_check(&single).unwrap(), 0.0);
        let two = TaggedSurvey::new(data, vec![vec![0, 1], vec![1, 0]]).unwrap();
        assert!(pooling_check(&two).unwrap() <= 1e-12);
    }
}
