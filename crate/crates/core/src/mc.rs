//! Replicated Monte Carlo studies: bias, standard-error calibration and
//! interval coverage of the plug-in estimator, edge effects, and design
//! checks.
//!
//! Replicate `r` draws everything from the counter-based stream
//! `stream(master_seed, r)`, and results are aggregated in replicate order
//! with compensated sums, so a summary depends only on the configuration and
//! never on the worker count.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abundance::{estimate_abundance, EstimateOptions};
use crate::density::{ModelSpec, WorkingModel};
use crate::detection::{DetectionCurve, DetectionModel};
use crate::ecdf::{ks_uniform, KsResult};
use crate::error::{Error, Result};
use crate::fit::{fit_working_model, FitOptions};
use crate::geometry::{Point, SamplingMode, StudyDesign};
use crate::rng::stream;
use crate::survey::{generate_population, run_survey, Placement, Population};

/// Replicates may fail (empty surveys, non-convergence); a study aborts when
/// more than this fraction does.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

/// Stream index reserved for the shared population in fixed-population mode.
const FIXED_POPULATION_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n: usize,
    #[serde(default = "uniform_placement")]
    pub placement: Placement,
}

fn uniform_placement() -> Placement {
    Placement::UniformRandom
}

/// Acceptance bands checked by [`StudySummary::check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Assertions {
    /// Half-width of the bias band, in Monte Carlo standard errors.
    pub bias_mc_se: f64,
    /// Centre of the relative-bias band; derived from the design when absent.
    pub expected_relative_bias: Option<f64>,
    /// Optional cap on the absolute relative bias.
    pub max_abs_relative_bias: Option<f64>,
    /// Band for mean sandwich SE / MC SD.
    pub sandwich_ratio: Option<(f64, f64)>,
    /// Band for the 95% interval coverage.
    pub coverage: Option<(f64, f64)>,
}

impl Default for Assertions {
    fn default() -> Self {
        Self {
            bias_mc_se: 3.0,
            expected_relative_bias: None,
            max_abs_relative_bias: None,
            sandwich_ratio: None,
            coverage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub population: PopulationSpec,
    pub detection: DetectionModel,
    pub design: StudyDesign,
    pub working_model: ModelSpec,
    pub replicates: usize,
    pub master_seed: u64,
    /// Reuse one population for every replicate.
    #[serde(default)]
    pub fixed_population: bool,
    #[serde(default)]
    pub allow_minus_sampling: bool,
    #[serde(default)]
    pub fit: Option<FitOptions>,
    #[serde(default)]
    pub assertions: Assertions,
}

impl ScenarioConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidConfig(format!(
                "at least 2 replicates are required, got {}",
                self.replicates
            )));
        }
        if self.population.n == 0 && self.population.placement == Placement::UniformRandom {
            return Err(Error::InvalidConfig("population size must be positive".into()));
        }
        if self.design.sampling_mode() == SamplingMode::MinusSampling && !self.allow_minus_sampling {
            return Err(Error::MinusSamplingOverride);
        }
        self.detection.check_truncation(self.design.half_width())?;
        WorkingModel::new(self.working_model.clone(), self.design.half_width())?;
        Ok(())
    }

    /// Relative bias the estimator should show: zero under plus sampling;
    /// `−w/2` under minus sampling with perfect detection, from the edge
    /// coverage deficit of a uniform population. `None` when no analytic
    /// value is available.
    pub fn expected_relative_bias(&self) -> Option<f64> {
        if let Some(b) = self.assertions.expected_relative_bias {
            return Some(b);
        }
        match self.design.sampling_mode() {
            SamplingMode::PlusSampling => Some(0.0),
            SamplingMode::MinusSampling => {
                let perfect = self.detection.strata().iter().all(|s| s.curve == DetectionCurve::Uniform);
                (perfect && self.population.placement == Placement::UniformRandom)
                    .then(|| -self.design.half_width() / 2.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub true_n: usize,
    /// `None` for a failed replicate.
    pub outcome: Option<ReplicateEstimate>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub psi_hat: f64,
    pub se_sandwich: f64,
    pub se_naive: f64,
    pub ci_95: (f64, f64),
    pub total_detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub name: String,
    pub replicates: usize,
    pub successes: usize,
    /// Mean population size over successful replicates.
    pub true_n: f64,
    pub psi_hats: Vec<f64>,
    pub mean_psi: f64,
    pub bias: f64,
    pub relative_bias: f64,
    pub mc_sd: f64,
    /// Standard error of `mean_psi`.
    pub mc_se: f64,
    /// Standard error of `relative_bias`.
    pub relative_bias_mc_se: f64,
    pub mean_se_sandwich: f64,
    pub mean_se_naive: f64,
    pub sandwich_ratio: f64,
    pub naive_ratio: f64,
    pub ci_coverage: f64,
    pub failures: BTreeMap<String, usize>,
    pub records: Vec<ReplicateRecord>,
}

/// Outcome of one acceptance band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    pub name: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

impl BandCheck {
    pub fn new(name: impl Into<String>, value: f64, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lower,
            upper,
            pass: value >= lower && value <= upper,
        }
    }
}

impl StudySummary {
    /// `|relative_bias − target| < n_se · relative_bias_mc_se`.
    pub fn bias_band(&self, target: f64, n_se: f64) -> BandCheck {
        let half = n_se * self.relative_bias_mc_se;
        let mut check = BandCheck::new("relative_bias", self.relative_bias, target - half, target + half);
        check.pass = (self.relative_bias - target).abs() < half;
        check
    }

    /// Bands requested by the scenario's assertions.
    pub fn check(&self, config: &ScenarioConfig) -> Vec<BandCheck> {
        let a = &config.assertions;
        let mut out = Vec::new();
        if let Some(target) = config.expected_relative_bias() {
            out.push(self.bias_band(target, a.bias_mc_se));
        }
        if let Some(cap) = a.max_abs_relative_bias {
            out.push(BandCheck::new("abs_relative_bias", self.relative_bias.abs(), 0.0, cap));
        }
        if let Some((lo, hi)) = a.sandwich_ratio {
            out.push(BandCheck::new("sandwich_ratio", self.sandwich_ratio, lo, hi));
        }
        if let Some((lo, hi)) = a.coverage {
            out.push(BandCheck::new("ci_coverage", self.ci_coverage, lo, hi));
        }
        out
    }

    pub fn write_replicates_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "replicate",
            "true_n",
            "psi_hat",
            "se_sandwich",
            "se_naive",
            "ci_lower",
            "ci_upper",
            "total_detections",
            "failure",
        ])?;
        for r in &self.records {
            let mut row = vec![r.index.to_string(), r.true_n.to_string()];
            match &r.outcome {
                Some(e) => row.extend([
                    format!("{:.16e}", e.psi_hat),
                    format!("{:.16e}", e.se_sandwich),
                    format!("{:.16e}", e.se_naive),
                    format!("{:.16e}", e.ci_95.0),
                    format!("{:.16e}", e.ci_95.1),
                    e.total_detections.to_string(),
                    String::new(),
                ]),
                None => {
                    row.extend(std::iter::repeat_n(String::new(), 6));
                    row.push(r.failure.clone().unwrap_or_default());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Neumaier compensated sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn compensated_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let mut s = CompensatedSum::default();
    let mut n = 0usize;
    for x in xs {
        s.add(x);
        n += 1;
    }
    s.value() / n as f64
}

fn replicate(
    config: &ScenarioConfig,
    model: &WorkingModel,
    fixed: Option<&Population>,
    index: usize,
) -> ReplicateRecord {
    let mut rng = stream(config.master_seed, index as u64);
    let weights = config.detection.weights();
    let population = match fixed {
        Some(p) => Ok(p.clone()),
        None => generate_population(config.population.n, &weights, &config.population.placement, &mut rng),
    };
    let true_n = population.as_ref().map_or(config.population.n, Population::true_n);
    let fit_options = config.fit.clone().unwrap_or_default();
    let options = EstimateOptions {
        allow_minus_sampling: config.allow_minus_sampling,
    };
    let result = population.and_then(|pop| {
        let data = run_survey(&pop, &config.design, &config.detection, &mut rng)?;
        if data.total_detections() == 0 {
            return Err(Error::NoDetections);
        }
        let fit = fit_working_model(model, &data, &fit_options)?;
        estimate_abundance(&data, &config.design, &fit, &options)
    });
    match result {
        Ok(est) => ReplicateRecord {
            index,
            true_n,
            outcome: Some(ReplicateEstimate {
                psi_hat: est.psi_hat,
                se_sandwich: est.se_sandwich,
                se_naive: est.se_naive,
                ci_95: est.ci_95,
                total_detections: est.total_detections,
            }),
            failure: None,
        },
        Err(e) => ReplicateRecord {
            index,
            true_n,
            outcome: None,
            failure: Some(e.kind().to_string()),
        },
    }
}

/// Runs the scenario on the global rayon pool.
pub fn run_replicates(config: &ScenarioConfig) -> Result<StudySummary> {
    run_replicates_on(config, 0)
}

/// Runs the scenario on `threads` workers (0: rayon's default).
pub fn run_replicates_on(config: &ScenarioConfig, threads: usize) -> Result<StudySummary> {
    config.validate()?;
    let model = WorkingModel::new(config.working_model.clone(), config.design.half_width())?;
    let fixed = if config.fixed_population {
        let mut rng = stream(config.master_seed, FIXED_POPULATION_STREAM);
        Some(generate_population(
            config.population.n,
            &config.detection.weights(),
            &config.population.placement,
            &mut rng,
        )?)
    } else {
        None
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let records: Vec<ReplicateRecord> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| replicate(config, &model, fixed.as_ref(), r))
            .collect()
    });
    summarize(&config.name, records)
}

fn summarize(name: &str, records: Vec<ReplicateRecord>) -> Result<StudySummary> {
    let total = records.len();
    let mut failures = BTreeMap::new();
    for r in &records {
        if let Some(kind) = &r.failure {
            *failures.entry(kind.clone()).or_insert(0) += 1;
        }
    }
    let failed: usize = failures.values().sum();
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    let ok: Vec<(usize, ReplicateEstimate)> = records
        .iter()
        .filter_map(|r| r.outcome.map(|e| (r.true_n, e)))
        .collect();
    let m = ok.len();
    if m < 2 {
        return Err(Error::TooManyFailures { failed, total });
    }
    let mf = m as f64;
    let psi_hats: Vec<f64> = ok.iter().map(|(_, e)| e.psi_hat).collect();
    let true_n = compensated_mean(ok.iter().map(|(n, _)| *n as f64));
    let mean_psi = compensated_mean(psi_hats.iter().copied());
    let var = compensated_mean(psi_hats.iter().map(|p| (p - mean_psi).powi(2))) * mf / (mf - 1.0);
    let mc_sd = var.sqrt();
    let mc_se = mc_sd / mf.sqrt();
    let mean_se_sandwich = compensated_mean(ok.iter().map(|(_, e)| e.se_sandwich));
    let mean_se_naive = compensated_mean(ok.iter().map(|(_, e)| e.se_naive));
    let covered = ok
        .iter()
        .filter(|(n, e)| e.ci_95.0 <= *n as f64 && *n as f64 <= e.ci_95.1)
        .count();
    Ok(StudySummary {
        name: name.to_string(),
        replicates: total,
        successes: m,
        true_n,
        mean_psi,
        bias: mean_psi - true_n,
        relative_bias: (mean_psi - true_n) / true_n,
        mc_sd,
        mc_se,
        relative_bias_mc_se: mc_se / true_n,
        mean_se_sandwich,
        mean_se_naive,
        sandwich_ratio: mean_se_sandwich / mc_sd,
        naive_ratio: mean_se_naive / mc_sd,
        ci_coverage: covered as f64 / mf,
        failures,
        psi_hats,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub homogeneous: StudySummary,
    pub heterogeneous: StudySummary,
    pub homogeneous_bias: BandCheck,
    pub heterogeneous_bias: BandCheck,
}

/// Runs a homogeneous and a heterogeneous scenario sharing one working model
/// and checks both for zero relative bias within `n_se` MC standard errors.
pub fn heterogeneity_study(
    homogeneous: &ScenarioConfig,
    heterogeneous: &ScenarioConfig,
    n_se: f64,
    threads: usize,
) -> Result<HeterogeneityReport> {
    if homogeneous.working_model != heterogeneous.working_model {
        return Err(Error::InvalidConfig("heterogeneity study needs one working model".into()));
    }
    let hom = run_replicates_on(homogeneous, threads)?;
    let het = run_replicates_on(heterogeneous, threads)?;
    Ok(HeterogeneityReport {
        homogeneous_bias: hom.bias_band(0.0, n_se),
        heterogeneous_bias: het.bias_band(0.0, n_se),
        homogeneous: hom,
        heterogeneous: het,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeBiasReport {
    pub half_width: f64,
    pub plus: StudySummary,
    pub minus: StudySummary,
    pub expected_minus_relative_bias: f64,
    pub plus_bias: BandCheck,
    pub minus_bias: BandCheck,
}

/// Perfect-detection scenario with a uniform key, for edge studies.
pub fn edge_scenario(w: f64, n: usize, k: usize, replicates: usize, master_seed: u64, mode: SamplingMode) -> Result<ScenarioConfig> {
    Ok(ScenarioConfig {
        name: format!("edge_{mode:?}_w{w}"),
        population: PopulationSpec {
            n,
            placement: Placement::UniformRandom,
        },
        detection: DetectionModel::homogeneous(DetectionCurve::Uniform)?,
        design: StudyDesign::new(w, k, mode)?,
        working_model: ModelSpec::new(crate::density::KeyFunction::UniformKey, 0),
        replicates,
        master_seed,
        fixed_population: false,
        allow_minus_sampling: mode == SamplingMode::MinusSampling,
        fit: None,
        assertions: Assertions::default(),
    })
}

/// The same perfect-detection scenario under plus and minus sampling; the
/// minus case is estimated with the interior coverage `2w`.
pub fn edge_bias_study(w: f64, n: usize, k: usize, replicates: usize, master_seed: u64, threads: usize) -> Result<EdgeBiasReport> {
    let plus = run_replicates_on(&edge_scenario(w, n, k, replicates, master_seed, SamplingMode::PlusSampling)?, threads)?;
    let minus = run_replicates_on(&edge_scenario(w, n, k, replicates, master_seed, SamplingMode::MinusSampling)?, threads)?;
    let expected = -w / 2.0;
    Ok(EdgeBiasReport {
        half_width: w,
        plus_bias: plus.bias_band(0.0, 3.0),
        minus_bias: minus.bias_band(expected, 3.0),
        expected_minus_relative_bias: expected,
        plus,
        minus,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignCheckReport {
    pub sampling_mode: SamplingMode,
    pub half_width: f64,
    pub draws: usize,
    pub grid: Vec<f64>,
    pub mc_coverage: Vec<f64>,
    pub analytic_coverage: Vec<f64>,
    pub interior_coverage: f64,
    /// Max minus min of the MC coverage estimates.
    pub coverage_range: f64,
    /// Range allowed by sampling noise.
    pub range_tolerance: f64,
    /// Analytic coverage equals the interior value at every grid point.
    pub analytic_constant: bool,
    pub coverage_pass: bool,
    pub ks: KsResult,
    pub ks_pass: bool,
    pub pass: bool,
}

/// Range of 20 iid normals exceeds 6 SDs with probability about 1e-3.
const RANGE_SDS: f64 = 6.0;
const KS_ALPHA: f64 = 0.01;

/// Checks location-independence of coverage on a grid of abscissae spanning
/// `[0, 1]`, and uniformity of the distance to a covering transect for a
/// uniformly placed animal (KS on `draws` such distances).
pub fn design_check(design: &StudyDesign, grid_points: usize, draws: usize, seed: u64) -> Result<DesignCheckReport> {
    if draws == 0 {
        return Err(Error::ZeroDraws);
    }
    if grid_points < 2 {
        return Err(Error::InvalidConfig("design grid needs at least 2 points".into()));
    }
    let w = design.half_width();
    let interior = design.interior_coverage();
    let grid: Vec<f64> = (0..grid_points).map(|i| i as f64 / (grid_points - 1) as f64).collect();
    let mut mc_coverage = Vec::with_capacity(grid_points);
    let mut analytic_coverage = Vec::with_capacity(grid_points);
    for (i, &x) in grid.iter().enumerate() {
        let loc = Point::new(x, 0.5);
        let mut rng = stream(seed, i as u64);
        let hits = (0..draws)
            .filter(|_| design.sample_transect(&mut rng).covers(loc, w))
            .count();
        mc_coverage.push(hits as f64 / draws as f64);
        analytic_coverage.push(design.coverage_probability(loc));
    }
    let max = mc_coverage.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = mc_coverage.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = mc_coverage.iter().sum::<f64>() / grid_points as f64;
    let range_tolerance = RANGE_SDS * (mean * (1.0 - mean) / draws as f64).sqrt();
    let analytic_constant = analytic_coverage.iter().all(|&p| (p - interior).abs() <= 1e-12);
    let coverage_pass = max - min <= range_tolerance && analytic_constant;

    let mut rng = stream(seed, grid_points as u64);
    let mut distances = Vec::with_capacity(draws);
    while distances.len() < draws {
        let loc = Point::new(rng.random(), rng.random());
        let t = design.sample_transect(&mut rng);
        if t.covers(loc, w) {
            distances.push(t.perpendicular_distance(loc));
        }
    }
    let ks = ks_uniform(&distances, 0.0, w);
    let ks_pass = ks.passes(KS_ALPHA);
    Ok(DesignCheckReport {
        sampling_mode: design.sampling_mode(),
        half_width: w,
        draws,
        grid,
        mc_coverage,
        analytic_coverage,
        interior_coverage: interior,
        coverage_range: max - min,
        range_tolerance,
        analytic_constant,
        coverage_pass,
        ks,
        ks_pass,
        pass: coverage_pass && ks_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::KeyFunction;

    fn perfect(n: usize, k: usize, replicates: usize) -> ScenarioConfig {
        edge_scenario(0.05, n, k, replicates, 7, SamplingMode::PlusSampling).unwrap()
    }

    #[test]
    fn determinism_and_thread_independence() {
        let c = perfect(100, 10, 8);
        let a = run_replicates_on(&c, 1).unwrap();
        let b = run_replicates_on(&c, 1).unwrap();
        let p = run_replicates_on(&c, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, p);
    }

    #[test]
    fn config_errors() {
        let mut c = perfect(100, 10, 2);
        c.population.n = 0;
        assert!(matches!(run_replicates(&c), Err(Error::InvalidConfig(_))));
        let mut c = perfect(100, 10, 2);
        c.replicates = 1;
        assert!(matches!(run_replicates(&c), Err(Error::InvalidConfig(_))));
        let mut c = perfect(100, 10, 2);
        c.design = StudyDesign::new(0.05, 10, SamplingMode::MinusSampling).unwrap();
        assert!(matches!(run_replicates(&c), Err(Error::MinusSamplingOverride)));
    }

    #[test]
    fn perfect_detection_is_unbiased() {
        let s = run_replicates(&perfect(100, 20, 400)).unwrap();
        assert_eq!(s.successes, 400);
        assert!(s.bias_band(0.0, 3.0).pass, "{} ± {}", s.relative_bias, s.relative_bias_mc_se);
    }

    #[test]
    fn failures_are_tallied_and_abort_above_threshold() {
        // one animal, one transect: most surveys are empty
        let c = perfect(1, 1, 20);
        match run_replicates(&c) {
            Err(Error::TooManyFailures { failed, total }) => {
                assert_eq!(total, 20);
                assert!(failed > 4);
            }
            other => panic!("{other:?}"),
        }
        let s = summarize(
            "t",
            (0..10)
                .map(|i| ReplicateRecord {
                    index: i,
                    true_n: 10,
                    outcome: (i != 3).then_some(ReplicateEstimate {
                        psi_hat: 10.0 + i as f64,
                        se_sandwich: 1.0,
                        se_naive: 1.0,
                        ci_95: (8.0, 12.0),
                        total_detections: 5,
                    }),
                    failure: (i == 3).then(|| "NoDetections".to_string()),
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(s.successes, 9);
        assert_eq!(s.failures["NoDetections"], 1);
        assert_eq!(s.psi_hats.len(), 9);
    }

    #[test]
    fn single_active_stratum_matches_homogeneous() {
        let curve = DetectionCurve::HalfNormal { sigma: 0.02 };
        let mut hom = perfect(100, 20, 4);
        hom.detection = DetectionModel::homogeneous(curve).unwrap();
        hom.working_model = ModelSpec::new(KeyFunction::HalfNormalKey, 0);
        let mut het = hom.clone();
        het.detection = serde_json::from_str(
            r#"[{"label":"a","family":"HalfNormal","params":[0.02],"weight":1.0},
                {"label":"b","family":"HalfNormal","params":[0.04],"weight":0.0}]"#,
        )
        .unwrap();
        let a = run_replicates(&hom).unwrap();
        let b = run_replicates(&het).unwrap();
        assert_eq!(a.psi_hats, b.psi_hats);
    }

    #[test]
    fn fixed_population_mode_keeps_true_n() {
        let mut c = perfect(150, 10, 5);
        c.fixed_population = true;
        let s = run_replicates(&c).unwrap();
        assert!(s.records.iter().all(|r| r.true_n == 150));
        assert_eq!(s, run_replicates(&c).unwrap());
    }

    #[test]
    fn expected_bias_from_design() {
        let c = edge_scenario(0.2, 10, 10, 2, 1, SamplingMode::MinusSampling).unwrap();
        assert_eq!(c.expected_relative_bias(), Some(-0.1));
        let c = edge_scenario(0.2, 10, 10, 2, 1, SamplingMode::PlusSampling).unwrap();
        assert_eq!(c.expected_relative_bias(), Some(0.0));
    }

    #[test]
    fn design_check_plus_passes() {
        let d = StudyDesign::new(0.05, 1, SamplingMode::PlusSampling).unwrap();
        let r = design_check(&d, 20, 1_000_000, 11).unwrap();
        assert!(r.coverage_pass, "{} > {}", r.coverage_range, r.range_tolerance);
        assert!(r.ks_pass, "{:?}", r.ks);
        assert_eq!(r.interior_coverage, 0.1 / 1.1);
    }

    #[test]
    fn design_check_minus_fails_at_edges() {
        let d = StudyDesign::new(0.2, 1, SamplingMode::MinusSampling).unwrap();
        let r = design_check(&d, 20, 100_000, 11).unwrap();
        assert!(!r.analytic_constant);
        assert!(!r.coverage_pass);
        assert!(r.mc_coverage[0] < 0.25);
        assert!(!r.ks_pass);
    }

    #[test]
    fn zero_draws() {
        let d = StudyDesign::new(0.05, 1, SamplingMode::PlusSampling).unwrap();
        assert!(matches!(design_check(&d, 20, 0, 1), Err(Error::ZeroDraws)));
    }

    #[test]
    fn scenario_json_round_trip() {
        let c = perfect(100, 10, 2);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(ScenarioConfig::from_json_str(&s).unwrap(), c);
    }

    #[test]
    fn replicates_csv() {
        let s = run_replicates(&perfect(100, 10, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        s.write_replicates_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        let psi: f64 = text.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(psi, s.psi_hats[0]);
    }
}
