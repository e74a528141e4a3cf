use distline::abundance::{estimate_abundance, influence_values, pooling_check, EstimateOptions};
use distline::fit::{fit_working_model, FitOptions};
use distline::rng::stream;
use distline::survey::{generate_population, run_survey, run_survey_tagged};
use distline::{
    DetectionCurve, DetectionModel, KeyFunction, ModelSpec, Placement, SamplingMode, StudyDesign, SurveyData,
    TaggedSurvey, Transect, WorkingModel,
};
use proptest::prelude::*;

const W: f64 = 0.05;

fn survey(sets: Vec<Vec<f64>>) -> SurveyData {
    let k = sets.len();
    let transects = (0..k).map(|j| Transect::new((j as f64 + 0.5) / k as f64)).collect();
    SurveyData::new(W, transects, sets).unwrap()
}

fn uniform_fit(data: &SurveyData) -> distline::FitResult {
    let model = WorkingModel::new(ModelSpec::new(KeyFunction::UniformKey, 0), W).unwrap();
    fit_working_model(&model, data, &FitOptions::default()).unwrap()
}

fn multisets() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0..=W, 0..12), 2..15)
        .prop_filter("at least 5 detections", |s| s.iter().map(Vec::len).sum::<usize>() >= 5)
}

proptest! {
    #[test]
    fn reconstruction_identity(sets in multisets()) {
        let data = survey(sets);
        let design = StudyDesign::new(W, data.num_transects(), SamplingMode::PlusSampling).unwrap();
        let est = estimate_abundance(&data, &design, &uniform_fit(&data), &EstimateOptions::default()).unwrap();
        let k = data.num_transects() as f64;
        prop_assert_eq!(est.psi_hat, W / (k * est.coverage_prob) * est.f0_hat * est.total_detections as f64);
        prop_assert!(est.psi_hat >= 0.0);
        prop_assert!(est.ci_95.0 >= 0.0 && est.ci_95.0 <= est.psi_hat && est.psi_hat <= est.ci_95.1);
    }

    #[test]
    fn uniform_influence_values_sum_to_zero(sets in multisets()) {
        let data = survey(sets);
        let design = StudyDesign::new(W, data.num_transects(), SamplingMode::PlusSampling).unwrap();
        let phi = influence_values(&data, &design, &uniform_fit(&data), &EstimateOptions::default()).unwrap();
        let scale = phi.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        prop_assert!(phi.iter().sum::<f64>().abs() <= 1e-12 * scale * phi.len() as f64);
    }

    #[test]
    fn pooling_identity_holds(
        sets in prop::collection::vec(prop::collection::vec((0.0..=W, 0usize..4), 0..20), 1..10)
            .prop_filter("nonempty", |s| s.iter().any(|t| !t.is_empty())),
    ) {
        let ys = sets.iter().map(|t| t.iter().map(|p| p.0).collect()).collect();
        let tags = sets.iter().map(|t| t.iter().map(|p| p.1).collect()).collect();
        let tagged = TaggedSurvey::new(survey(ys), tags).unwrap();
        prop_assert!(pooling_check(&tagged).unwrap() <= 1e-12);
    }
}

#[test]
fn estimator_is_blind_to_stratum_tags() {
    let detection: DetectionModel = serde_json::from_str(
        r#"[{"label":"a","family":"HalfNormal","params":[0.01],"weight":0.5},
            {"label":"b","family":"HalfNormal","params":[0.04],"weight":0.5}]"#,
    )
    .unwrap();
    let design = StudyDesign::new(W, 30, SamplingMode::PlusSampling).unwrap();
    let model = WorkingModel::new(ModelSpec::new(KeyFunction::HalfNormalKey, 2), W).unwrap();
    for seed in 0..5 {
        let draw = |tagged: bool| {
            let mut rng = stream(seed, 0);
            let pop = generate_population(300, &detection.weights(), &Placement::UniformRandom, &mut rng).unwrap();
            if tagged {
                run_survey_tagged(&pop, &design, &detection, &mut rng).unwrap().into_survey()
            } else {
                run_survey(&pop, &design, &detection, &mut rng).unwrap()
            }
        };
        let (plain, from_tagged) = (draw(false), draw(true));
        let estimate = |data: &SurveyData| {
            let fit = fit_working_model(&model, data, &FitOptions::default()).unwrap();
            estimate_abundance(data, &design, &fit, &EstimateOptions::default()).unwrap()
        };
        let (a, b) = (estimate(&plain), estimate(&from_tagged));
        assert_eq!(a.psi_hat.to_bits(), b.psi_hat.to_bits());
        assert_eq!(a, b);
    }
}

#[test]
fn perfect_detection_curve_is_uniform_key() {
    let detection = DetectionModel::homogeneous(DetectionCurve::Uniform).unwrap();
    assert_eq!(detection.pooled_integral(W), W);
}
