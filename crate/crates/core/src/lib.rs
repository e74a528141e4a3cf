//! Line-transect distance sampling on the unit square.
//!
//! The crate covers the full pipeline: survey design and coverage
//! probabilities ([`geometry`]), detection functions ([`detection`]),
//! survey simulation ([`survey`]), a key-plus-cosine working model for the
//! detected-distance density ([`density`]), M-estimation of its parameters
//! ([`fit`]), the plug-in abundance estimator with influence-value based
//! standard errors ([`abundance`]) and a replicated Monte Carlo harness
//! ([`mc`]).

pub mod abundance;
pub mod density;
pub mod detection;
pub mod ecdf;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod mc;
pub mod quadrature;
pub mod rng;
pub mod survey;

pub use abundance::{
    estimate_abundance, influence_values, naive_se, pooled_cdf, pooling_check, sandwich_se,
    AbundanceEstimate, EstimateOptions, PooledEmpiricalCdf,
};
pub use density::{KeyFunction, ModelSpec, Theta, WorkingModel};
pub use detection::{DetectionCurve, DetectionModel, Stratum};
pub use error::{Error, Result};
pub use fit::{fit_working_model, pooled_loglik, FitOptions, FitResult};
pub use geometry::{Point, SamplingMode, StudyDesign, Transect};
pub use mc::{ScenarioConfig, StudySummary};
pub use survey::{Animal, Placement, Population, SurveyData, TaggedSurvey};
