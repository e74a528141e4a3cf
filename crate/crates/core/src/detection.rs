//! Per-stratum detection functions `g_s(y)`.
//!
//! Heterogeneity is a finite mixture: each stratum carries a curve and its
//! share of the population. All curves satisfy `g(0) = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionCurve {
    /// `g ≡ 1`.
    Uniform,
    /// `g(y) = exp(−y²/(2σ²))`.
    HalfNormal { sigma: f64 },
    /// `g(y) = 1 − exp(−(y/σ)^(−b))`.
    HazardRate { sigma: f64, shape: f64 },
    /// `g(y) = 1` below the breakpoint, `prob` at and above it.
    Step { prob: f64, breakpoint: f64 },
}

impl DetectionCurve {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDetection(m));
        match *self {
            DetectionCurve::Uniform => Ok(()),
            DetectionCurve::HalfNormal { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                bad(format!("half-normal scale must be positive, got {sigma}"))
            }
            DetectionCurve::HazardRate { sigma, shape } if !(sigma > 0.0 && shape > 1.0) => {
                bad(format!("hazard-rate needs sigma > 0 and shape > 1, got ({sigma}, {shape})"))
            }
            DetectionCurve::Step { prob, breakpoint } if !(prob > 0.0 && prob <= 1.0 && breakpoint > 0.0) => {
                bad(format!("step curve needs prob in (0,1] and breakpoint > 0, got ({prob}, {breakpoint})"))
            }
            _ => Ok(()),
        }
    }

    /// Value of the curve at `y ≥ 0`, ignoring truncation.
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            DetectionCurve::Uniform => 1.0,
            DetectionCurve::HalfNormal { sigma } => (-0.5 * (y / sigma).powi(2)).exp(),
            DetectionCurve::HazardRate { sigma, shape } => {
                if y <= 0.0 {
                    1.0
                } else {
                    -(-(y / sigma).powf(-shape)).exp_m1()
                }
            }
            DetectionCurve::Step { prob, breakpoint } => {
                if y < breakpoint {
                    1.0
                } else {
                    prob
                }
            }
        }
    }

    /// `∫₀ʷ g(y) dy` by adaptive quadrature.
    pub fn integral(&self, w: f64) -> f64 {
        let breaks: &[f64] = match self {
            DetectionCurve::Step { breakpoint, .. } => std::slice::from_ref(breakpoint),
            _ => &[],
        };
        quadrature::integrate(|y| self.eval(y), 0.0, w, breaks, QUAD_TOL * w).0
    }

    fn family(&self) -> &'static str {
        match self {
            DetectionCurve::Uniform => "Uniform",
            DetectionCurve::HalfNormal { .. } => "HalfNormal",
            DetectionCurve::HazardRate { .. } => "HazardRate",
            DetectionCurve::Step { .. } => "Step",
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            DetectionCurve::Uniform => vec![],
            DetectionCurve::HalfNormal { sigma } => vec![sigma],
            DetectionCurve::HazardRate { sigma, shape } => vec![sigma, shape],
            DetectionCurve::Step { prob, breakpoint } => vec![prob, breakpoint],
        }
    }

    fn from_parts(family: &str, params: &[f64]) -> Result<Self> {
        let arity = |n: usize| {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidDetection(format!(
                    "{family} takes {n} parameters, got {}",
                    params.len()
                )))
            }
        };
        let curve = match family {
            "Uniform" => {
                arity(0)?;
                DetectionCurve::Uniform
            }
            "HalfNormal" => {
                arity(1)?;
                DetectionCurve::HalfNormal { sigma: params[0] }
            }
            "HazardRate" => {
                arity(2)?;
                DetectionCurve::HazardRate {
                    sigma: params[0],
                    shape: params[1],
                }
            }
            "Step" => {
                arity(2)?;
                DetectionCurve::Step {
                    prob: params[0],
                    breakpoint: params[1],
                }
            }
            other => return Err(Error::InvalidDetection(format!("unknown family {other:?}"))),
        };
        curve.validate()?;
        Ok(curve)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStratum", into = "RawStratum")]
pub struct Stratum {
    pub label: String,
    pub curve: DetectionCurve,
    /// Share of the population in this stratum.
    pub weight: f64,
}

#[derive(Serialize, Deserialize)]
struct RawStratum {
    label: String,
    family: String,
    #[serde(default)]
    params: Vec<f64>,
    weight: f64,
}

impl TryFrom<RawStratum> for Stratum {
    type Error = Error;

    fn try_from(raw: RawStratum) -> Result<Self> {
        Ok(Stratum {
            curve: DetectionCurve::from_parts(&raw.family, &raw.params)?,
            label: raw.label,
            weight: raw.weight,
        })
    }
}

impl From<Stratum> for RawStratum {
    fn from(s: Stratum) -> Self {
        RawStratum {
            label: s.label,
            family: s.curve.family().to_string(),
            params: s.curve.params(),
            weight: s.weight,
        }
    }
}

/// Finite mixture of detection curves. Serialized as a JSON list of
/// `{label, family, params, weight}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Stratum>", into = "Vec<Stratum>")]
pub struct DetectionModel {
    strata: Vec<Stratum>,
}

impl TryFrom<Vec<Stratum>> for DetectionModel {
    type Error = Error;

    fn try_from(strata: Vec<Stratum>) -> Result<Self> {
        DetectionModel::new(strata)
    }
}

impl From<DetectionModel> for Vec<Stratum> {
    fn from(m: DetectionModel) -> Self {
        m.strata
    }
}

impl DetectionModel {
    pub fn new(strata: Vec<Stratum>) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::InvalidDetection("at least one stratum is required".into()));
        }
        for (i, s) in strata.iter().enumerate() {
            s.curve.validate()?;
            if !(s.weight >= 0.0 && s.weight.is_finite()) {
                return Err(Error::InvalidDetection(format!("stratum {:?} has weight {}", s.label, s.weight)));
            }
            if strata[..i].iter().any(|o| o.label == s.label) {
                return Err(Error::InvalidDetection(format!("duplicate stratum label {:?}", s.label)));
            }
        }
        let total: f64 = strata.iter().map(|s| s.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDetection(format!("stratum weights sum to {total}, not 1")));
        }
        Ok(Self { strata })
    }

    /// Single-stratum model with weight 1.
    pub fn homogeneous(curve: DetectionCurve) -> Result<Self> {
        Self::new(vec![Stratum {
            label: "all".into(),
            curve,
            weight: 1.0,
        }])
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn len(&self) -> usize {
        self.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.strata.iter().map(|s| s.weight).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.strata.iter().position(|s| s.label == label)
    }

    pub fn curve(&self, stratum: usize) -> Result<&DetectionCurve> {
        self.strata
            .get(stratum)
            .map(|s| &s.curve)
            .ok_or(Error::UnknownStratum(stratum))
    }

    /// Checks the truncation-dependent invariants for strip half-width `w`:
    /// step breakpoints inside `(0, w)`, `g(0) = 1`, values in `[0, 1]` and a
    /// positive integral over the strip.
    pub fn check_truncation(&self, w: f64) -> Result<()> {
        for s in &self.strata {
            if let DetectionCurve::Step { breakpoint, .. } = s.curve {
                if breakpoint >= w {
                    return Err(Error::InvalidDetection(format!(
                        "step breakpoint {breakpoint} of {:?} must be below w = {w}",
                        s.label
                    )));
                }
            }
            if s.curve.eval(0.0) != 1.0 {
                return Err(Error::InvalidDetection(format!("g(0) != 1 for {:?}", s.label)));
            }
            let grid_ok = (0..=256).all(|i| {
                let g = s.curve.eval(w * i as f64 / 256.0);
                (0.0..=1.0).contains(&g)
            });
            if !grid_ok {
                return Err(Error::InvalidDetection(format!("{:?} leaves [0,1] on the strip", s.label)));
            }
            if !(s.curve.integral(w) > 0.0) {
                return Err(Error::InvalidDetection(format!("{:?} has zero mass on the strip", s.label)));
            }
        }
        Ok(())
    }

    /// `g_s(y)` for `y ≤ w`, zero outside the strip.
    pub fn detection_prob(&self, stratum: usize, y: f64, w: f64) -> Result<f64> {
        let curve = self.curve(stratum)?;
        if y < 0.0 {
            return Err(Error::OutOfSupport { y, w });
        }
        Ok(if y > w { 0.0 } else { curve.eval(y) })
    }

    /// `(1/w) ∫₀ʷ g_s(y) dy`.
    pub fn mean_detection_over_strip(&self, stratum: usize, w: f64) -> Result<f64> {
        Ok(self.curve(stratum)?.integral(w) / w)
    }

    /// `∫₀ʷ ḡ(y) dy` for the population-weighted mean curve `ḡ = Σ_s π_s g_s`.
    pub fn pooled_integral(&self, w: f64) -> f64 {
        self.strata.iter().map(|s| s.weight * s.curve.integral(w)).sum()
    }
}
