//! Parametric working model for the pooled detected-distance density on
//! `[0, w]`: a key function times a cosine series,
//!
//! ```text
//! u(y; θ) = key(y; θ_key) · (1 + Σ_m a_m cos(mπy/w)),   f(y; θ) = u(y; θ) / ∫₀ʷ u
//! ```
//!
//! Key parameters live on the log scale (`log σ`, and `log(b − 1)` for the
//! hazard-rate shape) so the parameter space is all of `ℝᵈ`. If the series
//! dips below zero the density is clamped to zero and the parameter vector is
//! flagged infeasible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

pub const MAX_ADJUSTMENTS: usize = 5;
/// Grid size of the nonnegativity check.
pub const FEASIBILITY_GRID: usize = 512;
const NORMALIZER_TOL: f64 = 1e-12;
const DEGENERATE_BELOW: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyFunction {
    UniformKey,
    HalfNormalKey,
    HazardRateKey,
}

impl KeyFunction {
    pub fn dim(&self) -> usize {
        match self {
            KeyFunction::UniformKey => 0,
            KeyFunction::HalfNormalKey => 1,
            KeyFunction::HazardRateKey => 2,
        }
    }
}

/// JSON form: `{key, key_params_init, num_adjustments}`. Initial key
/// parameters are on the natural scale (`[σ]` or `[σ, b]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub key: KeyFunction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_params_init: Option<Vec<f64>>,
    #[serde(default)]
    pub num_adjustments: usize,
}

impl ModelSpec {
    pub fn new(key: KeyFunction, num_adjustments: usize) -> Self {
        Self {
            key,
            key_params_init: None,
            num_adjustments,
        }
    }
}

/// Parameter vector: transformed key parameters, then adjustment
/// coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Theta(pub Vec<f64>);

impl Theta {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// A [`ModelSpec`] bound to a truncation distance.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingModel {
    spec: ModelSpec,
    w: f64,
}

impl WorkingModel {
    pub fn new(spec: ModelSpec, truncation: f64) -> Result<Self> {
        if !(truncation > 0.0 && truncation.is_finite()) {
            return Err(Error::InvalidModel(format!("truncation must be positive, got {truncation}")));
        }
        if spec.num_adjustments > MAX_ADJUSTMENTS {
            return Err(Error::InvalidModel(format!(
                "at most {MAX_ADJUSTMENTS} adjustment terms, got {}",
                spec.num_adjustments
            )));
        }
        if let Some(init) = &spec.key_params_init {
            if init.len() != spec.key.dim() {
                return Err(Error::InvalidModel(format!(
                    "{:?} takes {} key parameters, got {}",
                    spec.key,
                    spec.key.dim(),
                    init.len()
                )));
            }
            let ok = match spec.key {
                KeyFunction::UniformKey => true,
                KeyFunction::HalfNormalKey => init[0] > 0.0,
                KeyFunction::HazardRateKey => init[0] > 0.0 && init[1] > 1.0,
            };
            if !ok {
                return Err(Error::InvalidModel(format!("invalid initial key parameters {init:?}")));
            }
        }
        Ok(Self { spec, w: truncation })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn truncation(&self) -> f64 {
        self.w
    }

    pub fn key_dim(&self) -> usize {
        self.spec.key.dim()
    }

    pub fn num_adjustments(&self) -> usize {
        self.spec.num_adjustments
    }

    pub fn dim(&self) -> usize {
        self.key_dim() + self.num_adjustments()
    }

    /// Builds θ from natural-scale key parameters and adjustment coefficients.
    pub fn theta_from_natural(&self, key_params: &[f64], adjustments: &[f64]) -> Result<Theta> {
        if key_params.len() != self.key_dim() || adjustments.len() != self.num_adjustments() {
            return Err(Error::InvalidModel("parameter counts do not match the model".into()));
        }
        let mut theta = Vec::with_capacity(self.dim());
        match self.spec.key {
            KeyFunction::UniformKey => {}
            KeyFunction::HalfNormalKey => theta.push(key_params[0].ln()),
            KeyFunction::HazardRateKey => {
                theta.push(key_params[0].ln());
                theta.push((key_params[1] - 1.0).ln());
            }
        }
        theta.extend_from_slice(adjustments);
        Ok(Theta(theta))
    }

    /// Natural-scale key parameters (`σ`, `b`) of θ.
    pub fn natural_key_params(&self, theta: &Theta) -> Vec<f64> {
        let t = theta.as_slice();
        match self.spec.key {
            KeyFunction::UniformKey => vec![],
            KeyFunction::HalfNormalKey => vec![t[0].exp()],
            KeyFunction::HazardRateKey => vec![t[0].exp(), 1.0 + t[1].exp()],
        }
    }

    fn check_dim(&self, theta: &Theta) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::InvalidModel(format!(
                "θ has {} entries, model needs {}",
                theta.len(),
                self.dim()
            )));
        }
        if theta.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("θ has non-finite entries".into()));
        }
        Ok(())
    }

    /// `cos(mπy/w)` for `m = 1..=M`, written to `out[..M]`.
    pub fn cosines(&self, y: f64, out: &mut [f64]) {
        let m = self.num_adjustments();
        if m == 0 {
            return;
        }
        let c1 = (std::f64::consts::PI * y / self.w).cos();
        out[0] = c1;
        if m > 1 {
            out[1] = 2.0 * c1 * c1 - 1.0;
        }
        for i in 2..m {
            out[i] = 2.0 * c1 * out[i - 1] - out[i - 2];
        }
    }

    fn series(&self, theta: &[f64], cos: &[f64]) -> f64 {
        let adj = &theta[self.key_dim()..];
        1.0 + adj.iter().zip(cos).map(|(a, c)| a * c).sum::<f64>()
    }

    /// Key value; writes its gradient w.r.t. the key parameters to `grad`.
    fn key_with_grad(&self, theta: &[f64], y: f64, grad: &mut [f64]) -> f64 {
        match self.spec.key {
            KeyFunction::UniformKey => 1.0,
            KeyFunction::HalfNormalKey => {
                let sigma = theta[0].exp();
                let r2 = (y / sigma).powi(2);
                let k = (-0.5 * r2).exp();
                grad[0] = k * r2;
                k
            }
            KeyFunction::HazardRateKey => {
                if y <= 0.0 {
                    grad[0] = 0.0;
                    grad[1] = 0.0;
                    return 1.0;
                }
                let sigma = theta[0].exp();
                let bm1 = theta[1].exp();
                let b = 1.0 + bm1;
                let log_ratio = (y / sigma).ln();
                let t = (-b * log_ratio).exp();
                let e = (-t).exp();
                grad[0] = e * b * t;
                grad[1] = -e * t * log_ratio * bm1;
                -(-t).exp_m1()
            }
        }
    }

    /// Unnormalized density and its θ-gradient, given precomputed cosines.
    /// Returns `(u, clamped)`.
    pub fn unnormalized_with_grad(&self, theta: &[f64], y: f64, cos: &[f64], grad: &mut [f64]) -> (f64, bool) {
        let kd = self.key_dim();
        let key = self.key_with_grad(theta, y, &mut grad[..kd]);
        let s = self.series(theta, cos);
        if s < 0.0 {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return (0.0, true);
        }
        for g in &mut grad[..kd] {
            *g *= s;
        }
        for (g, c) in grad[kd..].iter_mut().zip(cos) {
            *g = key * c;
        }
        (key * s, false)
    }

    fn unnormalized_raw(&self, theta: &[f64], y: f64) -> (f64, bool) {
        let mut cos = [0.0; MAX_ADJUSTMENTS];
        let mut grad = [0.0; 2 + MAX_ADJUSTMENTS];
        self.cosines(y, &mut cos);
        self.unnormalized_with_grad(theta, y, &cos, &mut grad[..self.dim()])
    }

    fn check_support(&self, y: f64) -> Result<()> {
        if (0.0..=self.w).contains(&y) {
            Ok(())
        } else {
            Err(Error::OutOfSupport { y, w: self.w })
        }
    }

    /// `key(y) · max(0, series(y))`.
    pub fn unnormalized_density(&self, theta: &Theta, y: f64) -> Result<f64> {
        self.check_dim(theta)?;
        self.check_support(y)?;
        Ok(self.unnormalized_raw(theta.as_slice(), y).0)
    }

    /// True when the cosine series is nonnegative on the check grid.
    pub fn is_feasible(&self, theta: &Theta) -> bool {
        if self.check_dim(theta).is_err() {
            return false;
        }
        if self.num_adjustments() == 0 {
            return true;
        }
        let mut cos = [0.0; MAX_ADJUSTMENTS];
        (0..FEASIBILITY_GRID).all(|i| {
            let y = self.w * i as f64 / (FEASIBILITY_GRID - 1) as f64;
            self.cosines(y, &mut cos);
            self.series(theta.as_slice(), &cos) >= 0.0
        })
    }

    /// Normalizing constant and its gradient, evaluated together.
    pub fn normalizer(&self, theta: &Theta) -> Result<Normalizer> {
        self.check_dim(theta)?;
        let d = self.dim();
        let t = theta.as_slice();
        let mut cos = [0.0; MAX_ADJUSTMENTS];
        let r = quadrature::integrate_vec(
            |y, out: &mut [f64]| {
                self.cosines(y, &mut cos);
                let (u, _) = self.unnormalized_with_grad(t, y, &cos, &mut out[1..]);
                out[0] = u;
            },
            0.0,
            self.w,
            &[],
            d + 1,
            NORMALIZER_TOL,
        );
        let z = r.value[0];
        if !(z >= DEGENERATE_BELOW) {
            return Err(Error::DegenerateModel(z));
        }
        Ok(Normalizer {
            z,
            grad: r.value[1..].to_vec(),
        })
    }

    /// `∫₀ʷ u(y; θ) dy`.
    pub fn normalizing_constant(&self, theta: &Theta) -> Result<f64> {
        Ok(self.normalizer(theta)?.z)
    }

    /// Binds θ, computing the normalizer once for repeated evaluation.
    pub fn at<'a>(&'a self, theta: &Theta) -> Result<Density<'a>> {
        let normalizer = self.normalizer(theta)?;
        Ok(Density {
            model: self,
            theta: theta.clone(),
            feasible: self.is_feasible(theta),
            normalizer,
        })
    }

    pub fn pdf(&self, theta: &Theta, y: f64) -> Result<f64> {
        self.at(theta)?.pdf(y)
    }

    pub fn log_pdf(&self, theta: &Theta, y: f64) -> Result<f64> {
        self.at(theta)?.log_pdf(y)
    }

    pub fn pdf_at_zero(&self, theta: &Theta) -> Result<f64> {
        Ok(self.at(theta)?.pdf_at_zero())
    }

    pub fn grad_log_pdf(&self, theta: &Theta, y: f64) -> Result<Vec<f64>> {
        self.at(theta)?.grad_log_pdf(y)
    }

    pub fn grad_pdf_at_zero(&self, theta: &Theta) -> Result<Vec<f64>> {
        Ok(self.at(theta)?.grad_pdf_at_zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub z: f64,
    pub grad: Vec<f64>,
}

/// The working density at a fixed θ.
#[derive(Debug, Clone)]
pub struct Density<'a> {
    model: &'a WorkingModel,
    theta: Theta,
    feasible: bool,
    normalizer: Normalizer,
}

impl Density<'_> {
    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    /// False when the series went negative somewhere on the check grid.
    pub fn feasible(&self) -> bool {
        self.feasible
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn pdf(&self, y: f64) -> Result<f64> {
        self.model.check_support(y)?;
        Ok(self.model.unnormalized_raw(self.theta.as_slice(), y).0 / self.normalizer.z)
    }

    pub fn log_pdf(&self, y: f64) -> Result<f64> {
        Ok(self.pdf(y)?.ln())
    }

    pub fn pdf_at_zero(&self) -> f64 {
        self.model.unnormalized_raw(self.theta.as_slice(), 0.0).0 / self.normalizer.z
    }

    /// `∂/∂θ log f(y; θ) = ∇u/u − ∇Z/Z`.
    pub fn grad_log_pdf(&self, y: f64) -> Result<Vec<f64>> {
        self.model.check_support(y)?;
        let d = self.model.dim();
        let mut cos = [0.0; MAX_ADJUSTMENTS];
        let mut grad = vec![0.0; d];
        self.model.cosines(y, &mut cos);
        let (u, _) = self
            .model
            .unnormalized_with_grad(self.theta.as_slice(), y, &cos, &mut grad);
        let z = self.normalizer.z;
        for (g, gz) in grad.iter_mut().zip(&self.normalizer.grad) {
            *g = *g / u - gz / z;
        }
        Ok(grad)
    }

    /// `∂/∂θ f(0; θ) = ∇u(0)/Z − u(0) ∇Z/Z²`.
    pub fn grad_pdf_at_zero(&self) -> Vec<f64> {
        let d = self.model.dim();
        let mut cos = [0.0; MAX_ADJUSTMENTS];
        let mut grad = vec![0.0; d];
        self.model.cosines(0.0, &mut cos);
        let (u, _) = self
            .model
            .unnormalized_with_grad(self.theta.as_slice(), 0.0, &cos, &mut grad);
        let z = self.normalizer.z;
        for (g, gz) in grad.iter_mut().zip(&self.normalizer.grad) {
            *g = *g / z - u * gz / (z * z);
        }
        grad
    }
}
