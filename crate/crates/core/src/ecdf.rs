//! Empirical distribution functions and the one-sample Kolmogorov–Smirnov
//! test against a uniform law.

use serde::{Deserialize, Serialize};

/// Right-continuous step function `u ↦ #{x ≤ u} / n` over a sorted sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut sample: Vec<f64>) -> Self {
        sample.sort_by(f64::total_cmp);
        Self { sorted: sample }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Number of sample points `≤ u`.
    pub fn count_le(&self, u: f64) -> usize {
        self.sorted.partition_point(|&x| x <= u)
    }

    /// `F̂(u)`; zero for an empty sample.
    pub fn eval(&self, u: f64) -> f64 {
        if self.sorted.is_empty() {
            0.0
        } else {
            self.count_le(u) as f64 / self.sorted.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

impl KsResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (−1)^{j−1} exp(−2 j² λ²)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = (-2.0 * j * j * lambda * lambda).exp();
        sum += if j as u64 % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS statistic of `sample` against `F(x)`, with an asymptotic p-value
/// (Stephens' small-sample scaling of the Kolmogorov limit).
pub fn ks_test<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> KsResult {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    let sqrt_n = nf.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    KsResult {
        statistic: d,
        p_value: if n == 0 { 1.0 } else { kolmogorov_sf(lambda) },
        n,
    }
}

pub fn ks_uniform(sample: &[f64], lo: f64, hi: f64) -> KsResult {
    ks_test(sample, |x| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn step_function_semantics() {
        let f = EmpiricalCdf::new(vec![0.3, 0.1, 0.1, 0.2]);
        assert_eq!(f.eval(0.0), 0.0);
        assert_eq!(f.eval(0.1), 0.5);
        assert_eq!(f.eval(0.15), 0.5);
        assert_eq!(f.eval(0.3), 1.0);
        assert_eq!(EmpiricalCdf::new(vec![]).eval(1.0), 0.0);
    }

    #[test]
    fn kolmogorov_known_values() {
        // 1% and 5% critical points of the limiting distribution
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-4);
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn uniform_sample_passes_and_shifted_fails() {
        let mut rng = seeded(1);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_uniform(&xs, 0.0, 1.0).passes(0.01));
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert!(!ks_uniform(&sq, 0.0, 1.0).passes(0.01));
    }

    #[test]
    fn statistic_by_hand() {
        let r = ks_uniform(&[0.5], 0.0, 1.0);
        assert!((r.statistic - 0.5).abs() < 1e-15);
    }
}
