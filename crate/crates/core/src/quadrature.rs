//! Adaptive Gauss–Kronrod (7/15 point) quadrature.
//!
//! Integrands may be vector valued; the error estimate driving subdivision
//! is the max-norm of the Gauss/Kronrod difference over components.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Subdivision limit per call.
pub const MAX_INTERVALS: usize = 4000;

#[derive(Debug, Clone)]
pub struct QuadResult {
    pub value: Vec<f64>,
    pub error: f64,
    pub intervals: usize,
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> Segment
where
    F: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut k = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut lo = vec![0.0; dim];
    f(center, buf);
    for d in 0..dim {
        k[d] = WGK[7] * buf[d];
        g[d] = WG[3] * buf[d];
    }
    for (i, &x) in XGK[..7].iter().enumerate() {
        let dx = half * x;
        f(center - dx, buf);
        lo.copy_from_slice(&buf[..dim]);
        f(center + dx, buf);
        for d in 0..dim {
            let pair = lo[d] + buf[d];
            k[d] += WGK[i] * pair;
            if i % 2 == 1 {
                g[d] += WG[i / 2] * pair;
            }
        }
    }
    let mut error = 0.0f64;
    for d in 0..dim {
        k[d] *= half;
        g[d] *= half;
        error = error.max((k[d] - g[d]).abs());
    }
    Segment {
        a,
        b,
        value: k,
        error,
    }
}

/// Integrates a `dim`-component integrand over `[a, b]`, bisecting the
/// worst interval until the summed error estimate drops below `abs_tol`.
/// Interior `breakpoints` (e.g. jump locations) seed the initial partition.
pub fn integrate_vec<F>(mut f: F, a: f64, b: f64, breakpoints: &[f64], dim: usize, abs_tol: f64) -> QuadResult
where
    F: FnMut(f64, &mut [f64]),
{
    let mut buf = vec![0.0; dim.max(1)];
    let mut cuts = vec![a];
    cuts.extend(breakpoints.iter().copied().filter(|&x| x > a && x < b));
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);

    let mut heap = BinaryHeap::new();
    for pair in cuts.windows(2) {
        heap.push(kronrod(&mut f, pair[0], pair[1], dim, &mut buf));
    }
    loop {
        let total_err: f64 = heap.iter().map(|s| s.error).sum();
        if total_err <= abs_tol || heap.len() >= MAX_INTERVALS {
            break;
        }
        let worst = heap.pop().expect("nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            break;
        }
        heap.push(kronrod(&mut f, worst.a, mid, dim, &mut buf));
        heap.push(kronrod(&mut f, mid, worst.b, dim, &mut buf));
    }

    let intervals = heap.len();
    let mut segments = heap.into_vec();
    // fixed summation order so results do not depend on heap layout
    segments.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut value = vec![0.0; dim];
    let mut error = 0.0;
    for s in &segments {
        for d in 0..dim {
            value[d] += s.value[d];
        }
        error += s.error;
    }
    QuadResult {
        value,
        error,
        intervals,
    }
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(f: F, a: f64, b: f64, breakpoints: &[f64], abs_tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let r = integrate_vec(|x, out: &mut [f64]| out[0] = f(x), a, b, breakpoints, 1, abs_tol);
    (r.value[0], r.error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomials_exact() {
        let (v, _) = integrate(|x| x.powi(5) - 3.0 * x * x + 1.0, 0.0, 2.0, &[], 1e-14);
        assert_relative_eq!(v, 64.0 / 6.0 - 8.0 + 2.0, epsilon = 1e-13);
    }

    #[test]
    fn gaussian_against_erf() {
        let s = 0.02;
        let w = 0.05;
        let (v, _) = integrate(|y| (-y * y / (2.0 * s * s)).exp(), 0.0, w, &[], 1e-12);
        let exact = s * (std::f64::consts::PI / 2.0).sqrt() * statrs::function::erf::erf(w / (s * 2f64.sqrt()));
        assert_relative_eq!(v, exact, max_relative = 1e-12);
    }

    #[test]
    fn jump_with_breakpoint() {
        let step = |y: f64| if y < 0.3 { 1.0 } else { 0.25 };
        let (v, _) = integrate(step, 0.0, 1.0, &[0.3], 1e-12);
        assert_relative_eq!(v, 0.3 + 0.25 * 0.7, epsilon = 1e-14);
        let (v, _) = integrate(step, 0.0, 1.0, &[], 1e-10);
        assert_relative_eq!(v, 0.3 + 0.25 * 0.7, epsilon = 1e-9);
    }

    #[test]
    fn vector_components() {
        let r = integrate_vec(
            |x, out: &mut [f64]| {
                out[0] = x.cos();
                out[1] = x.exp();
            },
            0.0,
            1.0,
            &[],
            2,
            1e-13,
        );
        assert_relative_eq!(r.value[0], 1f64.sin(), epsilon = 1e-13);
        assert_relative_eq!(r.value[1], 1f64.exp() - 1.0, epsilon = 1e-13);
    }
}
