//! Unit-square environment, vertical transects and coverage probabilities.
//!
//! The environment is fixed to `[0,1]²`. A transect is the full-height
//! vertical segment at abscissa `s₁`; an animal at `e` is in the covered
//! strip when `|e₁ − s₁| ≤ w`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A location in the plane. Animal locations lie in the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn in_unit_square(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }
}

/// How transect abscissae are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingMode {
    /// `S₁ ~ Uniform(−w, 1+w)`: strips may hang over the boundary.
    PlusSampling,
    /// `S₁ ~ Uniform(0, 1)`: transects confined to the square.
    MinusSampling,
}

#[derive(Deserialize)]
struct RawDesign {
    half_width: f64,
    num_transects: usize,
    sampling_mode: SamplingMode,
}

/// Strip half-width, transect count and transect law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDesign")]
pub struct StudyDesign {
    half_width: f64,
    num_transects: usize,
    sampling_mode: SamplingMode,
}

impl TryFrom<RawDesign> for StudyDesign {
    type Error = Error;

    fn try_from(raw: RawDesign) -> Result<Self> {
        StudyDesign::new(raw.half_width, raw.num_transects, raw.sampling_mode)
    }
}

impl StudyDesign {
    pub fn new(half_width: f64, num_transects: usize, sampling_mode: SamplingMode) -> Result<Self> {
        if !(half_width > 0.0 && half_width < 0.5) {
            return Err(Error::InvalidDesign(format!(
                "half_width must lie in (0, 0.5), got {half_width}"
            )));
        }
        if num_transects == 0 {
            return Err(Error::InvalidDesign("num_transects must be at least 1".into()));
        }
        Ok(Self {
            half_width,
            num_transects,
            sampling_mode,
        })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn num_transects(&self) -> usize {
        self.num_transects
    }

    pub fn sampling_mode(&self) -> SamplingMode {
        self.sampling_mode
    }

    pub fn with_num_transects(&self, k: usize) -> Result<Self> {
        Self::new(self.half_width, k, self.sampling_mode)
    }

    pub fn with_sampling_mode(&self, mode: SamplingMode) -> Self {
        Self {
            sampling_mode: mode,
            ..*self
        }
    }

    /// Open support of the transect abscissa.
    pub fn abscissa_support(&self) -> (f64, f64) {
        match self.sampling_mode {
            SamplingMode::PlusSampling => (-self.half_width, 1.0 + self.half_width),
            SamplingMode::MinusSampling => (0.0, 1.0),
        }
    }

    pub fn sample_transect<R: Rng + ?Sized>(&self, rng: &mut R) -> Transect {
        let (lo, hi) = self.abscissa_support();
        Transect {
            abscissa: rng.random_range(lo..hi),
        }
    }

    /// `P(|e₁ − S₁| ≤ w)` for an animal at `location`.
    pub fn coverage_probability(&self, location: Point) -> f64 {
        self.coverage_within(location, self.half_width)
    }

    /// `P(|e₁ − S₁| ≤ y)` for `0 ≤ y ≤ w`.
    pub fn coverage_within(&self, location: Point, y: f64) -> f64 {
        let w = self.half_width;
        match self.sampling_mode {
            SamplingMode::PlusSampling => 2.0 * y / (1.0 + 2.0 * w),
            SamplingMode::MinusSampling => {
                let e1 = location.x;
                ((e1 + y).min(1.0) - (e1 - y).max(0.0)).max(0.0)
            }
        }
    }

    /// Coverage probability of an animal far from the boundary.
    pub fn interior_coverage(&self) -> f64 {
        let w = self.half_width;
        match self.sampling_mode {
            SamplingMode::PlusSampling => 2.0 * w / (1.0 + 2.0 * w),
            SamplingMode::MinusSampling => 2.0 * w,
        }
    }
}

/// A vertical transect `{(s₁, s₂) : 0 ≤ s₂ ≤ 1}`. The abscissa may fall
/// outside `[0,1]` under plus sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transect {
    pub abscissa: f64,
}

impl Transect {
    pub fn new(abscissa: f64) -> Self {
        Self { abscissa }
    }

    pub fn perpendicular_distance(&self, location: Point) -> f64 {
        (location.x - self.abscissa).abs()
    }

    /// Closed strip membership: `d = w` counts as covered.
    pub fn covers(&self, location: Point, half_width: f64) -> bool {
        self.perpendicular_distance(location) <= half_width
    }
}

pub fn perpendicular_distance(location: Point, transect: &Transect) -> f64 {
    transect.perpendicular_distance(location)
}

pub fn in_covered_area(location: Point, transect: &Transect, half_width: f64) -> bool {
    transect.covers(location, half_width)
}

pub fn coverage_probability(design: &StudyDesign, location: Point) -> f64 {
    design.coverage_probability(location)
}
