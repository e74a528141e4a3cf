//! Populations of fixed animal locations and simulated line-transect surveys.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detection::DetectionModel;
use crate::error::{Error, Result};
use crate::geometry::{Point, SamplingMode, StudyDesign, Transect};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Animal {
    pub location: Point,
    /// Index into the paired [`DetectionModel`]'s strata.
    pub stratum: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Placement {
    /// Independent uniform locations on the unit square, strata drawn
    /// multinomially from the weights.
    UniformRandom,
    /// CSV with columns `x,y[,stratum]`.
    FromFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    animals: Vec<Animal>,
}

impl Population {
    pub fn new(animals: Vec<Animal>) -> Result<Self> {
        if animals.is_empty() {
            return Err(Error::InvalidConfig("population must contain at least one animal".into()));
        }
        if let Some(a) = animals.iter().find(|a| !a.location.in_unit_square()) {
            return Err(Error::InvalidConfig(format!(
                "animal at ({}, {}) lies outside the unit square",
                a.location.x, a.location.y
            )));
        }
        Ok(Self { animals })
    }

    pub fn animals(&self) -> &[Animal] {
        &self.animals
    }

    pub fn true_n(&self) -> usize {
        self.animals.len()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (xi, yi) = match (col("x"), col("y")) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::Data(format!("{}: expected columns x,y[,stratum]", path.display()))),
        };
        let si = col("stratum");
        let mut animals = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let field = |i: usize| -> Result<&str> {
                record
                    .get(i)
                    .ok_or_else(|| Error::Data(format!("{}: row {} is short", path.display(), line + 2)))
            };
            let num = |i: usize| -> Result<f64> {
                field(i)?
                    .parse()
                    .map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), line + 2)))
            };
            let stratum = match si {
                Some(i) => field(i)?
                    .parse()
                    .map_err(|e| Error::Data(format!("{}: row {}: {e}", path.display(), line + 2)))?,
                None => 0,
            };
            animals.push(Animal {
                location: Point::new(num(xi)?, num(yi)?),
                stratum,
            });
        }
        Population::new(animals)
    }
}

fn draw_stratum<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

/// Places `n` animals. `FromFile` ignores `n` and the weights and returns the
/// listed animals verbatim.
pub fn generate_population<R: Rng + ?Sized>(
    n: usize,
    stratum_weights: &[f64],
    placement: &Placement,
    rng: &mut R,
) -> Result<Population> {
    match placement {
        Placement::FromFile(path) => Population::read_csv(path),
        Placement::UniformRandom => {
            if n == 0 {
                return Err(Error::InvalidConfig("population size must be positive".into()));
            }
            let total: f64 = stratum_weights.iter().sum();
            if stratum_weights.is_empty()
                || stratum_weights.iter().any(|&p| !(p >= 0.0))
                || (total - 1.0).abs() > 1e-12
            {
                return Err(Error::InvalidConfig(format!(
                    "stratum weights {stratum_weights:?} are not a probability vector"
                )));
            }
            let cumulative: Vec<f64> = stratum_weights
                .iter()
                .scan(0.0, |acc, &p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect();
            let animals = (0..n)
                .map(|_| {
                    let location = Point::new(rng.random(), rng.random());
                    let stratum = draw_stratum(&cumulative, rng);
                    Animal { location, stratum }
                })
                .collect();
            Population::new(animals)
        }
    }
}

/// Observed survey data: the transects and, per transect, the multiset of
/// detected perpendicular distances. No animal identities are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyData {
    half_width: f64,
    transects: Vec<Transect>,
    detections: Vec<Vec<f64>>,
    sampling_mode: Option<SamplingMode>,
}

impl SurveyData {
    pub fn new(half_width: f64, transects: Vec<Transect>, detections: Vec<Vec<f64>>) -> Result<Self> {
        if transects.len() != detections.len() {
            return Err(Error::Data(format!(
                "{} transects but {} detection multisets",
                transects.len(),
                detections.len()
            )));
        }
        if transects.is_empty() {
            return Err(Error::Data("survey has no transects".into()));
        }
        if let Some(&y) = detections.iter().flatten().find(|&&y| !(0.0..=half_width).contains(&y)) {
            return Err(Error::OutOfSupport { y, w: half_width });
        }
        Ok(Self {
            half_width,
            transects,
            detections,
            sampling_mode: None,
        })
    }

    pub fn with_sampling_mode(mut self, mode: SamplingMode) -> Self {
        self.sampling_mode = Some(mode);
        self
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn sampling_mode(&self) -> Option<SamplingMode> {
        self.sampling_mode
    }

    pub fn transects(&self) -> &[Transect] {
        &self.transects
    }

    pub fn detections(&self) -> &[Vec<f64>] {
        &self.detections
    }

    pub fn num_transects(&self) -> usize {
        self.transects.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.detections.iter().map(Vec::len).collect()
    }

    pub fn total_detections(&self) -> usize {
        self.detections.iter().map(Vec::len).sum()
    }

    pub fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.detections.iter().flatten().copied()
    }

    /// Writes the CSV (`transect_index,distance`) and its JSON sidecar.
    pub fn write_files(&self, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
        write_csv(csv_path, &self.detections, None)?;
        self.write_sidecar(sidecar_path)
    }

    fn write_sidecar(&self, path: &Path) -> Result<()> {
        let sidecar = Sidecar {
            half_width: self.half_width,
            num_transects: self.transects.len(),
            abscissae: self.transects.iter().map(|t| t.abscissa).collect(),
            sampling_mode: self.sampling_mode,
        };
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(file, &sidecar)?;
        Ok(())
    }

    /// Reads survey files, dropping any stratum tags.
    pub fn read_files(csv_path: &Path, sidecar_path: &Path) -> Result<Self> {
        Ok(read_files(csv_path, sidecar_path)?.0)
    }
}

/// Sidecar for the survey CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub half_width: f64,
    pub num_transects: usize,
    pub abscissae: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_mode: Option<SamplingMode>,
}

/// Default sidecar location for a survey CSV: same stem, `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_csv(path: &Path, detections: &[Vec<f64>], tags: Option<&[Vec<usize>]>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match tags {
        Some(_) => writeln!(out, "transect_index,distance,stratum_tag")?,
        None => writeln!(out, "transect_index,distance")?,
    }
    for (j, ys) in detections.iter().enumerate() {
        for (i, &y) in ys.iter().enumerate() {
            match tags {
                Some(t) => writeln!(out, "{j},{},{}", fmt17(y), t[j][i])?,
                None => writeln!(out, "{j},{}", fmt17(y))?,
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn read_files(csv_path: &Path, sidecar_path: &Path) -> Result<(SurveyData, Option<Vec<Vec<usize>>>)> {
    let sidecar: Sidecar = serde_json::from_reader(File::open(sidecar_path)?)
        .map_err(|e| Error::Data(format!("{}: {e}", sidecar_path.display())))?;
    if sidecar.abscissae.len() != sidecar.num_transects {
        return Err(Error::Data(format!(
            "{}: num_transects is {} but {} abscissae are listed",
            sidecar_path.display(),
            sidecar.num_transects,
            sidecar.abscissae.len()
        )));
    }
    let k = sidecar.num_transects;
    let mut detections = vec![Vec::new(); k];
    let mut tags: Option<Vec<Vec<usize>>> = None;

    let text = std::fs::read_to_string(csv_path)?;
    if !text.trim().is_empty() {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (ji, di) = match (col("transect_index"), col("distance")) {
            (Some(j), Some(d)) => (j, d),
            _ => {
                return Err(Error::Data(format!(
                    "{}: expected columns transect_index,distance[,stratum_tag]",
                    csv_path.display()
                )))
            }
        };
        let ti = col("stratum_tag");
        if ti.is_some() {
            tags = Some(vec![Vec::new(); k]);
        }
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let line = row + 2;
            let ctx = |msg: String| Error::Data(format!("{}:{line}: {msg}", csv_path.display()));
            let get = |i: usize| record.get(i).ok_or_else(|| ctx("missing field".into()));
            let j: usize = get(ji)?.parse().map_err(|e| ctx(format!("transect_index: {e}")))?;
            let y: f64 = get(di)?.parse().map_err(|e| ctx(format!("distance: {e}")))?;
            if j >= k {
                return Err(ctx(format!("transect_index {j} but only {k} transects")));
            }
            detections[j].push(y);
            if let (Some(ti), Some(tags)) = (ti, tags.as_mut()) {
                let s: usize = get(ti)?.parse().map_err(|e| ctx(format!("stratum_tag: {e}")))?;
                tags[j].push(s);
            }
        }
    }
    let transects = sidecar.abscissae.iter().map(|&s| Transect::new(s)).collect();
    let mut data = SurveyData::new(sidecar.half_width, transects, detections)?;
    data.sampling_mode = sidecar.sampling_mode;
    Ok((data, tags))
}

/// Survey data together with the stratum of every detection. Estimators take
/// [`SurveyData`], so tags are only reachable by the pooling diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedSurvey {
    survey: SurveyData,
    tags: Vec<Vec<usize>>,
}

impl TaggedSurvey {
    pub fn new(survey: SurveyData, tags: Vec<Vec<usize>>) -> Result<Self> {
        let shapes_match = tags.len() == survey.detections.len()
            && tags.iter().zip(&survey.detections).all(|(t, d)| t.len() == d.len());
        if !shapes_match {
            return Err(Error::Data("stratum tags do not parallel the detections".into()));
        }
        Ok(Self { survey, tags })
    }

    pub fn survey(&self) -> &SurveyData {
        &self.survey
    }

    pub fn tags(&self) -> &[Vec<usize>] {
        &self.tags
    }

    pub fn into_survey(self) -> SurveyData {
        self.survey
    }

    pub fn write_files(&self, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
        write_csv(csv_path, &self.survey.detections, Some(&self.tags))?;
        self.survey.write_sidecar(sidecar_path)
    }

    /// Reads survey files, failing if there is no `stratum_tag` column.
    pub fn read_files(csv_path: &Path, sidecar_path: &Path) -> Result<Self> {
        match read_files(csv_path, sidecar_path)? {
            (survey, Some(tags)) => Self::new(survey, tags),
            (survey, None) if survey.total_detections() == 0 => Self::new(survey.clone(), vec![Vec::new(); survey.num_transects()]),
            _ => Err(Error::MissingStratumTags),
        }
    }
}

/// Runs `k` independent transects over a fixed population. Each animal in a
/// strip is detected with probability `g_s(y)`, independently across
/// transects.
pub fn run_survey<R: Rng + ?Sized>(
    population: &Population,
    design: &StudyDesign,
    detection: &DetectionModel,
    rng: &mut R,
) -> Result<SurveyData> {
    Ok(run_survey_tagged(population, design, detection, rng)?.into_survey())
}

/// As [`run_survey`], keeping the stratum of each detection. Both functions
/// consume the random stream identically.
pub fn run_survey_tagged<R: Rng + ?Sized>(
    population: &Population,
    design: &StudyDesign,
    detection: &DetectionModel,
    rng: &mut R,
) -> Result<TaggedSurvey> {
    let transects: Vec<Transect> = (0..design.num_transects())
        .map(|_| design.sample_transect(rng))
        .collect();
    let survey = survey_transects(population, &transects, design.half_width(), detection, rng)?;
    let (data, tags) = (survey.survey, survey.tags);
    TaggedSurvey::new(data.with_sampling_mode(design.sampling_mode()), tags)
}

/// Detection process over given transects.
pub fn survey_transects<R: Rng + ?Sized>(
    population: &Population,
    transects: &[Transect],
    half_width: f64,
    detection: &DetectionModel,
    rng: &mut R,
) -> Result<TaggedSurvey> {
    let w = half_width;
    let curves = population
        .animals
        .iter()
        .map(|a| detection.curve(a.stratum).copied())
        .collect::<Result<Vec<_>>>()?;

    let mut detections = Vec::with_capacity(transects.len());
    let mut tags = Vec::with_capacity(transects.len());
    for transect in transects {
        let mut ys = Vec::new();
        let mut ts = Vec::new();
        for (animal, curve) in population.animals.iter().zip(&curves) {
            let y = transect.perpendicular_distance(animal.location);
            if y > w {
                continue;
            }
            let u: f64 = rng.random();
            if u < curve.eval(y) {
                ys.push(y);
                ts.push(animal.stratum);
            }
        }
        detections.push(ys);
        tags.push(ts);
    }
    TaggedSurvey::new(SurveyData::new(w, transects.to_vec(), detections)?, tags)
}
