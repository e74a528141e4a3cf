use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid study design: {0}")]
    InvalidDesign(String),
    #[error("invalid detection model: {0}")]
    InvalidDetection(String),
    #[error("invalid working model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown stratum {0}")]
    UnknownStratum(usize),
    #[error("distance {y} outside the truncation interval [0, {w}]")]
    OutOfSupport { y: f64, w: f64 },
    #[error("working model is degenerate (normalizing constant {0:e})")]
    DegenerateModel(f64),
    #[error("survey contains no detections")]
    NoDetections,
    #[error("{detections} detections cannot support a fit that needs at least {required}")]
    UnderdeterminedFit { detections: usize, required: usize },
    #[error("working model fit did not converge")]
    NonConvergence,
    #[error("curvature matrix is singular")]
    SingularInformation,
    #[error("at least 2 transects are needed for a standard error, got {0}")]
    TooFewTransects(usize),
    #[error("minus sampling requires an explicit override")]
    MinusSamplingOverride,
    #[error("survey carries no stratum tags")]
    MissingStratumTags,
    #[error("design check needs a positive number of draws")]
    ZeroDraws,
    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error("malformed data: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable name used when tallying replicate failures.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDesign(_) => "InvalidDesign",
            Error::InvalidDetection(_) => "InvalidDetection",
            Error::InvalidModel(_) => "InvalidModel",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::UnknownStratum(_) => "UnknownStratum",
            Error::OutOfSupport { .. } => "OutOfSupport",
            Error::DegenerateModel(_) => "DegenerateModel",
            Error::NoDetections => "NoDetections",
            Error::UnderdeterminedFit { .. } => "UnderdeterminedFit",
            Error::NonConvergence => "NonConvergence",
            Error::SingularInformation => "SingularInformation",
            Error::TooFewTransects(_) => "TooFewTransects",
            Error::MinusSamplingOverride => "MinusSamplingOverride",
            Error::MissingStratumTags => "MissingStratumTags",
            Error::ZeroDraws => "ZeroDraws",
            Error::TooManyFailures { .. } => "TooManyFailures",
            Error::Data(_) => "Data",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}
