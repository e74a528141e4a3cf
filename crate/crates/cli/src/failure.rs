use std::fmt;

use distline::Error;

pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const ESTIMATION: u8 = 4;
pub const ASSERTION: u8 = 5;

/// An error with the process exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Self::new(CONFIG, error)
    }

    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        Self::new(DATA, error)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub fn code_for(e: &Error) -> u8 {
    match e {
        Error::InvalidDesign(_)
        | Error::InvalidDetection(_)
        | Error::InvalidModel(_)
        | Error::InvalidConfig(_)
        | Error::UnknownStratum(_)
        | Error::MinusSamplingOverride
        | Error::ZeroDraws => CONFIG,
        Error::OutOfSupport { .. }
        | Error::MissingStratumTags
        | Error::Data(_)
        | Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_) => DATA,
        Error::DegenerateModel(_)
        | Error::NoDetections
        | Error::UnderdeterminedFit { .. }
        | Error::NonConvergence
        | Error::SingularInformation
        | Error::TooFewTransects(_)
        | Error::TooManyFailures { .. } => ESTIMATION,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::new(code_for(&e), e)
    }
}
