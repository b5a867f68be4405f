use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across calibration, statistics and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("likelihood unavailable for model `{0}`")]
    LikelihoodUnavailable(String),

    #[error("theoretical CDF unavailable for model `{0}`")]
    CdfUnavailable(String),

    #[error("posterior unavailable: {0}")]
    PosteriorUnavailable(String),

    #[error("mle failure: {0}")]
    MleFailure(String),

    #[error("degenerate posterior: covariance is singular")]
    DegeneratePosterior,

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("no calibration support at theta = {theta:?} (M = {m})")]
    NoCalibrationSupport { theta: Vec<f64>, m: usize },

    #[error("insufficient neighborhood for CI: m = {m}, smallest feasible beta = {min_beta:.6}")]
    InsufficientNeighborhood { m: usize, min_beta: f64 },

    #[error("no asymptotic cutoff available for statistic `{0}`")]
    NoAsymptotic(String),

    #[error("grid misalignment: {0}")]
    GridMisalignment(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("incompatible bundle format: {0}")]
    IncompatibleBundle(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
