pub mod baselines;
pub mod calibration;
pub mod error;
pub mod evaluation;
pub mod forest;
pub mod harness;
pub mod models;
pub mod nuisance;
pub mod rng;
pub mod statistics;
pub mod tree;
pub mod uncertainty;

pub use calibration::{
    compute_cutoffs, confidence_set, p_value, tune_m, AdjustedEcdf, CalibratedCutoffs, ConfidenceReport, Label,
    LocalCalibration, Method, SimulatedSet, TrustCalibrator, TrustPpCalibrator,
};
pub use error::{Error, Result};
pub use models::{Dataset, ModelSpec};
pub use statistics::{Statistic, StatisticKind};
