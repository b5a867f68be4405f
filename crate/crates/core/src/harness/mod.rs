//! Configuration, persistence and the pipeline stages used by the
//! command-line tool.

pub mod config;
pub mod io;
pub mod runs;

pub use config::ExperimentConfig;
pub use io::{Bundle, BundleMeta, Calibrator};
