//! Baseline cutoffs (Monte Carlo grid, asymptotic) and oracle cutoffs,
//! plus the special functions they need.

pub mod asymptotic;
pub mod mc;
pub mod oracle;
pub mod special;

pub use asymptotic::asymptotic_cutoff;
pub use mc::{mc_grid_size, McCalibrator};
pub use oracle::{empirical_quantile, oracle_cutoff, oracle_cutoff_nuisance, oracle_cutoffs, OracleNuisance};
