use crate::baselines::special::{chi2_quantile, kolmogorov_quantile};
use crate::calibration::check_level;
use crate::error::{Error, Result};
use crate::statistics::StatisticKind;

/// Cutoff on the direction-normalized statistic from its large-sample
/// distribution: `-chi2_{dof, 1-alpha} / 2` for LR (with `dof` interest
/// coordinates), `-K_{1-alpha} / sqrt(n)` for KS and `alpha` for the e-value.
pub fn asymptotic_cutoff(kind: StatisticKind, alpha: f64, n: usize, dof: usize) -> Result<f64> {
    check_level(alpha, "alpha")?;
    match kind {
        StatisticKind::Lr => Ok(-chi2_quantile(1.0 - alpha, dof as f64) / 2.0),
        StatisticKind::Ks => Ok(-kolmogorov_quantile(1.0 - alpha) / (n as f64).sqrt()),
        StatisticKind::Evalue => Ok(alpha),
        other => Err(Error::NoAsymptotic(other.name().into())),
    }
}
