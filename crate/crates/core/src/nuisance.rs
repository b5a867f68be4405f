//! Cutoffs for the parameters of interest when nuisance parameters are
//! present: the cutoff at `mu` is the minimum, over a finite set of nuisance
//! values, of the local cutoff at `(mu, nu)`.
//!
//! The nuisance values come from the partition's own split thresholds `a`
//! as `a +- eps`, with `eps` one third of the smallest gap between distinct
//! thresholds of that coordinate. Every cell of the partition along a
//! nuisance axis then contains one grid value, so for tree partitions the
//! minimum over this grid equals the minimum over all nuisance values.

use serde::{Deserialize, Serialize};

use crate::calibration::{check_level, LocalCalibration};
use crate::error::{Error, Result};
use crate::models::{Dataset, ModelSpec, ParamBox};
use crate::statistics::Statistic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NuisanceConfig {
    /// Keep only splits at depth `< depth_limit` in each tree.
    pub depth_limit: Option<usize>,
    /// Upper bound on the number of nuisance combinations; larger products
    /// are thinned evenly per coordinate.
    pub max_points: usize,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            depth_limit: None,
            max_points: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceGrid {
    interest: Vec<usize>,
    dims: Vec<usize>,
    thresholds: Vec<Vec<f64>>,
    eps: Vec<Option<f64>>,
    values: Vec<Vec<f64>>,
    points: Vec<Vec<f64>>,
}

impl NuisanceGrid {
    /// Builds the grid from `(dim, threshold)` split pairs; pairs on other
    /// coordinates are ignored.
    pub fn build(
        splits: &[(usize, f64)],
        bounds: &ParamBox,
        interest: &[usize],
        dims: &[usize],
        max_points: usize,
    ) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidParameter("nuisance grid needs at least one nuisance dim".into()));
        }
        let mut thresholds = Vec::with_capacity(dims.len());
        let mut eps = Vec::with_capacity(dims.len());
        let mut values = Vec::with_capacity(dims.len());
        for &d in dims {
            let (lo, hi) = (bounds.lower[d], bounds.upper[d]);
            let mut a: Vec<f64> = splits.iter().filter(|s| s.0 == d).map(|s| s.1).collect();
            a.sort_by(f64::total_cmp);
            a.dedup();
            let e = match a.len() {
                0 => None,
                1 => Some((a[0] - lo).min(hi - a[0]) / 3.0),
                _ => Some(a.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min) / 3.0),
            };
            let mut v: Vec<f64> = match e {
                None => vec![0.5 * (lo + hi)],
                Some(e) => a
                    .iter()
                    .flat_map(|&t| [(t - e).clamp(lo, hi), (t + e).clamp(lo, hi)])
                    .collect(),
            };
            v.sort_by(f64::total_cmp);
            v.dedup();
            thresholds.push(a);
            eps.push(e);
            values.push(v);
        }
        let total: usize = values.iter().map(Vec::len).product();
        if total > max_points.max(1) {
            let per = (max_points.max(1) as f64).powf(1.0 / dims.len() as f64).floor().max(1.0) as usize;
            log::warn!(
                "nuisance grid of {total} points exceeds {max_points}; thinning to {per} values per coordinate"
            );
            for v in &mut values {
                *v = thin(v, per);
            }
        }
        let points = cartesian(&values);
        Ok(NuisanceGrid {
            interest: interest.to_vec(),
            dims: dims.to_vec(),
            thresholds,
            eps,
            values,
            points,
        })
    }

    /// Grid from the split thresholds of a fitted calibrator.
    pub fn from_calibration(cal: &dyn LocalCalibration, model: &ModelSpec, config: &NuisanceConfig) -> Result<Self> {
        let dims = model.nuisance();
        let splits = cal.split_values(&dims, config.depth_limit);
        Self::build(&splits, &model.bounds, &model.interest, &dims, config.max_points)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Distinct split thresholds per nuisance coordinate.
    pub fn thresholds(&self) -> &[Vec<f64>] {
        &self.thresholds
    }

    /// Perturbation per coordinate (`None` when it had no thresholds).
    pub fn eps(&self) -> &[Option<f64>] {
        &self.eps
    }

    /// Grid values per nuisance coordinate.
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// All nuisance combinations, ordered like `dims`.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Full parameter points combining the interest coordinates of `theta`
    /// with every nuisance combination.
    pub fn query_points(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|nu| {
                let mut q = theta.to_vec();
                for (slot, &d) in self.dims.iter().enumerate() {
                    q[d] = nu[slot];
                }
                q
            })
            .collect()
    }

    pub(crate) fn interest_key(&self, theta: &[f64]) -> Vec<u64> {
        self.interest.iter().map(|&k| theta[k].to_bits()).collect()
    }
}

fn thin(v: &[f64], keep: usize) -> Vec<f64> {
    if v.len() <= keep {
        return v.to_vec();
    }
    if keep == 1 {
        return vec![v[v.len() / 2]];
    }
    let mut out: Vec<f64> = (0..keep)
        .map(|i| v[(i * (v.len() - 1) + (keep - 1) / 2) / (keep - 1)])
        .collect();
    out.dedup();
    out
}

fn cartesian(values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in values {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceCutoff {
    pub cutoff: f64,
    /// Neighborhood size at the minimizing nuisance value.
    pub m: usize,
    /// Minimizing nuisance value (first one on ties).
    pub argmin: Vec<f64>,
}

/// `min over nu in grid` of the local adjusted alpha-quantile at
/// `(theta_interest, nu)`.
pub fn nuisance_cutoff(
    cal: &dyn LocalCalibration,
    theta: &[f64],
    grid: &NuisanceGrid,
    alpha: f64,
) -> Result<NuisanceCutoff> {
    check_level(alpha, "alpha")?;
    let mut best: Option<NuisanceCutoff> = None;
    for (q, nu) in grid.query_points(theta).iter().zip(grid.points()) {
        let ecdf = cal.local_ecdf(q)?;
        let c = ecdf.quantile(alpha);
        if best.as_ref().is_none_or(|b| c < b.cutoff) {
            best = Some(NuisanceCutoff {
                cutoff: c,
                m: ecdf.len(),
                argmin: nu.clone(),
            });
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("empty nuisance grid".into()))
}

/// `max over nu in grid` of the local p-value at `(theta0_interest, nu)`;
/// below `alpha` exactly when the nuisance cutoff rejects `theta0`.
pub fn nuisance_p_value(
    cal: &dyn LocalCalibration,
    statistic: &Statistic,
    x: &Dataset,
    theta0: &[f64],
    grid: &NuisanceGrid,
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for q in grid.query_points(theta0) {
        let tau = statistic.evaluate(x, &q)?;
        best = best.max(cal.local_ecdf(&q)?.cdf(tau));
    }
    Ok(best)
}
