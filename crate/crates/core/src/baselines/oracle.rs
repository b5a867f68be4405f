//! Oracle cutoffs: the empirical alpha-quantile of many fresh statistics at
//! a fixed parameter, and its infimum over nuisance values.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::mc::axis_nodes;
use crate::calibration::{check_level, CalibratedCutoffs, Method};
use crate::error::{Error, Result};
use crate::evaluation::simulate_statistics;
use crate::models::ModelSpec;
use crate::rng::{derive_seed, stage};
use crate::statistics::Statistic;

/// How nuisance values are enumerated for the oracle infimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleNuisance {
    /// Equally spaced values per nuisance coordinate, combined.
    Dense { per_dim: usize },
    /// Nuisance coordinates of draws from the reference distribution.
    Reference { count: usize },
}

impl Default for OracleNuisance {
    fn default() -> Self {
        OracleNuisance::Dense { per_dim: 50 }
    }
}

impl OracleNuisance {
    /// Nuisance combinations, ordered like `model.nuisance()`.
    pub fn values(&self, model: &ModelSpec, seed: u64) -> Vec<Vec<f64>> {
        let dims = model.nuisance();
        match *self {
            OracleNuisance::Dense { per_dim } => {
                let mut out: Vec<Vec<f64>> = vec![Vec::new()];
                for &d in &dims {
                    let axis = axis_nodes(model.bounds.lower[d], model.bounds.upper[d], per_dim.max(1));
                    out = out
                        .into_iter()
                        .flat_map(|p| {
                            axis.iter().map(move |&v| {
                                let mut q = p.clone();
                                q.push(v);
                                q
                            })
                        })
                        .collect();
                }
                out
            }
            OracleNuisance::Reference { count } => model
                .sample_reference(count.max(1), derive_seed(seed, &[stage::ORACLE, u64::MAX]))
                .into_iter()
                .map(|t| dims.iter().map(|&d| t[d]).collect())
                .collect(),
        }
    }
}

/// Empirical alpha-quantile `inf {t : F_N(t) >= alpha}` (unadjusted).
pub fn empirical_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    let k = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Empirical alpha-quantile of `n_oracle` fresh statistics at `theta`.
pub fn oracle_cutoff(statistic: &Statistic, theta: &[f64], n: usize, alpha: f64, n_oracle: usize, seed: u64) -> Result<f64> {
    check_level(alpha, "alpha")?;
    if n_oracle == 0 {
        return Err(Error::InvalidParameter("n_oracle must be positive".into()));
    }
    let mut v = simulate_statistics(statistic, theta, n, n_oracle, seed)?;
    v.sort_by(f64::total_cmp);
    Ok(empirical_quantile(&v, alpha))
}

fn point_seed(seed: u64, theta: &[f64]) -> u64 {
    let mut tags = vec![stage::ORACLE];
    tags.extend(theta.iter().map(|v| v.to_bits()));
    derive_seed(seed, &tags)
}

/// `min over nu` of the oracle cutoff at `(mu, nu)`; `nu_values` follow
/// `model.nuisance()` order. Returns the cutoff and the minimizing `nu`.
pub fn oracle_cutoff_nuisance(
    statistic: &Statistic,
    theta: &[f64],
    nu_values: &[Vec<f64>],
    n: usize,
    alpha: f64,
    n_oracle: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let dims = statistic.model().nuisance();
    let cutoffs = nu_values
        .par_iter()
        .map(|nu| {
            let mut q = theta.to_vec();
            for (slot, &d) in dims.iter().enumerate() {
                q[d] = nu[slot];
            }
            oracle_cutoff(statistic, &q, n, alpha, n_oracle, point_seed(seed, &q))
        })
        .collect::<Result<Vec<_>>>()?;
    cutoffs
        .into_iter()
        .zip(nu_values)
        .fold(None::<(f64, Vec<f64>)>, |best, (c, nu)| match best {
            Some((b, _)) if b <= c => best,
            _ => Some((c, nu.clone())),
        })
        .ok_or_else(|| Error::InvalidParameter("empty nuisance value set".into()))
}

/// Oracle cutoffs over a grid; points sharing interest coordinates share
/// the nuisance infimum.
pub fn oracle_cutoffs(
    statistic: &Statistic,
    grid: &[Vec<f64>],
    n: usize,
    alpha: f64,
    n_oracle: usize,
    nuisance: &OracleNuisance,
    seed: u64,
) -> Result<CalibratedCutoffs> {
    let model = statistic.model();
    if !model.has_nuisance() {
        let cutoff = grid
            .par_iter()
            .map(|theta| oracle_cutoff(statistic, theta, n, alpha, n_oracle, point_seed(seed, theta)))
            .collect::<Result<Vec<_>>>()?;
        return Ok(CalibratedCutoffs {
            method: Method::Oracle,
            alpha,
            grid: grid.to_vec(),
            cutoff,
            m: vec![0; grid.len()],
            argmin_nuisance: None,
        });
    }
    let nu_values = nuisance.values(model, seed);
    let mut memo: HashMap<Vec<u64>, (f64, Vec<f64>)> = HashMap::new();
    let mut cutoff = Vec::with_capacity(grid.len());
    let mut argmin = Vec::with_capacity(grid.len());
    for theta in grid {
        let key: Vec<u64> = model.interest.iter().map(|&k| theta[k].to_bits()).collect();
        if !memo.contains_key(&key) {
            // the interest coordinates alone determine the infimum
            let mut base = theta.clone();
            for &d in &model.nuisance() {
                base[d] = model.bounds.lower[d];
            }
            let r = oracle_cutoff_nuisance(statistic, &base, &nu_values, n, alpha, n_oracle, seed)?;
            memo.insert(key.clone(), r);
        }
        let (c, nu) = &memo[&key];
        cutoff.push(*c);
        argmin.push(nu.clone());
    }
    Ok(CalibratedCutoffs {
        method: Method::Oracle,
        alpha,
        grid: grid.to_vec(),
        cutoff,
        m: vec![0; grid.len()],
        argmin_nuisance: Some(argmin),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::special::chi2_quantile;
    use crate::statistics::StatisticKind;

    #[test]
    fn empirical_quantile_order_statistic() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(empirical_quantile(&v, 0.05), 1.0);
        assert_eq!(empirical_quantile(&v, 0.1), 1.0);
        assert_eq!(empirical_quantile(&v, 0.11), 2.0);
        assert_eq!(empirical_quantile(&v, 0.5), 5.0);
    }

    #[test]
    fn normal_lr_oracle_matches_chi_square() {
        let model = ModelSpec::normal();
        let stat = Statistic::new(StatisticKind::Lr, &model).unwrap();
        let c = oracle_cutoff(&stat, &[0.3], 4, 0.05, 2_000_000, 18).unwrap();
        let exact = -chi2_quantile(0.95, 1.0) / 2.0;
        assert!((c - exact).abs() < 0.01, "{c} vs {exact}");
    }

    #[test]
    fn dense_nuisance_values_cover_box() {
        let model = ModelSpec::poisson_counting();
        let v = OracleNuisance::Dense { per_dim: 4 }.values(&model, 0);
        assert_eq!(v, vec![vec![0.0], vec![0.5], vec![1.0], vec![1.5]]);
    }
}
