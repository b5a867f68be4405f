//! Coverage diagnostics: Monte Carlo coverage per evaluation point, the mean
//! absolute coverage error, the deviation from oracle coverage, and
//! replicate summaries.
//!
//! Coverage samples are simulated once per evaluation point and shared by
//! every method being compared (common random numbers), so differences
//! between methods reflect their cutoffs rather than simulation noise.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::mc::axis_nodes;
use crate::calibration::{check_level, CalibratedCutoffs, Method};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::rng::{derive_seed, rng_from_seed, stage};
use crate::statistics::Statistic;

/// `n_sim` statistics `tau(X, theta)` with `X ~ F_theta` of size `n`, drawn
/// from a single stream seeded by `seed`.
pub fn simulate_statistics(statistic: &Statistic, theta: &[f64], n: usize, n_sim: usize, seed: u64) -> Result<Vec<f64>> {
    let model = statistic.model();
    model.check_theta(theta)?;
    let mut rng = rng_from_seed(seed);
    (0..n_sim)
        .map(|_| {
            let x = model.simulate_with(theta, n, &mut rng)?;
            statistic.evaluate(&x, theta)
        })
        .collect()
}

/// Evaluation grid layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvalGrid {
    /// `per_dim` equally spaced values per coordinate, endpoints included.
    Regular { per_dim: usize },
    /// Draws from the model's reference distribution.
    Reference { count: usize },
}

impl EvalGrid {
    pub fn points(&self, model: &ModelSpec, seed: u64) -> Result<Vec<Vec<f64>>> {
        match *self {
            EvalGrid::Regular { per_dim } => {
                if per_dim == 0 {
                    return Err(Error::InvalidParameter("grid needs at least one point per dim".into()));
                }
                let mut out: Vec<Vec<f64>> = vec![Vec::new()];
                for d in 0..model.dim() {
                    let axis = axis_nodes(model.bounds.lower[d], model.bounds.upper[d], per_dim);
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
                Ok(out)
            }
            EvalGrid::Reference { count } => {
                if count == 0 {
                    return Err(Error::InvalidParameter("grid needs at least one point".into()));
                }
                Ok(model.sample_reference(count, derive_seed(seed, &[stage::EVAL_GRID])))
            }
        }
    }
}

/// Fresh statistics at each evaluation point, shared across methods.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSample {
    pub grid: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
}

impl CoverageSample {
    /// Point `i` uses the stream `derive_seed(seed, [COVERAGE, i])`.
    pub fn simulate(statistic: &Statistic, grid: &[Vec<f64>], n: usize, n_sim: usize, seed: u64) -> Result<Self> {
        if n_sim == 0 {
            return Err(Error::InvalidParameter("n_sim must be positive".into()));
        }
        let tau = grid
            .par_iter()
            .enumerate()
            .map(|(i, theta)| simulate_statistics(statistic, theta, n, n_sim, derive_seed(seed, &[stage::COVERAGE, i as u64])))
            .collect::<Result<Vec<_>>>()?;
        Ok(CoverageSample {
            grid: grid.to_vec(),
            tau,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub method: Method,
    pub grid: Vec<Vec<f64>>,
    pub coverage: Vec<f64>,
    pub n_sim: usize,
}

/// Fraction of each point's shared sample at or above its cutoff.
pub fn coverage_from_sample(cutoffs: &CalibratedCutoffs, sample: &CoverageSample) -> Result<CoverageTable> {
    if cutoffs.grid != sample.grid {
        return Err(Error::GridMisalignment(format!(
            "{} cutoff points vs {} sample points (or differing coordinates)",
            cutoffs.grid.len(),
            sample.grid.len()
        )));
    }
    let coverage = sample
        .tau
        .iter()
        .zip(&cutoffs.cutoff)
        .map(|(t, &c)| t.iter().filter(|&&v| v >= c).count() as f64 / t.len() as f64)
        .collect();
    Ok(CoverageTable {
        method: cutoffs.method,
        grid: cutoffs.grid.clone(),
        coverage,
        n_sim: sample.tau.first().map_or(0, Vec::len),
    })
}

/// Coverage with a freshly simulated sample.
pub fn estimate_coverage(cutoffs: &CalibratedCutoffs, statistic: &Statistic, n: usize, n_sim: usize, seed: u64) -> Result<CoverageTable> {
    let sample = CoverageSample::simulate(statistic, &cutoffs.grid, n, n_sim, seed)?;
    coverage_from_sample(cutoffs, &sample)
}

/// Mean absolute deviation of coverage from `1 - alpha`.
pub fn mae(table: &CoverageTable, alpha: f64) -> Result<f64> {
    check_level(alpha, "alpha")?;
    if table.coverage.is_empty() {
        return Err(Error::InvalidParameter("empty coverage table".into()));
    }
    Ok(table.coverage.iter().map(|c| (c - (1.0 - alpha)).abs()).sum::<f64>() / table.coverage.len() as f64)
}

/// Mean absolute difference between a method's coverage and the oracle's on
/// the same grid.
pub fn oracle_deviation(table: &CoverageTable, oracle: &CoverageTable) -> Result<f64> {
    if table.grid != oracle.grid {
        return Err(Error::GridMisalignment(format!(
            "{} points vs {} oracle points (or differing coordinates)",
            table.grid.len(),
            oracle.grid.len()
        )));
    }
    if table.coverage.is_empty() {
        return Err(Error::InvalidParameter("empty coverage table".into()));
    }
    Ok(table
        .coverage
        .iter()
        .zip(&oracle.coverage)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / table.coverage.len() as f64)
}

/// One method on one replicate of one experimental cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub model: String,
    pub statistic: String,
    pub n: usize,
    pub b: usize,
    pub method: String,
    pub replicate: usize,
    pub mae: Option<f64>,
    pub d_alpha: Option<f64>,
    pub m: Option<usize>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub statistic: String,
    pub n: usize,
    pub b: usize,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    /// Standard error of the mean across replicates.
    pub se: f64,
    pub replicates: usize,
    pub failures: usize,
    /// Lowest mean in its cell, or with a 2-SE interval overlapping that of
    /// the lowest. The oracle never competes.
    pub best: bool,
}

/// Mean and standard error of each metric per (cell, method).
pub fn replicate_summary(results: &[ExperimentResult]) -> Vec<SummaryRow> {
    type Cell = (String, String, usize, usize);
    let mut groups: BTreeMap<(Cell, &'static str, String), (Vec<f64>, usize)> = BTreeMap::new();
    for r in results {
        let cell = (r.model.clone(), r.statistic.clone(), r.n, r.b);
        for (metric, value) in [("mae", r.mae), ("d_alpha", r.d_alpha)] {
            let entry = groups.entry((cell.clone(), metric, r.method.clone())).or_default();
            match (&r.error, value) {
                (None, Some(v)) => entry.0.push(v),
                (Some(_), _) => entry.1 += 1,
                (None, None) => {}
            }
        }
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .filter(|(_, (v, failures))| !v.is_empty() || *failures > 0)
        .map(|(((model, statistic, n, b), metric, method), (v, failures))| {
            let k = v.len() as f64;
            let mean = if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / k };
            let se = if v.len() < 2 {
                0.0
            } else {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
            };
            SummaryRow {
                model,
                statistic,
                n,
                b,
                method,
                metric: metric.to_string(),
                mean,
                se,
                replicates: v.len(),
                failures,
                best: false,
            }
        })
        .collect();
    let mut by_cell: BTreeMap<(String, String, usize, usize, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        if r.method != Method::Oracle.name() && r.mean.is_finite() {
            by_cell
                .entry((r.model.clone(), r.statistic.clone(), r.n, r.b, r.metric.clone()))
                .or_default()
                .push(i);
        }
    }
    for idx in by_cell.values() {
        let Some(&lead) = idx.iter().min_by(|&&a, &&b| rows[a].mean.total_cmp(&rows[b].mean)) else {
            continue;
        };
        let bar = rows[lead].mean + 2.0 * rows[lead].se;
        for &i in idx {
            rows[i].best = rows[i].mean - 2.0 * rows[i].se <= bar;
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statistics::StatisticKind;

    fn cutoffs(grid: Vec<Vec<f64>>, cutoff: Vec<f64>) -> CalibratedCutoffs {
        let n = grid.len();
        CalibratedCutoffs {
            method: Method::Mc,
            alpha: 0.1,
            grid,
            cutoff,
            m: vec![0; n],
            argmin_nuisance: None,
        }
    }

    #[test]
    fn coverage_counts_values_at_or_above_cutoff() {
        let sample = CoverageSample {
            grid: vec![vec![0.0], vec![1.0]],
            tau: vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 0.0, 5.0, 5.0]],
        };
        let t = coverage_from_sample(&cutoffs(vec![vec![0.0], vec![1.0]], vec![2.0, 6.0]), &sample).unwrap();
        assert_eq!(t.coverage, vec![0.75, 0.0]);
        assert!((mae(&t, 0.1).unwrap() - (0.15 + 0.9) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn misaligned_grids_are_rejected() {
        let sample = CoverageSample {
            grid: vec![vec![0.0]],
            tau: vec![vec![1.0]],
        };
        let c = cutoffs(vec![vec![0.5]], vec![0.0]);
        assert!(matches!(coverage_from_sample(&c, &sample), Err(Error::GridMisalignment(_))));
    }

    #[test]
    fn simulate_statistics_is_seed_deterministic() {
        let model = ModelSpec::normal();
        let stat = Statistic::new(StatisticKind::Ks, &model).unwrap();
        let a = simulate_statistics(&stat, &[0.1], 10, 20, 5).unwrap();
        assert_eq!(a, simulate_statistics(&stat, &[0.1], 10, 20, 5).unwrap());
        assert_ne!(a, simulate_statistics(&stat, &[0.1], 10, 20, 6).unwrap());
        assert!(simulate_statistics(&stat, &[9.0], 10, 20, 5).is_err());
    }

    #[test]
    fn summary_marks_overlapping_methods_best() {
        let mk = |method: &str, rep, mae| ExperimentResult {
            model: "normal".into(),
            statistic: "ks".into(),
            n: 10,
            b: 100,
            method: method.into(),
            replicate: rep,
            mae: Some(mae),
            d_alpha: None,
            m: None,
            wall_time_s: 0.0,
            error: None,
        };
        let results = vec![
            mk("trustpp", 0, 0.010),
            mk("trustpp", 1, 0.012),
            mk("mc", 0, 0.011),
            mk("mc", 1, 0.013),
            mk("asymptotic", 0, 0.10),
            mk("asymptotic", 1, 0.10),
        ];
        let rows = replicate_summary(&results);
        let best: Vec<&str> = rows.iter().filter(|r| r.best).map(|r| r.method.as_str()).collect();
        assert_eq!(best, vec!["mc", "trustpp"]);
        let tp = rows.iter().find(|r| r.method == "trustpp").unwrap();
        assert!((tp.mean - 0.011).abs() < 1e-15);
        assert!((tp.se - 0.001).abs() < 1e-12);
    }
}
