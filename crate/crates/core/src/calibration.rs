//! Local calibration: adjusted empirical CDFs over partition cells or
//! proximity neighborhoods, their alpha-quantile cutoffs, confidence sets and
//! p-values.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::simulate_statistics;
use crate::forest::{EmptyPolicy, Forest, ForestParams};
use crate::models::{Dataset, ModelSpec};
use crate::nuisance::{nuisance_cutoff, NuisanceGrid};
use crate::rng::{derive_rng, derive_seed, stage};
use crate::statistics::Statistic;
use crate::tree::{RegressionTree, TreeParams};

/// Adjusted empirical CDF `H(t) = (#{tau <= t} + 1) / (m + 1)` of a
/// neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedEcdf<'a> {
    values: Cow<'a, [f64]>,
}

impl AdjustedEcdf<'static> {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        AdjustedEcdf {
            values: Cow::Owned(values),
        }
    }
}

impl<'a> AdjustedEcdf<'a> {
    /// Wraps values that are already sorted ascending.
    pub fn from_sorted(values: &'a [f64]) -> Self {
        debug_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        AdjustedEcdf {
            values: Cow::Borrowed(values),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let count = self.values.partition_point(|&v| v <= t);
        (count + 1) as f64 / (self.len() + 1) as f64
    }

    /// `inf {t : H(t) >= alpha}`; `-inf` when `1 / (m + 1) >= alpha`.
    pub fn quantile(&self, alpha: f64) -> f64 {
        adjusted_quantile(&self.values, alpha)
    }
}

/// Adjusted alpha-quantile of ascending `sorted`: the order statistic
/// `k = ceil(alpha (m + 1)) - 1` (1-based), or `-inf` when `k < 1`.
pub fn adjusted_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let m = sorted.len();
    let denom = (m + 1) as f64;
    // smallest k >= 0 with (k + 1) / (m + 1) >= alpha, evaluated with the same
    // floating-point arithmetic as `cdf` so both agree at exact boundaries
    let mut k = ((alpha * denom).ceil() as i64 - 1).max(0);
    while k > 0 && k as f64 / denom >= alpha {
        k -= 1;
    }
    while ((k + 1) as f64 / denom) < alpha {
        k += 1;
    }
    if k < 1 {
        f64::NEG_INFINITY
    } else {
        sorted[(k as usize).min(m) - 1]
    }
}

/// Calibration method tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Trust,
    Trustpp,
    TrustppTuned,
    Mc,
    Asymptotic,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Trust,
        Method::Trustpp,
        Method::TrustppTuned,
        Method::Mc,
        Method::Asymptotic,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Trust => "trust",
            Method::Trustpp => "trustpp",
            Method::TrustppTuned => "trustpp-tuned",
            Method::Mc => "mc",
            Method::Asymptotic => "asymptotic",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "method",
                name: s.into(),
            })
    }
}

/// A source of local calibration samples: the tau values whose adjusted
/// quantile is the cutoff at `theta`.
pub trait LocalCalibration: Sync {
    fn method(&self) -> Method;

    /// Ascending local tau values at `theta`.
    fn local_values(&self, theta: &[f64]) -> Result<Cow<'_, [f64]>>;

    /// Distinct `(dim, threshold)` cell boundaries on `dims`, from which
    /// nuisance grids are built.
    fn split_values(&self, dims: &[usize], depth_limit: Option<usize>) -> Vec<(usize, f64)>;

    fn local_ecdf(&self, theta: &[f64]) -> Result<AdjustedEcdf<'_>> {
        Ok(AdjustedEcdf {
            values: self.local_values(theta)?,
        })
    }
}

/// The calibration corpus: `(theta_b, X_b, tau(X_b, theta_b))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSet {
    pub thetas: Vec<Vec<f64>>,
    pub data: Vec<Dataset>,
    pub tau: Vec<f64>,
}

impl SimulatedSet {
    /// Draws `b` parameters from the model's reference distribution and one
    /// dataset of size `n` at each. Record `i` uses its own seed stream.
    pub fn simulate(statistic: &Statistic, n: usize, b: usize, seed: u64) -> Result<Self> {
        let model = statistic.model();
        let thetas = model.sample_reference(b, derive_seed(seed, &[stage::REFERENCE]));
        let records = thetas
            .par_iter()
            .enumerate()
            .map(|(i, theta)| {
                let mut rng = derive_rng(seed, &[stage::SIMULATE, i as u64]);
                let x = model.simulate_with(theta, n, &mut rng)?;
                let tau = statistic.evaluate(&x, theta)?;
                Ok((x, tau))
            })
            .collect::<Result<Vec<_>>>()?;
        let (data, tau) = records.into_iter().unzip();
        Ok(SimulatedSet { thetas, data, tau })
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// Splits into training and calibration halves (first / second half of
    /// the records, which are i.i.d.).
    pub fn split_half(&self) -> (SimulatedSet, SimulatedSet) {
        let h = self.len() / 2;
        let part = |r: std::ops::Range<usize>| SimulatedSet {
            thetas: self.thetas[r.clone()].to_vec(),
            data: self.data[r.clone()].to_vec(),
            tau: self.tau[r].to_vec(),
        };
        (part(0..h), part(h..self.len()))
    }
}

/// TRUST: cutoffs are adjusted quantiles within the leaves of one tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustCalibrator {
    tree: RegressionTree,
    leaf_values: Vec<Vec<f64>>,
}

impl TrustCalibrator {
    /// Fits the tree and calibrates on the same records, or with `split` on
    /// disjoint halves.
    pub fn fit(set: &SimulatedSet, model: &ModelSpec, params: &TreeParams, split: bool) -> Result<Self> {
        if split {
            let (train, cal) = set.split_half();
            let tree = RegressionTree::fit(&train.thetas, &train.tau, &model.bounds, params)?;
            Ok(Self::new(tree, &cal.thetas, &cal.tau))
        } else {
            let tree = RegressionTree::fit(&set.thetas, &set.tau, &model.bounds, params)?;
            Ok(Self::new(tree, &set.thetas, &set.tau))
        }
    }

    pub fn new(tree: RegressionTree, thetas: &[Vec<f64>], tau: &[f64]) -> Self {
        let mut leaf_values = vec![Vec::new(); tree.n_leaves()];
        for (t, &v) in thetas.iter().zip(tau) {
            leaf_values[tree.leaf_of(t)].push(v);
        }
        for (leaf, values) in leaf_values.iter_mut().enumerate() {
            if values.is_empty() {
                log::warn!("leaf {leaf} has no calibration records; its cutoff is -inf");
            }
            values.sort_by(f64::total_cmp);
        }
        TrustCalibrator { tree, leaf_values }
    }

    pub fn tree(&self) -> &RegressionTree {
        &self.tree
    }

    pub fn leaf_values(&self) -> &[Vec<f64>] {
        &self.leaf_values
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        self.tree.write_to(w)?;
        for values in &self.leaf_values {
            w.write_u64::<LittleEndian>(values.len() as u64)?;
            for &v in values {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let tree = RegressionTree::read_from(r)?;
        let mut leaf_values = Vec::with_capacity(tree.n_leaves());
        for _ in 0..tree.n_leaves() {
            let len = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
            let mut values = Vec::with_capacity(len.min(1 << 24));
            for _ in 0..len {
                values.push(r.read_f64::<LittleEndian>().map_err(truncated)?);
            }
            leaf_values.push(values);
        }
        Ok(TrustCalibrator { tree, leaf_values })
    }
}

fn truncated(e: std::io::Error) -> Error {
    Error::IncompatibleBundle(format!("truncated calibrator blob: {e}"))
}

impl LocalCalibration for TrustCalibrator {
    fn method(&self) -> Method {
        Method::Trust
    }

    fn local_values(&self, theta: &[f64]) -> Result<Cow<'_, [f64]>> {
        Ok(Cow::Borrowed(&self.leaf_values[self.tree.leaf_of(theta)]))
    }

    fn split_values(&self, dims: &[usize], depth_limit: Option<usize>) -> Vec<(usize, f64)> {
        self.tree.split_values(dims, depth_limit)
    }
}

/// TRUST++: cutoffs are adjusted quantiles over proximity neighborhoods
/// `{b : rho(theta_b, theta) >= M}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustPpCalibrator {
    forest: Forest,
    m: usize,
    policy: EmptyPolicy,
    tuned: bool,
}

impl TrustPpCalibrator {
    pub fn fit(set: &SimulatedSet, model: &ModelSpec, params: &ForestParams, split: bool, seed: u64) -> Result<Forest> {
        if split {
            let (train, cal) = set.split_half();
            let fitted = Forest::fit(&train.thetas, &train.tau, &model.bounds, params, seed)?;
            Forest::calibrated(fitted.trees().to_vec(), &cal.thetas, &cal.tau)
        } else {
            Forest::fit(&set.thetas, &set.tau, &model.bounds, params, seed)
        }
    }

    pub fn new(forest: Forest, m: usize, policy: EmptyPolicy) -> Result<Self> {
        if m == 0 || m > forest.n_trees() {
            return Err(Error::InvalidParameter(format!(
                "M must lie in [1, {}], got {m}",
                forest.n_trees()
            )));
        }
        Ok(TrustPpCalibrator {
            forest,
            m,
            policy,
            tuned: false,
        })
    }

    /// Marks the calibrator as carrying a tuned `M`.
    pub fn tuned(mut self) -> Self {
        self.tuned = true;
        self
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn policy(&self) -> EmptyPolicy {
        self.policy
    }

    pub fn is_tuned(&self) -> bool {
        self.tuned
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        self.forest.write_to(w)?;
        w.write_u64::<LittleEndian>(self.m as u64)?;
        w.write_u8(match self.policy {
            EmptyPolicy::Error => 0,
            EmptyPolicy::Relax => 1,
        })?;
        w.write_u8(self.tuned as u8)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let forest = Forest::read_from(r)?;
        let m = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        let policy = match r.read_u8().map_err(truncated)? {
            0 => EmptyPolicy::Error,
            1 => EmptyPolicy::Relax,
            other => return Err(Error::IncompatibleBundle(format!("unknown empty-neighborhood policy {other}"))),
        };
        let tuned = r.read_u8().map_err(truncated)? != 0;
        let cal = Self::new(forest, m, policy).map_err(|e| Error::IncompatibleBundle(e.to_string()))?;
        Ok(TrustPpCalibrator { tuned, ..cal })
    }
}

impl LocalCalibration for TrustPpCalibrator {
    fn method(&self) -> Method {
        if self.tuned {
            Method::TrustppTuned
        } else {
            Method::Trustpp
        }
    }

    fn local_values(&self, theta: &[f64]) -> Result<Cow<'_, [f64]>> {
        let (mut values, used) = self.forest.neighborhood_tau(theta, self.m, self.policy)?;
        if used != self.m {
            log::warn!("empty neighborhood at {theta:?} for M = {}; relaxed to M = {used}", self.m);
        }
        values.sort_by(f64::total_cmp);
        Ok(Cow::Owned(values))
    }

    fn split_values(&self, dims: &[usize], depth_limit: Option<usize>) -> Vec<(usize, f64)> {
        self.forest.split_values(dims, depth_limit)
    }
}

/// Per-grid-point cutoffs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedCutoffs {
    pub method: Method,
    pub alpha: f64,
    pub grid: Vec<Vec<f64>>,
    /// Cutoff per grid point; `-inf` means no rejection is possible.
    pub cutoff: Vec<f64>,
    /// Neighborhood size behind each cutoff (0 for non-sample methods).
    pub m: Vec<usize>,
    /// Minimizing nuisance values per point, when nuisance was handled.
    pub argmin_nuisance: Option<Vec<Vec<f64>>>,
}

impl CalibratedCutoffs {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Cutoffs at every grid point. With a nuisance grid, the cutoff at a point
/// is the minimum over the nuisance grid at its interest coordinates (the
/// point's own nuisance coordinates are ignored).
pub fn compute_cutoffs(
    cal: &dyn LocalCalibration,
    grid: &[Vec<f64>],
    alpha: f64,
    nuisance: Option<&NuisanceGrid>,
) -> Result<CalibratedCutoffs> {
    check_level(alpha, "alpha")?;
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    match nuisance {
        None => {
            let results = grid
                .par_iter()
                .map(|theta| {
                    let ecdf = cal.local_ecdf(theta)?;
                    Ok((ecdf.quantile(alpha), ecdf.len()))
                })
                .collect::<Result<Vec<_>>>()?;
            let (cutoff, m) = results.into_iter().unzip();
            Ok(CalibratedCutoffs {
                method: cal.method(),
                alpha,
                grid: grid.to_vec(),
                cutoff,
                m,
                argmin_nuisance: None,
            })
        }
        Some(ng) => {
            // evaluate each distinct interest coordinate once
            let key = |theta: &[f64]| -> Vec<u64> { ng.interest_key(theta) };
            let mut distinct: Vec<Vec<f64>> = Vec::new();
            let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
            for theta in grid {
                seen.entry(key(theta)).or_insert_with(|| {
                    distinct.push(theta.clone());
                    distinct.len() - 1
                });
            }
            let results = distinct
                .par_iter()
                .map(|theta| nuisance_cutoff(cal, theta, ng, alpha))
                .collect::<Result<Vec<_>>>()?;
            let mut cutoff = Vec::with_capacity(grid.len());
            let mut m = Vec::with_capacity(grid.len());
            let mut argmin = Vec::with_capacity(grid.len());
            for theta in grid {
                let r = &results[seen[&key(theta)]];
                cutoff.push(r.cutoff);
                m.push(r.m);
                argmin.push(r.argmin.clone());
            }
            Ok(CalibratedCutoffs {
                method: cal.method(),
                alpha,
                grid: grid.to_vec(),
                cutoff,
                m,
                argmin_nuisance: Some(argmin),
            })
        }
    }
}

pub(crate) fn check_level(v: f64, name: &str) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// Three-way label of a grid point given a cutoff confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    In,
    Out,
    Undetermined,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::In => "IN",
            Label::Out => "OUT",
            Label::Undetermined => "UNDETERMINED",
        })
    }
}

/// The grid confidence set `{theta : tau(x, theta) >= C_theta}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub grid: Vec<Vec<f64>>,
    pub tau: Vec<f64>,
    pub cutoff: Vec<f64>,
    pub m: Vec<usize>,
    pub member: Vec<bool>,
    pub labels: Option<Vec<Label>>,
}

impl ConfidenceReport {
    pub fn size(&self) -> usize {
        self.member.iter().filter(|&&b| b).count()
    }

    /// Maximal runs of member points on a 1-D grid as `(first, last)` grid
    /// values.
    pub fn intervals_1d(&self) -> Vec<(f64, f64)> {
        self.intervals_along(0)
    }

    /// Maximal runs of member points, reported by coordinate `dim`, for
    /// grids that vary along that coordinate only.
    pub fn intervals_along(&self, dim: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        for i in 0..=self.member.len() {
            let inside = i < self.member.len() && self.member[i];
            match (inside, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    out.push((self.grid[s][dim], self.grid[i - 1][dim]));
                    start = None;
                }
                _ => {}
            }
        }
        out
    }
}

pub fn confidence_set(cutoffs: &CalibratedCutoffs, statistic: &Statistic, x: &Dataset) -> Result<ConfidenceReport> {
    if x.n() == 0 {
        return Err(Error::InvalidParameter("observed dataset is empty".into()));
    }
    let tau = cutoffs
        .grid
        .par_iter()
        .map(|theta| statistic.evaluate(x, theta))
        .collect::<Result<Vec<_>>>()?;
    let member = tau.iter().zip(&cutoffs.cutoff).map(|(t, c)| t >= c).collect();
    Ok(ConfidenceReport {
        grid: cutoffs.grid.clone(),
        tau,
        cutoff: cutoffs.cutoff.clone(),
        m: cutoffs.m.clone(),
        member,
        labels: None,
    })
}

/// `H(tau(x, theta0) | theta0)` from the local calibration sample.
pub fn p_value(cal: &dyn LocalCalibration, statistic: &Statistic, x: &Dataset, theta0: &[f64]) -> Result<f64> {
    let ecdf = cal.local_ecdf(theta0)?;
    Ok(ecdf.cdf(statistic.evaluate(x, theta0)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneConfig {
    pub b_tune: usize,
    pub n_sim: usize,
    /// Candidate `M` values; `None` means 10 equally spaced values in
    /// `[K/10, K]`.
    pub m_grid: Option<Vec<usize>>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            b_tune: 100,
            n_sim: 500,
            m_grid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub m: usize,
    /// `(M, MAE)` for every candidate that produced cutoffs everywhere.
    pub table: Vec<(usize, f64)>,
}

pub fn default_m_grid(k: usize) -> Vec<usize> {
    let lo = (k as f64 / 10.0).max(1.0);
    let mut grid: Vec<usize> = (0..10)
        .map(|j| (lo + j as f64 * (k as f64 - lo) / 9.0).round() as usize)
        .map(|m| m.clamp(1, k))
        .collect();
    grid.dedup();
    grid
}

/// Picks `M` minimizing the coverage MAE over `b_tune` reference draws, each
/// with `n_sim` fresh simulations; ties go to the smallest `M`. Candidates
/// whose neighborhoods come up empty somewhere are skipped.
pub fn tune_m(
    forest: &Forest,
    statistic: &Statistic,
    n: usize,
    alpha: f64,
    config: &TuneConfig,
    nuisance: Option<&NuisanceGrid>,
    seed: u64,
) -> Result<TuneResult> {
    check_level(alpha, "alpha")?;
    let k = forest.n_trees();
    let mut candidates = config.m_grid.clone().unwrap_or_else(|| default_m_grid(k));
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() || candidates.iter().any(|&m| m == 0 || m > k) {
        return Err(Error::InvalidParameter(format!("M grid must be a nonempty subset of [1, {k}]")));
    }
    if config.b_tune == 0 || config.n_sim == 0 {
        return Err(Error::InvalidParameter("b_tune and n_sim must be positive".into()));
    }
    let model = statistic.model();
    let grid = model.sample_reference(config.b_tune, derive_seed(seed, &[stage::TUNE_GRID]));
    // per grid point: the coverage obtained under every candidate, or None
    let per_point = grid
        .par_iter()
        .enumerate()
        .map(|(i, theta)| -> Result<Vec<Option<f64>>> {
            let sims = simulate_statistics(statistic, theta, n, config.n_sim, derive_seed(seed, &[stage::TUNE_SIM, i as u64]))?;
            let queries: Vec<Vec<f64>> = match nuisance {
                Some(ng) => ng.query_points(theta),
                None => vec![theta.clone()],
            };
            let prox: Vec<Vec<(u32, u16)>> = queries.iter().map(|q| forest.proximities(q)).collect();
            Ok(candidates
                .iter()
                .map(|&m| {
                    let mut cutoff = f64::INFINITY;
                    for p in &prox {
                        let mut values: Vec<f64> = p
                            .iter()
                            .filter(|&&(_, c)| c as usize >= m)
                            .map(|&(r, _)| forest.tau()[r as usize])
                            .collect();
                        if values.is_empty() {
                            return None;
                        }
                        values.sort_by(f64::total_cmp);
                        cutoff = cutoff.min(adjusted_quantile(&values, alpha));
                    }
                    let covered = sims.iter().filter(|&&t| t >= cutoff).count();
                    Some(covered as f64 / sims.len() as f64)
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Vec::new();
    for (j, &m) in candidates.iter().enumerate() {
        let covers: Option<Vec<f64>> = per_point.iter().map(|row| row[j]).collect();
        match covers {
            Some(c) => {
                let mae = c.iter().map(|v| (v - (1.0 - alpha)).abs()).sum::<f64>() / c.len() as f64;
                table.push((m, mae));
            }
            None => log::warn!("skipping M = {m}: empty neighborhood on the tuning grid"),
        }
    }
    let best = table
        .iter()
        .fold(None::<(usize, f64)>, |best, &(m, mae)| match best {
            Some((_, b)) if b <= mae => best,
            _ => Some((m, mae)),
        })
        .ok_or_else(|| Error::NoCalibrationSupport {
            theta: Vec::new(),
            m: candidates[0],
        })?;
    Ok(TuneResult { m: best.0, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_quantile(values: &[f64], alpha: f64) -> f64 {
        // scan candidate t in {-inf} U values for the smallest with H(t) >= alpha
        let ecdf = AdjustedEcdf::new(values.to_vec());
        if ecdf.cdf(f64::NEG_INFINITY) >= alpha {
            return f64::NEG_INFINITY;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.into_iter().find(|&t| ecdf.cdf(t) >= alpha).unwrap_or(f64::INFINITY)
    }

    #[test]
    fn adjusted_cdf_examples() {
        assert_eq!(AdjustedEcdf::new(vec![]).cdf(3.0), 1.0);
        let e = AdjustedEcdf::new(vec![3.0, 1.0, 2.0]);
        assert_eq!(e.cdf(2.0), 0.75);
        assert_eq!(e.cdf(0.0), 0.25);
    }

    #[test]
    fn adjusted_quantile_examples() {
        let nine: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(adjusted_quantile(&nine, 0.5), 4.0);
        assert_eq!(adjusted_quantile(&nine, 0.05), f64::NEG_INFINITY);
        let nineteen: Vec<f64> = (1..=19).map(f64::from).collect();
        assert_eq!(adjusted_quantile(&nineteen, 0.05), f64::NEG_INFINITY);
        assert_eq!(adjusted_quantile(&nineteen, 0.051), 1.0);
        assert_eq!(adjusted_quantile(&[], 0.5), f64::NEG_INFINITY);
        for alpha in [0.1, 0.3, 0.7, 0.95] {
            assert_eq!(adjusted_quantile(&nine, alpha), brute_quantile(&nine, alpha));
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn default_m_grid_spans_tenth_to_k() {
        let g = default_m_grid(200);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 20);
        assert_eq!(*g.last().unwrap(), 200);
    }

    #[test]
    fn intervals_follow_mask() {
        let report = ConfidenceReport {
            grid: (0..6).map(|i| vec![i as f64]).collect(),
            tau: vec![0.0; 6],
            cutoff: vec![0.0; 6],
            m: vec![0; 6],
            member: vec![false, true, true, false, true, false],
            labels: None,
        };
        assert_eq!(report.intervals_1d(), vec![(1.0, 2.0), (4.0, 4.0)]);
        assert_eq!(report.size(), 3);
    }
}
