//! Posterior engines for the Bayesian statistics (BFF, e-value, Waldo).
//!
//! The conjugate engine covers the Normal model with its normal prior in
//! closed form. The quadrature engine tabulates `log L + log pi` on a tensor
//! Simpson grid over the parameter box, marginalizes out nuisance
//! coordinates, and caches one table per dataset so that evaluating the
//! statistic over many `theta0` for the same `x` costs one table build.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::lr::PoissonSums;
use crate::baselines::special::normal_sf;
use crate::error::{Error, Result};
use crate::models::{gmm_ln_density, Dataset, ModelKind, ModelSpec, Prior};

/// Byte budget for cached per-dataset tables.
const CACHE_BYTES: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PosteriorEngine {
    /// Closed-form normal-normal conjugacy.
    Conjugate,
    /// Composite Simpson over `points_per_dim` nodes per coordinate (odd).
    Quadrature { points_per_dim: usize },
}

impl PosteriorEngine {
    /// The engine used when none is configured, or `None` when the model has
    /// no tractable posterior here.
    pub fn default_for(model: &ModelSpec) -> Option<Self> {
        match model.kind {
            ModelKind::Normal => Some(PosteriorEngine::Conjugate),
            ModelKind::Gmm => Some(PosteriorEngine::Quadrature { points_per_dim: 2049 }),
            ModelKind::Lognormal | ModelKind::PoissonCounting { .. } => {
                Some(PosteriorEngine::Quadrature { points_per_dim: 257 })
            }
            ModelKind::GammaGlm { .. } => None,
        }
    }
}

/// A ready-to-query posterior for one model.
#[derive(Debug)]
pub(crate) enum Posterior {
    Conjugate { mean: f64, var: f64 },
    Quadrature(Box<Quadrature>),
}

impl Posterior {
    pub(crate) fn new(model: &ModelSpec, engine: PosteriorEngine) -> Result<Self> {
        match engine {
            PosteriorEngine::Conjugate => match (&model.kind, &model.prior) {
                (ModelKind::Normal, Prior::Normal { mean, var }) => Ok(Posterior::Conjugate {
                    mean: *mean,
                    var: *var,
                }),
                _ => Err(Error::PosteriorUnavailable(format!(
                    "conjugate engine needs the normal model with a normal prior, got `{}`",
                    model.name
                ))),
            },
            PosteriorEngine::Quadrature { points_per_dim } => {
                Ok(Posterior::Quadrature(Box::new(Quadrature::new(model, points_per_dim)?)))
            }
        }
    }

    /// `f(theta0 | x) / pi(theta0)` over the interest coordinates; the flag is
    /// set when the value underflowed to zero.
    pub(crate) fn bff(&self, x: &Dataset, interest: &[f64]) -> Result<(f64, bool)> {
        let ln_bff = match self {
            Posterior::Conjugate { mean, var } => {
                let (m, v) = conjugate_update(*mean, *var, x);
                gauss_ln_pdf(interest[0], m, v) - gauss_ln_pdf(interest[0], *mean, *var)
            }
            Posterior::Quadrature(q) => {
                let table = q.table(x)?;
                q.ln_posterior(&table, interest) - q.ln_prior_marginal(interest)
            }
        };
        let value = ln_bff.exp();
        Ok((value, value == 0.0 || ln_bff.is_nan()))
    }

    /// One minus the posterior mass of `{theta : f(theta|x) >= f(theta0|x)}`.
    pub(crate) fn e_value(&self, x: &Dataset, interest: &[f64]) -> Result<f64> {
        match self {
            Posterior::Conjugate { mean, var } => {
                let (m, v) = conjugate_update(*mean, *var, x);
                Ok(2.0 * normal_sf((interest[0] - m).abs() / v.sqrt()))
            }
            Posterior::Quadrature(q) => {
                let table = q.table(x)?;
                let level = q.ln_posterior(&table, interest).exp();
                Ok((1.0 - table.hpd_mass(level)).clamp(0.0, 1.0))
            }
        }
    }

    /// `(E - theta0)' V^{-1} (E - theta0)` with posterior moments.
    pub(crate) fn waldo(&self, x: &Dataset, interest: &[f64]) -> Result<f64> {
        match self {
            Posterior::Conjugate { mean, var } => {
                let (m, v) = conjugate_update(*mean, *var, x);
                Ok((m - interest[0]).powi(2) / v)
            }
            Posterior::Quadrature(q) => {
                let table = q.table(x)?;
                quadratic_form(&table.mean, &table.cov, interest)
            }
        }
    }

    /// Posterior mean and covariance of the interest coordinates.
    pub fn moments(&self, x: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Posterior::Conjugate { mean, var } => {
                let (m, v) = conjugate_update(*mean, *var, x);
                Ok((vec![m], vec![v]))
            }
            Posterior::Quadrature(q) => {
                let table = q.table(x)?;
                Ok((table.mean.clone(), table.cov.clone()))
            }
        }
    }
}

fn conjugate_update(prior_mean: f64, prior_var: f64, x: &Dataset) -> (f64, f64) {
    let n = x.values().len() as f64;
    let sum: f64 = x.values().iter().sum();
    let var = 1.0 / (1.0 / prior_var + n);
    (var * (prior_mean / prior_var + sum), var)
}

fn gauss_ln_pdf(t: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (t - mean).powi(2) / var - 0.5 * (std::f64::consts::TAU * var).ln()
}

fn quadratic_form(mean: &[f64], cov: &[f64], theta0: &[f64]) -> Result<f64> {
    match mean.len() {
        1 => {
            if !(cov[0] > 0.0) {
                return Err(Error::DegeneratePosterior);
            }
            Ok((mean[0] - theta0[0]).powi(2) / cov[0])
        }
        2 => {
            let (a, b, c) = (cov[0], cov[1], cov[3]);
            let det = a * c - b * b;
            if !(det > 1e-14 * a * c) || !(a > 0.0) {
                return Err(Error::DegeneratePosterior);
            }
            let (d0, d1) = (mean[0] - theta0[0], mean[1] - theta0[1]);
            Ok((c * d0 * d0 - 2.0 * b * d0 * d1 + a * d1 * d1) / det)
        }
        _ => Err(Error::PosteriorUnavailable("more than two interest coordinates".into())),
    }
}

/// Log-likelihood up to an `x`-dependent constant, via sufficient statistics
/// where the model has them.
#[derive(Debug)]
enum Kernel {
    Normal { n: f64, sum: f64 },
    Gmm(Vec<f64>),
    Lognormal { n: f64, s1: f64, s2: f64 },
    Poisson(PoissonSums),
}

impl Kernel {
    fn new(model: &ModelSpec, x: &Dataset) -> Result<Self> {
        let v = x.values();
        let n = x.n() as f64;
        Ok(match &model.kind {
            ModelKind::Normal => Kernel::Normal {
                n,
                sum: v.iter().sum(),
            },
            ModelKind::Gmm => Kernel::Gmm(v.to_vec()),
            ModelKind::Lognormal => {
                let (mut s1, mut s2) = (0.0, 0.0);
                for &y in v {
                    let l = y.ln();
                    s1 += l;
                    s2 += l * l;
                }
                Kernel::Lognormal { n, s1, s2 }
            }
            ModelKind::PoissonCounting { s, b, tau_hyper } => {
                Kernel::Poisson(PoissonSums::new(x, *s, *b, *tau_hyper))
            }
            ModelKind::GammaGlm { .. } => {
                return Err(Error::PosteriorUnavailable(model.name.clone()));
            }
        })
    }

    fn eval(&self, theta: &[f64]) -> f64 {
        match self {
            Kernel::Normal { n, sum } => theta[0] * sum - 0.5 * n * theta[0] * theta[0],
            Kernel::Gmm(v) => v.iter().map(|&xi| gmm_ln_density(xi, theta[0])).sum(),
            Kernel::Lognormal { n, s1, s2 } => {
                let (mu, s2_) = (theta[0], theta[1]);
                -0.5 * n * s2_.ln() - (s2 - 2.0 * mu * s1 + n * mu * mu) / (2.0 * s2_)
            }
            Kernel::Poisson(sums) => sums.loglik(theta[0], theta[1]),
        }
    }
}

/// Tensor Simpson grid over the model box, with the log prior tabulated.
#[derive(Debug)]
pub(crate) struct Quadrature {
    model: ModelSpec,
    axes: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    /// Log prior at the full-grid nodes (row-major, last dim fastest).
    ln_prior: Vec<f64>,
    ln_prior_mass: f64,
    interest: Vec<usize>,
    nuisance: Vec<usize>,
    cache: Mutex<HashMap<u64, Arc<Table>>>,
    cache_cap: usize,
}

/// Per-dataset posterior summary on the interest grid.
#[derive(Debug)]
pub(crate) struct Table {
    log_z: f64,
    /// Normalized posterior density of the interest coordinates at the
    /// interest-grid nodes.
    density: Vec<f64>,
    mean: Vec<f64>,
    cov: Vec<f64>,
    interest_axes: Vec<Vec<f64>>,
    kernel: Kernel,
    sorted_mass: OnceLock<(Vec<f64>, Vec<f64>, f64)>,
}

impl Quadrature {
    fn new(model: &ModelSpec, points_per_dim: usize) -> Result<Self> {
        if points_per_dim < 3 || points_per_dim % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "quadrature needs an odd number (>= 3) of nodes per dimension, got {points_per_dim}"
            )));
        }
        let d = model.dim();
        if d > 2 {
            return Err(Error::PosteriorUnavailable(format!(
                "quadrature supports d <= 2, model `{}` has d = {d}",
                model.name
            )));
        }
        let mut axes = Vec::with_capacity(d);
        let mut weights = Vec::with_capacity(d);
        for k in 0..d {
            let (a, w) = simpson_axis(model.bounds.lower[k], model.bounds.upper[k], points_per_dim);
            axes.push(a);
            weights.push(w);
        }
        let mut q = Quadrature {
            model: model.clone(),
            axes,
            weights,
            ln_prior: Vec::new(),
            ln_prior_mass: 0.0,
            interest: model.interest.clone(),
            nuisance: model.nuisance(),
            cache: Mutex::new(HashMap::new()),
            cache_cap: 0,
        };
        let mut ln_prior = Vec::with_capacity(q.full_len());
        let mut theta = vec![0.0; d];
        for i in 0..q.full_len() {
            q.node(i, &mut theta);
            ln_prior.push(model.prior_ln_density(&theta));
        }
        let w: Vec<f64> = (0..q.full_len()).map(|i| q.full_weight(i)).collect();
        q.ln_prior_mass = log_weighted_sum(&ln_prior, &w);
        q.ln_prior = ln_prior;
        let interest_nodes: usize = q.interest.iter().map(|&k| q.axes[k].len()).product();
        q.cache_cap = (CACHE_BYTES / (8 * interest_nodes).max(1)).max(8);
        Ok(q)
    }

    fn full_len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    fn node(&self, mut i: usize, theta: &mut [f64]) {
        for k in (0..self.axes.len()).rev() {
            let len = self.axes[k].len();
            theta[k] = self.axes[k][i % len];
            i /= len;
        }
    }

    fn full_weight(&self, mut i: usize) -> f64 {
        let mut w = 1.0;
        for k in (0..self.axes.len()).rev() {
            let len = self.axes[k].len();
            w *= self.weights[k][i % len];
            i /= len;
        }
        w
    }

    fn table(&self, x: &Dataset) -> Result<Arc<Table>> {
        let key = x.fingerprint();
        if let Some(t) = self.cache.lock().expect("posterior cache poisoned").get(&key) {
            return Ok(Arc::clone(t));
        }
        let table = Arc::new(self.build(x)?);
        let mut cache = self.cache.lock().expect("posterior cache poisoned");
        if cache.len() >= self.cache_cap {
            cache.clear();
        }
        cache.insert(key, Arc::clone(&table));
        Ok(table)
    }

    fn build(&self, x: &Dataset) -> Result<Table> {
        let kernel = Kernel::new(&self.model, x)?;
        let d = self.axes.len();
        let mut theta = vec![0.0; d];
        let mut log_post = Vec::with_capacity(self.full_len());
        for i in 0..self.full_len() {
            self.node(i, &mut theta);
            log_post.push(kernel.eval(&theta) + self.ln_prior[i]);
        }
        let w: Vec<f64> = (0..self.full_len()).map(|i| self.full_weight(i)).collect();
        let log_z = log_weighted_sum(&log_post, &w);
        if !log_z.is_finite() {
            return Err(Error::DegeneratePosterior);
        }

        // marginal density of the interest coordinates on their own grid
        let interest_axes: Vec<Vec<f64>> = self.interest.iter().map(|&k| self.axes[k].clone()).collect();
        let density: Vec<f64> = if self.nuisance.is_empty() {
            log_post.iter().map(|lp| (lp - log_z).exp()).collect()
        } else {
            // d = 2 with one interest and one nuisance coordinate
            let (ki, kn) = (self.interest[0], self.nuisance[0]);
            let len_n = self.axes[kn].len();
            (0..self.axes[ki].len())
                .map(|a| {
                    let mut acc = 0.0;
                    for c in 0..len_n {
                        let idx = if ki == 0 { a * len_n + c } else { c * self.axes[0].len() + a };
                        acc += self.weights[kn][c] * (log_post[idx] - log_z).exp();
                    }
                    acc
                })
                .collect()
        };
        let iw: Vec<&Vec<f64>> = self.interest.iter().map(|&k| &self.weights[k]).collect();
        let mass = self.interest_integral(&interest_axes, &iw, &density, |_| 1.0);
        if (mass - 1.0).abs() > 1e-4 {
            log::warn!("posterior quadrature mass {mass} deviates from 1 by more than 1e-4");
        }
        let di = interest_axes.len();
        let mean: Vec<f64> = (0..di)
            .map(|k| self.interest_integral(&interest_axes, &iw, &density, |t| t[k]))
            .collect();
        let mut cov = vec![0.0; di * di];
        for a in 0..di {
            for b in 0..di {
                cov[a * di + b] = self.interest_integral(&interest_axes, &iw, &density, |t| {
                    (t[a] - mean[a]) * (t[b] - mean[b])
                });
            }
        }
        Ok(Table {
            log_z,
            density,
            mean,
            cov,
            interest_axes,
            kernel,
            sorted_mass: OnceLock::new(),
        })
    }

    fn interest_integral(
        &self,
        axes: &[Vec<f64>],
        weights: &[&Vec<f64>],
        density: &[f64],
        f: impl Fn(&[f64]) -> f64,
    ) -> f64 {
        let mut acc = 0.0;
        let mut t = vec![0.0; axes.len()];
        for (i, &g) in density.iter().enumerate() {
            let mut rem = i;
            let mut w = 1.0;
            for k in (0..axes.len()).rev() {
                let len = axes[k].len();
                t[k] = axes[k][rem % len];
                w *= weights[k][rem % len];
                rem /= len;
            }
            acc += w * g * f(&t);
        }
        acc
    }

    /// Log of the normalized (marginal) posterior density at the interest
    /// coordinates `mu`, evaluated off-grid.
    fn ln_posterior(&self, table: &Table, mu: &[f64]) -> f64 {
        self.ln_marginal(mu, Some(&table.kernel)) - table.log_z
    }

    /// Log of the box-normalized marginal prior density at `mu`.
    fn ln_prior_marginal(&self, mu: &[f64]) -> f64 {
        self.ln_marginal(mu, None) - self.ln_prior_mass
    }

    /// `ln int pi(mu, nu) L(mu, nu) dnu` (the likelihood factor only when a
    /// kernel is given); without nuisance this is the pointwise value.
    fn ln_marginal(&self, mu: &[f64], kernel: Option<&Kernel>) -> f64 {
        let d = self.axes.len();
        let mut theta = vec![0.0; d];
        for (slot, &k) in self.interest.iter().enumerate() {
            theta[k] = mu[slot];
        }
        let ln_joint = |theta: &[f64]| {
            self.model.prior_ln_density(theta) + kernel.map_or(0.0, |k| k.eval(theta))
        };
        if self.nuisance.is_empty() {
            return ln_joint(&theta);
        }
        let kn = self.nuisance[0];
        let logs: Vec<f64> = self.axes[kn]
            .iter()
            .map(|&nu| {
                theta[kn] = nu;
                ln_joint(&theta)
            })
            .collect();
        log_weighted_sum(&logs, &self.weights[kn])
    }
}

impl Table {
    /// Posterior mass of `{density >= level}` over the interest grid. In 1-D
    /// the density is interpolated linearly within each cell and the
    /// super-level part integrated exactly; in 2-D nodes carry trapezoid
    /// cell volumes. Both are normalized by the total mass of the same rule.
    fn hpd_mass(&self, level: f64) -> f64 {
        if self.interest_axes.len() == 1 {
            let t = &self.interest_axes[0];
            let g = &self.density;
            let (mut above, mut total) = (0.0, 0.0);
            for i in 0..t.len() - 1 {
                let h = t[i + 1] - t[i];
                let (a, b) = (g[i], g[i + 1]);
                total += 0.5 * h * (a + b);
                above += cell_mass_above(a, b, h, level);
            }
            return if total > 0.0 { above / total } else { 0.0 };
        }
        let (sorted, cum, total) = self.sorted_mass.get_or_init(|| {
            let (ax0, ax1) = (&self.interest_axes[0], &self.interest_axes[1]);
            let vol = |axis: &Vec<f64>, i: usize| {
                let left = if i > 0 { axis[i] - axis[i - 1] } else { 0.0 };
                let right = if i + 1 < axis.len() { axis[i + 1] - axis[i] } else { 0.0 };
                0.5 * (left + right)
            };
            let mut items: Vec<(f64, f64)> = self
                .density
                .iter()
                .enumerate()
                .map(|(idx, &g)| {
                    let (i, j) = (idx / ax1.len(), idx % ax1.len());
                    (g, g * vol(ax0, i) * vol(ax1, j))
                })
                .collect();
            items.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut acc = 0.0;
            let mut cum = Vec::with_capacity(items.len());
            for &(_, m) in &items {
                acc += m;
                cum.push(acc);
            }
            (items.into_iter().map(|(g, _)| g).collect(), cum, acc)
        });
        // number of nodes with density >= level (densities sorted descending)
        let count = sorted.partition_point(|&g| g >= level);
        if count == 0 || *total <= 0.0 {
            0.0
        } else {
            cum[count - 1] / total
        }
    }
}

/// Integral over a cell of width `h` of the linear interpolant from `a` to
/// `b`, restricted to where it is at least `level`.
fn cell_mass_above(a: f64, b: f64, h: f64, level: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if lo >= level {
        return 0.5 * h * (a + b);
    }
    if hi < level {
        return 0.0;
    }
    // fraction of the cell above the level, adjacent to the larger endpoint
    let frac = (hi - level) / (hi - lo);
    0.5 * frac * h * (hi + level)
}

fn simpson_axis(lo: f64, hi: f64, points: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / (points - 1) as f64;
    let nodes = (0..points).map(|i| lo + h * i as f64).collect();
    let weights = (0..points)
        .map(|i| {
            let c = if i == 0 || i == points - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (nodes, weights)
}

/// `ln sum_i w_i exp(l_i)` with max-shifting.
fn log_weighted_sum(logs: &[f64], weights: &[f64]) -> f64 {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = logs.iter().zip(weights).map(|(l, w)| w * (l - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn normal_data(seed: u64, n: usize, theta: f64) -> Dataset {
        ModelSpec::normal().simulate(&[theta], n, seed).unwrap()
    }

    #[test]
    fn conjugate_bff_matches_closed_form() {
        let post = Posterior::new(&ModelSpec::normal(), PosteriorEngine::Conjugate).unwrap();
        let x = Dataset::univariate(vec![0.4, -0.1, 0.9]).unwrap();
        // prior N(0, 1/4): precision 4 + 3, mean = sum / 7
        let (m, v): (f64, f64) = (1.2 / 7.0, 1.0 / 7.0);
        for &t in &[-1.0_f64, 0.0, 0.3, 2.0] {
            let post_d = (-(t - m) * (t - m) / (2.0 * v)).exp() / (std::f64::consts::TAU * v).sqrt();
            let prior_d = (-(t * t) / 0.5).exp() / (std::f64::consts::TAU * 0.25).sqrt();
            let (bff, flag) = post.bff(&x, &[t]).unwrap();
            assert!(!flag);
            assert_abs_diff_eq!(bff, post_d / prior_d, epsilon = 1e-8 * (post_d / prior_d).max(1.0));
            assert_abs_diff_eq!(post.waldo(&x, &[t]).unwrap(), (m - t).powi(2) / v, epsilon = 1e-8);
        }
    }

    #[test]
    fn empty_data_gives_unit_bff() {
        let post = Posterior::new(&ModelSpec::normal(), PosteriorEngine::Conjugate).unwrap();
        let x = Dataset::univariate(vec![]).unwrap();
        assert_abs_diff_eq!(post.bff(&x, &[0.7]).unwrap().0, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn conjugate_and_quadrature_agree() {
        let m = ModelSpec::normal();
        let conj = Posterior::new(&m, PosteriorEngine::Conjugate).unwrap();
        let quad = Posterior::new(&m, PosteriorEngine::Quadrature { points_per_dim: 2049 }).unwrap();
        for i in 0..100u64 {
            let x = normal_data(i, 1 + (i % 10) as usize, -1.0 + 0.02 * i as f64);
            let t = -1.5 + 0.03 * i as f64;
            let (a, _) = conj.bff(&x, &[t]).unwrap();
            let (b, _) = quad.bff(&x, &[t]).unwrap();
            assert!((a - b).abs() <= 1e-3 * a.max(1.0), "bff {a} vs {b}");
            let (a, b) = (conj.e_value(&x, &[t]).unwrap(), quad.e_value(&x, &[t]).unwrap());
            assert!((a - b).abs() <= 1e-3, "e-value {a} vs {b}");
        }
    }

    #[test]
    fn e_value_extremes() {
        let m = ModelSpec::gmm();
        let post = Posterior::new(&m, PosteriorEngine::Quadrature { points_per_dim: 2049 }).unwrap();
        let x = m.simulate(&[1.5], 40, 3).unwrap();
        let (mean, _) = post.moments(&x).unwrap();
        // mode by scanning the interpolated grid density
        let q = match &post {
            Posterior::Quadrature(q) => q,
            _ => unreachable!(),
        };
        let table = q.table(&x).unwrap();
        let (imax, _) = table
            .density
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &g)| if g > b.1 { (i, g) } else { b });
        let mode = table.interest_axes[0][imax];
        assert!(post.e_value(&x, &[mode]).unwrap() > 1.0 - 1e-3);
        assert!(post.e_value(&x, &[5.0]).unwrap() < 1e-3);
        assert!(mean[0] > 1.0 && mean[0] < 2.0);
    }

    #[test]
    fn gmm_bff_integrates_to_one_against_prior() {
        let m = ModelSpec::gmm();
        let post = Posterior::new(&m, PosteriorEngine::Quadrature { points_per_dim: 2049 }).unwrap();
        let x = m.simulate(&[0.8], 20, 11).unwrap();
        // independent rule: composite trapezoid on 20001 points over [0, 5]
        let mut prior_mass = 0.0;
        let mut acc = 0.0;
        let k = 20_000;
        let h = 5.0 / k as f64;
        for i in 0..=k {
            let t = h * i as f64;
            let w = if i == 0 || i == k { 0.5 * h } else { h };
            let pi = m.prior_ln_density(&[t]).exp();
            prior_mass += w * pi;
            acc += w * pi * post.bff(&x, &[t]).unwrap().0;
        }
        assert_abs_diff_eq!(acc / prior_mass, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn waldo_quadrature_is_centered_and_homogeneous() {
        let m = ModelSpec::lognormal();
        let post = Posterior::new(&m, PosteriorEngine::Quadrature { points_per_dim: 129 }).unwrap();
        let x = m.simulate(&[0.3, 0.6], 25, 4).unwrap();
        let (mean, cov) = post.moments(&x).unwrap();
        assert_abs_diff_eq!(post.waldo(&x, &mean).unwrap(), 0.0, epsilon = 1e-12);
        let scaled: Vec<f64> = cov.iter().map(|c| 3.0 * c).collect();
        let t = [0.1, 0.5];
        let base = quadratic_form(&mean, &cov, &t).unwrap();
        assert_abs_diff_eq!(quadratic_form(&mean, &scaled, &t).unwrap(), base / 3.0, epsilon = 1e-9);
        assert!(matches!(
            quadratic_form(&mean, &[1.0, 1.0, 1.0, 1.0], &t),
            Err(Error::DegeneratePosterior)
        ));
    }

    #[test]
    fn poisson_marginal_density_integrates_to_one() {
        let m = ModelSpec::poisson_counting();
        let post = Posterior::new(&m, PosteriorEngine::Quadrature { points_per_dim: 257 }).unwrap();
        let x = m.simulate(&[1.0, 1.0], 1, 9).unwrap();
        // integrate BFF * marginal prior (uniform 1/5) on a fine trapezoid rule
        let k = 4000;
        let h = 5.0 / k as f64;
        let mut acc = 0.0;
        for i in 0..=k {
            let w = if i == 0 || i == k { 0.5 * h } else { h };
            acc += w * 0.2 * post.bff(&x, &[h * i as f64]).unwrap().0;
        }
        assert_abs_diff_eq!(acc, 1.0, epsilon = 1e-4);
        let e = post.e_value(&x, &[1.0]).unwrap();
        assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn cell_mass_above_cases() {
        assert_abs_diff_eq!(cell_mass_above(1.0, 1.0, 2.0, 0.5), 2.0);
        assert_abs_diff_eq!(cell_mass_above(1.0, 1.0, 2.0, 1.5), 0.0);
        // linear 0 -> 2 on width 1, above level 1: x in [0.5, 1], mass 0.75
        assert_abs_diff_eq!(cell_mass_above(0.0, 2.0, 1.0, 1.0), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(cell_mass_above(2.0, 0.0, 1.0, 1.0), 0.75, epsilon = 1e-15);
    }
}
