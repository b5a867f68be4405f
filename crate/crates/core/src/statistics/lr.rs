//! Likelihood-ratio statistic `log L(x; theta0) - sup_theta log L(x; theta)`.
//!
//! For models with nuisance parameters the numerator is profiled over the
//! nuisance coordinates with the interest coordinates held at `theta0`.

use super::optimize::{grid_golden_max, solve_dense};
use crate::baselines::special::{digamma, ln_gamma};
use crate::error::{Error, Result};
use crate::models::{glm_eta, Dataset, ModelKind, ModelSpec};

const GRID_POINTS: usize = 512;
const GOLDEN_TOL: f64 = 1e-10;

/// Returns the likelihood-ratio statistic (always `<= 0`).
pub fn lr_statistic(model: &ModelSpec, x: &Dataset, theta0: &[f64]) -> Result<f64> {
    let restricted = restricted_max(model, x, theta0)?;
    let full = max_loglik(model, x)?.1;
    // theta0 itself is a candidate for the supremum
    Ok((restricted - full.max(restricted)).min(0.0))
}

/// Log-likelihood maximized over the nuisance coordinates with the interest
/// coordinates fixed at `theta0`; just `loglik(theta0)` without nuisance.
pub fn restricted_max(model: &ModelSpec, x: &Dataset, theta0: &[f64]) -> Result<f64> {
    if !model.has_nuisance() {
        return model.loglik(x, theta0);
    }
    match &model.kind {
        ModelKind::PoissonCounting { s, b, tau_hyper } => {
            let stats = PoissonSums::new(x, *s, *b, *tau_hyper);
            let nu = stats.profile_nu(theta0[0], &model.bounds.lower[1..], &model.bounds.upper[1..]);
            Ok(stats.loglik(theta0[0], nu))
        }
        ModelKind::GammaGlm { design, .. } => {
            let fit = glm_fit(x.values(), design, Some(theta0[1]))?;
            Ok(fit.1)
        }
        _ => Err(Error::InvalidParameter(format!(
            "model `{}` declares no nuisance handling",
            model.name
        ))),
    }
}

/// Maximum of the log-likelihood over the parameter box (over `R^3 x (0, inf)`
/// for the GLM) and its argmax.
pub fn max_loglik(model: &ModelSpec, x: &Dataset) -> Result<(Vec<f64>, f64)> {
    let bounds = &model.bounds;
    match &model.kind {
        ModelKind::Normal => {
            let mean = x.values().iter().sum::<f64>() / x.n() as f64;
            let theta = vec![mean.clamp(bounds.lower[0], bounds.upper[0])];
            let ll = model.loglik(x, &theta)?;
            Ok((theta, ll))
        }
        ModelKind::Lognormal => {
            let logs: Vec<f64> = x.values().iter().map(|v| v.ln()).collect();
            let n = logs.len() as f64;
            let mu = (logs.iter().sum::<f64>() / n).clamp(bounds.lower[0], bounds.upper[0]);
            let s2 = logs.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n;
            let theta = vec![mu, s2.clamp(bounds.lower[1], bounds.upper[1])];
            let ll = model.loglik(x, &theta)?;
            Ok((theta, ll))
        }
        ModelKind::Gmm => {
            let f = |t: f64| model.loglik(x, &[t]).unwrap_or(f64::NEG_INFINITY);
            let (t, ll) = grid_golden_max(&f, bounds.lower[0], bounds.upper[0], GRID_POINTS, GOLDEN_TOL);
            if !ll.is_finite() {
                return Err(Error::MleFailure(format!(
                    "gmm log-likelihood not finite at the grid maximum (theta = {t})"
                )));
            }
            Ok((vec![t], ll))
        }
        ModelKind::PoissonCounting { s, b, tau_hyper } => {
            let stats = PoissonSums::new(x, *s, *b, *tau_hyper);
            let (theta, ll) = stats.box_max(&bounds.lower, &bounds.upper);
            if !ll.is_finite() {
                return Err(Error::MleFailure("poisson log-likelihood is -inf on the box".into()));
            }
            Ok((theta, ll))
        }
        ModelKind::GammaGlm { design, .. } => {
            let (theta, ll) = glm_fit(x.values(), design, None)?;
            Ok((theta.to_vec(), ll))
        }
    }
}

/// Sufficient statistics of the Poisson counting model.
#[derive(Debug, Clone)]
pub(crate) struct PoissonSums {
    n: f64,
    nb: f64,
    ns: f64,
    s: f64,
    b: f64,
    tau: f64,
}

impl PoissonSums {
    pub(crate) fn new(x: &Dataset, s: f64, b: f64, tau: f64) -> Self {
        let (mut nb, mut ns) = (0.0, 0.0);
        for row in x.values().chunks(2) {
            nb += row[0];
            ns += row[1];
        }
        PoissonSums {
            n: x.n() as f64,
            nb,
            ns,
            s,
            b,
            tau,
        }
    }

    /// Log-likelihood up to the `ln k!` terms.
    pub(crate) fn loglik(&self, mu: f64, nu: f64) -> f64 {
        let rate_b = nu * self.tau * self.b;
        let rate_s = nu * self.b + mu * self.s;
        xlogy(self.nb, rate_b) - self.n * rate_b + xlogy(self.ns, rate_s) - self.n * rate_s
    }

    /// Exact maximizer in nu for fixed mu: the stationarity condition is a
    /// quadratic with one nonnegative root; the log-likelihood is concave.
    fn profile_nu(&self, mu: f64, lo: &[f64], hi: &[f64]) -> f64 {
        let (b, s, tau, n) = (self.b, self.s, self.tau, self.n);
        let qa = -n * (tau + 1.0) * b * b;
        let qb = self.nb * b + self.ns * b - n * (tau + 1.0) * b * mu * s;
        let qc = self.nb * mu * s;
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
        let root = (-qb - disc.sqrt()) / (2.0 * qa);
        root.max(0.0).clamp(lo[0], hi[0])
    }

    fn profile_mu(&self, nu: f64, lo: f64, hi: f64) -> f64 {
        ((self.ns / self.n - nu * self.b) / self.s).clamp(lo, hi)
    }

    fn box_max(&self, lo: &[f64], hi: &[f64]) -> (Vec<f64>, f64) {
        let mut candidates = Vec::with_capacity(5);
        let nu_hat = self.nb / (self.n * self.tau * self.b);
        let mu_hat = (self.ns / self.n - nu_hat * self.b) / self.s;
        if (lo[0]..=hi[0]).contains(&mu_hat) && (lo[1]..=hi[1]).contains(&nu_hat) {
            candidates.push((mu_hat, nu_hat));
        }
        for mu in [lo[0], hi[0]] {
            candidates.push((mu, self.profile_nu(mu, &lo[1..], &hi[1..])));
        }
        for nu in [lo[1], hi[1]] {
            candidates.push((self.profile_mu(nu, lo[0], hi[0]), nu));
        }
        candidates
            .into_iter()
            .map(|(mu, nu)| (vec![mu, nu], self.loglik(mu, nu)))
            .fold((vec![lo[0], lo[1]], f64::NEG_INFINITY), |best, c| {
                if c.1 > best.1 {
                    c
                } else {
                    best
                }
            })
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if y <= 0.0 {
        f64::NEG_INFINITY
    } else {
        x * y.ln()
    }
}

/// Gamma GLM maximum likelihood: Newton iterations on the (concave) beta
/// score, which does not involve phi, then the exact phi maximizer given beta.
/// With `fixed_beta1` the slope is held fixed and only `(beta_0, beta_2)` move.
pub(crate) fn glm_fit(
    y: &[f64],
    design: &[[f64; 2]],
    fixed_beta1: Option<f64>,
) -> Result<([f64; 4], f64)> {
    let n = y.len();
    if n == 0 || n != design.len() {
        return Err(Error::InvalidParameter("GLM data and design size differ".into()));
    }
    let free: Vec<usize> = match fixed_beta1 {
        Some(_) => vec![0, 2],
        None => vec![0, 1, 2],
    };
    let covariate = |row: &[f64; 2], j: usize| match j {
        0 => 1.0,
        1 => row[0],
        _ => row[1],
    };
    let objective = |beta: &[f64; 3]| -> f64 {
        y.iter()
            .zip(design)
            .map(|(&yi, row)| {
                let eta = glm_eta(beta, row);
                -eta - yi * (-eta).exp()
            })
            .sum()
    };

    let mean_y = y.iter().sum::<f64>() / n as f64;
    let mut beta = [mean_y.ln(), fixed_beta1.unwrap_or(0.0), 0.0];
    if let Some(b1) = fixed_beta1 {
        // start from the intercept that matches the mean under the fixed slope
        let offset: f64 = design.iter().map(|r| (b1 * r[0]).exp()).sum::<f64>() / n as f64;
        beta[0] = mean_y.ln() - offset.ln();
    }
    let mut current = objective(&beta);
    let mut converged = false;
    for _ in 0..200 {
        let k = free.len();
        let mut grad = vec![0.0; k];
        let mut neg_hess = vec![vec![0.0; k]; k];
        for (&yi, row) in y.iter().zip(design) {
            let w = yi * (-glm_eta(&beta, row)).exp();
            for (a, &ja) in free.iter().enumerate() {
                let xa = covariate(row, ja);
                grad[a] += (w - 1.0) * xa;
                for (c, &jc) in free.iter().enumerate() {
                    neg_hess[a][c] += w * xa * covariate(row, jc);
                }
            }
        }
        let step = solve_dense(neg_hess, grad.clone())
            .ok_or_else(|| Error::MleFailure("singular GLM information matrix".into()))?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = beta;
            for (a, &j) in free.iter().enumerate() {
                trial[j] += t * step[a];
            }
            let value = objective(&trial);
            if value >= current - 1e-12 * current.abs().max(1.0) {
                beta = trial;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let max_step = step.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        let max_grad = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        if max_step < 1e-10 || max_grad < 1e-10 * n as f64 {
            converged = true;
            break;
        }
        if !accepted {
            break;
        }
    }
    if !converged || !current.is_finite() {
        return Err(Error::MleFailure(format!(
            "GLM Newton iterations did not converge (beta = {beta:?}, objective = {current})"
        )));
    }

    // Given beta, l(k) = n (k ln k - lnG(k)) + k A - sum ln y with k = 1/phi.
    let sum_ln_y: f64 = y.iter().map(|v| v.ln()).sum();
    let a = sum_ln_y + current;
    let target = -a / n as f64 - 1.0;
    let k = solve_shape(target);
    let nf = n as f64;
    let ll = nf * (k * k.ln() - ln_gamma(k)) + k * a - sum_ln_y;
    Ok(([beta[0], beta[1], beta[2], 1.0 / k], ll))
}

/// Solves `ln k - digamma(k) = target` for `k > 0` by bisection on `ln k`.
fn solve_shape(target: f64) -> f64 {
    const K_MAX: f64 = 1e10;
    if target <= 0.0 || !target.is_finite() {
        return K_MAX;
    }
    let g = |lk: f64| {
        let k = lk.exp();
        k.ln() - digamma(k) - target
    };
    let (mut lo, mut hi) = (-40.0_f64, K_MAX.ln());
    if g(hi) > 0.0 {
        return K_MAX;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // g is decreasing in k
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_closed_form() {
        let m = ModelSpec::normal();
        let x = Dataset::univariate(vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(lr_statistic(&m, &x, &[0.0]).unwrap(), -1.0, epsilon = 1e-12);
        assert_eq!(lr_statistic(&m, &x, &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn gmm_matches_dense_grid_oracle() {
        let m = ModelSpec::gmm();
        let x = m.simulate(&[2.0], 50, 77).unwrap();
        // oracle: 200_001-point grid, then a finer local grid around the best
        let ll = |t: f64| m.loglik(&x, &[t]).unwrap();
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 0..=200_000 {
            let t = 5.0 * i as f64 / 200_000.0;
            let v = ll(t);
            if v > best.1 {
                best = (t, v);
            }
        }
        let (lo, hi) = ((best.0 - 2.5e-5).max(0.0), (best.0 + 2.5e-5).min(5.0));
        for i in 0..=10_000 {
            let t = lo + (hi - lo) * i as f64 / 10_000.0;
            let v = ll(t);
            if v > best.1 {
                best = (t, v);
            }
        }
        let oracle = ll(2.0) - best.1;
        assert_abs_diff_eq!(lr_statistic(&m, &x, &[2.0]).unwrap(), oracle, epsilon = 1e-6);
    }

    #[test]
    fn lognormal_profile_is_exact() {
        let m = ModelSpec::lognormal();
        let x = m.simulate(&[0.4, 0.7], 30, 5).unwrap();
        let (theta, best) = max_loglik(&m, &x).unwrap();
        for i in 0..=100 {
            for j in 0..=100 {
                let t = [-2.5 + 5.0 * i as f64 / 100.0, 0.15 + 1.1 * j as f64 / 100.0];
                assert!(m.loglik(&x, &t).unwrap() <= best + 1e-9, "{t:?} beats {theta:?}");
            }
        }
    }

    #[test]
    fn poisson_box_max_beats_grid() {
        let m = ModelSpec::poisson_counting();
        for (seed, theta) in [(1u64, [1.0, 1.0]), (2, [0.1, 0.05]), (3, [4.9, 1.45]), (4, [0.0, 0.0])] {
            let x = m.simulate(&theta, 1, seed).unwrap();
            let (_, best) = max_loglik(&m, &x).unwrap();
            let stats = PoissonSums::new(&x, 15.0, 70.0, 1.0);
            let base = m.loglik(&x, &[1.0, 1.0]).unwrap() - stats.loglik(1.0, 1.0);
            for i in 0..=200 {
                for j in 0..=200 {
                    let t = [5.0 * i as f64 / 200.0, 1.5 * j as f64 / 200.0];
                    assert!(stats.loglik(t[0], t[1]) <= best + 1e-9);
                }
            }
            let lr = lr_statistic(&m, &x, &[2.0, 0.3]).unwrap();
            assert!(lr <= 0.0);
            assert!(base.is_finite());
        }
    }

    #[test]
    fn poisson_profile_nu_is_stationary() {
        let m = ModelSpec::poisson_counting();
        let x = m.simulate(&[2.0, 0.8], 3, 12).unwrap();
        let stats = PoissonSums::new(&x, 15.0, 70.0, 1.0);
        let nu = stats.profile_nu(1.3, &[0.0], &[1.5]);
        let h = 1e-6;
        let d = (stats.loglik(1.3, nu + h) - stats.loglik(1.3, nu - h)) / (2.0 * h);
        assert!(d.abs() < 1e-3 || nu == 0.0 || nu == 1.5);
    }

    #[test]
    fn glm_fit_is_stationary_and_lr_nonpositive() {
        let m = ModelSpec::gamma_glm(50, 8);
        let theta = [0.5, -1.0, 0.7, 0.4];
        let y = m.simulate(&theta, 50, 3).unwrap();
        let (hat, ll) = max_loglik(&m, &y).unwrap();
        assert_abs_diff_eq!(ll, m.loglik(&y, &hat).unwrap(), epsilon = 1e-8);
        // perturbations never improve the optimum
        for j in 0..4 {
            for &dv in &[-1e-3, 1e-3] {
                let mut t = [hat[0], hat[1], hat[2], hat[3]];
                t[j] += dv;
                assert!(m.loglik(&y, &t).unwrap() <= ll + 1e-9);
            }
        }
        let lr = lr_statistic(&m, &y, &theta).unwrap();
        assert!(lr <= 0.0);
        assert_abs_diff_eq!(lr_statistic(&m, &y, &hat).unwrap(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn shape_solver_inverts() {
        for &k in &[0.3, 1.0, 4.0, 50.0] {
            let target = f64::ln(k) - digamma(k);
            assert_abs_diff_eq!(solve_shape(target), k, epsilon = 1e-8 * k);
        }
    }
}
