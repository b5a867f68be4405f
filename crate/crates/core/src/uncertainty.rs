//! Order-statistic confidence intervals for the cutoff and the three-way
//! (inside / outside / undetermined) split of a confidence set.
//!
//! With `Z ~ Binomial(m, alpha)` counting neighborhood values at or below the
//! true cutoff, `[tau_(l), tau_(u)]` covers it with probability
//! `P(l <= Z <= u - 1)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::special::ln_binomial_pmf;
use crate::calibration::{check_level, ConfidenceReport, Label, LocalCalibration};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffInterval {
    /// 1-based order-statistic indices.
    pub l: usize,
    pub u: usize,
    pub lower: f64,
    pub upper: f64,
    pub beta: f64,
    pub m: usize,
    /// Exact `P(l <= Z <= u - 1)`.
    pub coverage: f64,
}

/// `cdf[k] = P(Z <= k)` for `Z ~ Binomial(m, p)`, `k = 0..=m`.
fn binomial_cdf_table(m: usize, p: f64) -> Vec<f64> {
    let mut acc = 0.0;
    (0..=m)
        .map(|k| {
            acc += ln_binomial_pmf(m as u64, k as u64, p).exp();
            acc.min(1.0)
        })
        .collect()
}

/// Order-statistic interval for the alpha-quantile of the distribution
/// behind `sorted` (ascending). Prefers the pair whose tails each carry at
/// most `beta / 2`; otherwise the narrowest pair with coverage `>= 1 - beta`,
/// ties broken by centering on `m alpha`.
pub fn quantile_ci(sorted: &[f64], alpha: f64, beta: f64) -> Result<CutoffInterval> {
    check_level(alpha, "alpha")?;
    check_level(beta, "beta")?;
    let m = sorted.len();
    let infeasible = |cdf: &[f64]| Error::InsufficientNeighborhood {
        m,
        min_beta: if m >= 2 { 1.0 - (cdf[m - 1] - cdf[0]) } else { 1.0 },
    };
    if m < 2 {
        let cdf = binomial_cdf_table(m, alpha);
        return Err(infeasible(&cdf));
    }
    let cdf = binomial_cdf_table(m, alpha);
    let cover = |l: usize, u: usize| -> f64 {
        // P(l <= Z <= u - 1) = F(u - 1) - F(l - 1)
        if u <= l {
            0.0
        } else {
            let below = if l == 0 { 0.0 } else { cdf[l - 1] };
            (cdf[u - 1] - below).max(0.0)
        }
    };
    let target = 1.0 - beta;
    let half = 0.5 * beta;
    // balanced tails: largest l with P(Z < l) <= beta/2, smallest u with
    // P(Z > u - 1) <= beta/2
    let l_bal = (1..=m).rev().find(|&l| cdf[l - 1] <= half);
    let u_bal = (1..=m).find(|&u| 1.0 - cdf[u - 1] <= half);
    let make = |l: usize, u: usize| CutoffInterval {
        l,
        u,
        lower: sorted[l - 1],
        upper: sorted[u - 1],
        beta,
        m,
        coverage: cover(l, u),
    };
    if let (Some(l), Some(u)) = (l_bal, u_bal) {
        if l < u && cover(l, u) >= target {
            return Ok(make(l, u));
        }
    }
    let center = m as f64 * alpha;
    let mut best: Option<(usize, f64, usize, usize)> = None;
    for l in 1..=m {
        // smallest feasible u for this l
        let Some(u) = (l + 1..=m).find(|&u| cover(l, u) >= target) else {
            continue;
        };
        let width = u - l;
        let off = ((l + u - 1) as f64 / 2.0 - center).abs();
        let better = match best {
            None => true,
            Some((w, o, _, _)) => width < w || (width == w && off < o),
        };
        if better {
            best = Some((width, off, l, u));
        }
    }
    match best {
        Some((_, _, l, u)) => Ok(make(l, u)),
        None => Err(infeasible(&cdf)),
    }
}

/// Cutoff intervals at every grid point; `None` where the neighborhood is
/// too small for the requested `beta`. With a nuisance grid the interval
/// is computed on the neighborhood of the minimizing nuisance value.
pub fn cutoff_cis(
    cal: &dyn LocalCalibration,
    grid: &[Vec<f64>],
    argmin_nuisance: Option<&[Vec<f64>]>,
    nuisance: Option<&NuisanceGrid>,
    alpha: f64,
    beta: f64,
) -> Result<Vec<Option<CutoffInterval>>> {
    grid.par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let mut q = theta.clone();
            if let (Some(args), Some(ng)) = (argmin_nuisance, nuisance) {
                for (slot, &d) in ng.dims().iter().enumerate() {
                    q[d] = args[i][slot];
                }
            }
            let ecdf = cal.local_ecdf(&q)?;
            match quantile_ci(ecdf.values(), alpha, beta) {
                Ok(ci) => Ok(Some(ci)),
                Err(Error::InsufficientNeighborhood { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Label from `tau` and a cutoff interval: IN above the upper end, OUT at or
/// below the lower end, UNDETERMINED in between (and without an interval).
pub fn label(tau: f64, ci: Option<&CutoffInterval>) -> Label {
    match ci {
        None => Label::Undetermined,
        Some(ci) if tau >= ci.upper && tau > ci.lower => Label::In,
        Some(ci) if tau <= ci.lower && tau < ci.upper => Label::Out,
        Some(_) => Label::Undetermined,
    }
}

/// Attaches three-way labels to a confidence report.
pub fn three_way(report: &mut ConfidenceReport, cis: &[Option<CutoffInterval>]) -> Result<()> {
    if cis.len() != report.tau.len() {
        return Err(Error::GridMisalignment(format!(
            "{} intervals for {} grid points",
            cis.len(),
            report.tau.len()
        )));
    }
    report.labels = Some(report.tau.iter().zip(cis).map(|(&t, ci)| label(t, ci.as_ref())).collect());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_cover(m: usize, alpha: f64, l: usize, u: usize) -> f64 {
        (l..u).map(|k| ln_binomial_pmf(m as u64, k as u64, alpha).exp()).sum()
    }

    #[test]
    fn tiny_neighborhood_is_infeasible() {
        match quantile_ci(&[1.0], 0.5, 0.6) {
            Err(Error::InsufficientNeighborhood { m, .. }) => assert_eq!(m, 1),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn min_beta_is_reported() {
        let values: Vec<f64> = (0..5).map(f64::from).collect();
        match quantile_ci(&values, 0.05, 0.05) {
            Err(Error::InsufficientNeighborhood { min_beta, .. }) => {
                let best = exact_cover(5, 0.05, 1, 5);
                assert!((min_beta - (1.0 - best)).abs() < 1e-12);
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn coverage_meets_level_by_exact_sum() {
        let values: Vec<f64> = (0..100).map(f64::from).collect();
        let ci = quantile_ci(&values, 0.05, 0.05).unwrap();
        assert!(exact_cover(100, 0.05, ci.l, ci.u) >= 0.95);
        assert_eq!(ci.lower, (ci.l - 1) as f64);
    }

    #[test]
    fn width_shrinks_as_beta_grows() {
        let values: Vec<f64> = (0..300).map(f64::from).collect();
        let widths: Vec<usize> = [0.5, 0.9, 0.999]
            .iter()
            .map(|&b| {
                let ci = quantile_ci(&values, 0.3, b).unwrap();
                ci.u - ci.l
            })
            .collect();
        assert!(widths.windows(2).all(|w| w[1] <= w[0]), "{widths:?}");
    }

    #[test]
    fn labels_follow_interval() {
        let ci = CutoffInterval {
            l: 1,
            u: 2,
            lower: 1.0,
            upper: 2.0,
            beta: 0.1,
            m: 3,
            coverage: 0.9,
        };
        assert_eq!(label(2.5, Some(&ci)), Label::In);
        assert_eq!(label(2.0, Some(&ci)), Label::In);
        assert_eq!(label(1.5, Some(&ci)), Label::Undetermined);
        assert_eq!(label(1.0, Some(&ci)), Label::Out);
        assert_eq!(label(3.0, None), Label::Undetermined);
        let point = CutoffInterval {
            lower: 1.0,
            upper: 1.0,
            ..ci
        };
        assert_eq!(label(1.0, Some(&point)), Label::Undetermined);
        assert_eq!(label(1.1, Some(&point)), Label::In);
        assert_eq!(label(0.9, Some(&point)), Label::Out);
    }
}
