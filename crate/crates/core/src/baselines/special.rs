//! Special functions backing the asymptotic baselines and the models.
//!
//! The chi-square and Kolmogorov distributions are implemented here from
//! their series; the error function and log-gamma come from `statrs`.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::erf;
use statrs::function::gamma as sgamma;

const EPS: f64 = 1e-15;
const TINY: f64 = 1e-300;

pub fn ln_gamma(x: f64) -> f64 {
    sgamma::ln_gamma(x)
}

pub fn digamma(x: f64) -> f64 {
    sgamma::digamma(x)
}

/// Trigamma via upward recurrence to x >= 10 and the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / SQRT_2)
}

pub fn normal_sf(x: f64) -> f64 {
    0.5 * erf::erfc(x / SQRT_2)
}

pub fn normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

/// Standard normal quantile, refined with two Newton steps on the CDF.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut z = SQRT_2 * erf::erf_inv(2.0 * p - 1.0);
    for _ in 0..2 {
        let err = normal_cdf(z) - p;
        let dens = normal_ln_pdf(z).exp();
        if dens > 0.0 {
            z -= err / dens;
        }
    }
    z
}

/// Regularized lower incomplete gamma P(a, x).
///
/// Uses the power series for `x < a + 1` and the Lentz continued fraction
/// for the upper tail otherwise.
pub fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        lower_gamma_series(a, x)
    } else {
        1.0 - upper_gamma_fraction(a, x)
    }
}

fn lower_gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn upper_gamma_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

pub fn chi2_cdf(x: f64, dof: f64) -> f64 {
    reg_lower_gamma(dof / 2.0, x / 2.0)
}

/// Chi-square quantile by bisection on [`chi2_cdf`].
pub fn chi2_quantile(p: f64, dof: f64) -> f64 {
    assert!((0.0..1.0).contains(&p) && p > 0.0, "p must lie in (0, 1)");
    let mut hi = dof.max(1.0);
    while chi2_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    bisect(|x| chi2_cdf(x, dof) - p, 0.0, hi)
}

/// Kolmogorov limiting CDF K(x) = P(sup |B(t)| <= x).
///
/// For `x >= 0.5` the alternating series `1 - 2 sum (-1)^(k-1) exp(-2 k^2 x^2)`
/// is used; below that, the Jacobi theta form, which converges fast there.
/// Both are truncated once a term drops below 1e-12 relative to the sum.
pub fn kolmogorov_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 0.5 {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..1000 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * x * x).exp();
            sum += sign * term;
            sign = -sign;
            if term < 1e-12 * sum.abs().max(1e-300) || term < 1e-300 {
                break;
            }
        }
        (1.0 - 2.0 * sum).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1..1000 {
            let odd = (2 * k - 1) as f64;
            let term = (-odd * odd * PI * PI / (8.0 * x * x)).exp();
            sum += term;
            if term < 1e-12 * sum.max(1e-300) || term == 0.0 {
                break;
            }
        }
        ((2.0 * PI).sqrt() / x * sum).clamp(0.0, 1.0)
    }
}

pub fn kolmogorov_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p must lie in (0, 1)");
    let mut hi = 1.0;
    while kolmogorov_cdf(hi) < p {
        hi *= 2.0;
    }
    bisect(|x| kolmogorov_cdf(x) - p, 0.0, hi)
}

/// Bisection for an increasing function with a sign change on `[lo, hi]`.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// log of the binomial pmf C(m, k) p^k (1-p)^(m-k).
pub fn ln_binomial_pmf(m: u64, k: u64, p: f64) -> f64 {
    if k > m {
        return f64::NEG_INFINITY;
    }
    let (mf, kf) = (m as f64, k as f64);
    let ln_choose = ln_gamma(mf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(mf - kf + 1.0);
    let lp = if k == 0 { 0.0 } else { kf * p.ln() };
    let lq = if k == m { 0.0 } else { (mf - kf) * (1.0 - p).ln() };
    ln_choose + lp + lq
}

pub fn ln_poisson_pmf(k: f64, rate: f64) -> f64 {
    if rate <= 0.0 {
        return if k == 0.0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k * rate.ln() - rate - ln_gamma(k + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn chi2_one_dof_matches_erf_identity() {
        // For one degree of freedom, P(X <= x) = erf(sqrt(x / 2)); erf from
        // its positive-term series 2/sqrt(pi) e^{-z^2} sum 2^n z^{2n+1} / (2n+1)!!
        let erf_series = |z: f64| {
            let mut term = z;
            let mut sum = z;
            for n in 1..400 {
                term *= 2.0 * z * z / (2 * n + 1) as f64;
                sum += term;
            }
            2.0 / PI.sqrt() * (-z * z).exp() * sum
        };
        for &x in &[0.01, 0.5, 1.0, 3.841458820694124, 7.0, 20.0] {
            let expected = erf_series((x / 2.0_f64).sqrt());
            assert_abs_diff_eq!(chi2_cdf(x, 1.0), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn chi2_even_dof_closed_form() {
        // dof = 4: P = 1 - exp(-x/2)(1 + x/2)
        for &x in &[0.3, 2.0, 9.0, 30.0] {
            let expected = 1.0 - (-x / 2.0_f64).exp() * (1.0 + x / 2.0);
            assert_abs_diff_eq!(chi2_cdf(x, 4.0), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn quantile_round_trips() {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            assert_abs_diff_eq!(chi2_cdf(chi2_quantile(p, 1.0), 1.0), p, epsilon = 1e-8);
            assert_abs_diff_eq!(kolmogorov_cdf(kolmogorov_quantile(p)), p, epsilon = 1e-8);
            assert_abs_diff_eq!(normal_cdf(normal_quantile(p)), p, epsilon = 1e-12);
        }
    }

    #[test]
    fn kolmogorov_branches_agree_at_switch() {
        let x: f64 = 0.5;
        let mut alt = 0.0;
        for k in 1..200 {
            let kf = k as f64;
            alt += if k % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * kf * kf * x * x).exp();
        }
        assert_abs_diff_eq!(kolmogorov_cdf(x), 1.0 - 2.0 * alt, epsilon = 1e-12);
        assert_abs_diff_eq!(kolmogorov_cdf(0.4999999999), kolmogorov_cdf(0.5), epsilon = 1e-9);
    }

    #[test]
    fn trigamma_values() {
        // trigamma(1) = pi^2 / 6, trigamma(1/2) = pi^2 / 2
        assert_abs_diff_eq!(trigamma(1.0), PI * PI / 6.0, epsilon = 1e-10);
        assert_abs_diff_eq!(trigamma(0.5), PI * PI / 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(trigamma(25.0), 0.040_810_663_257_225_6, epsilon = 1e-12);
    }

    #[test]
    fn binomial_pmf_sums_to_one() {
        let total: f64 = (0..=40).map(|k| ln_binomial_pmf(40, k, 0.3).exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }
}
