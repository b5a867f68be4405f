//! Statistical models: parameter boxes, reference distributions, simulators
//! and log-likelihoods.
//!
//! A [`ModelSpec`] is immutable after construction. Simulation is a pure
//! function of `(spec, theta, n, seed)`.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::special::{ln_gamma, ln_poisson_pmf, normal_cdf};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, derive_seed, rng_from_seed, stage, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Default seed for the fixed covariate design of the gamma GLM.
pub const DEFAULT_DESIGN_SEED: u64 = 20_240_917;

/// Closed, axis-aligned parameter box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidParameter(
                "parameter box bounds must be nonempty and of equal length".into(),
            ));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "parameter box needs finite lower < upper, got {lower:?} / {upper:?}"
            )));
        }
        Ok(ParamBox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *t >= *l && *t <= *u)
    }

    pub fn clamp(&self, theta: &mut [f64]) {
        for (i, t) in theta.iter_mut().enumerate() {
            *t = t.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn width(&self, dim: usize) -> f64 {
        self.upper[dim] - self.lower[dim]
    }

    /// Restriction to a subset of coordinates.
    pub fn project(&self, dims: &[usize]) -> ParamBox {
        ParamBox {
            lower: dims.iter().map(|&d| self.lower[d]).collect(),
            upper: dims.iter().map(|&d| self.upper[d]).collect(),
        }
    }
}

/// Observed or simulated dataset: `n` observations of dimension `p`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if p == 0 || values.len() != n * p {
            return Err(Error::InvalidParameter(format!(
                "dataset of {n} x {p} needs {} values, got {}",
                n * p,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("dataset entries must be finite".into()));
        }
        Ok(Dataset { n, p, values })
    }

    pub fn univariate(values: Vec<f64>) -> Result<Self> {
        Self::new(values.len(), 1, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    /// Hash of the bit patterns, used as a cache key by posterior engines.
    pub fn fingerprint(&self) -> u64 {
        let mut h = derive_seed(self.n as u64, &[self.p as u64]);
        for v in &self.values {
            h = derive_seed(h, &[v.to_bits()]);
        }
        h
    }
}

/// Prior used by the Bayesian statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    /// Univariate normal with the given variance.
    Normal { mean: f64, var: f64 },
    /// Normal-inverse-gamma on `(mu, sigma^2)`: `sigma^2 ~ IG(shape, scale)`,
    /// `mu | sigma^2 ~ N(mean, sigma^2 / lambda)`.
    NormalInverseGamma {
        mean: f64,
        lambda: f64,
        shape: f64,
        scale: f64,
    },
    /// Uniform over the parameter box.
    Uniform,
    /// `beta_j ~ N(0, beta_vars[j])` independently, `phi ~ Exp(phi_rate)`
    /// truncated to the box.
    Glm { beta_vars: [f64; 3], phi_rate: f64 },
}

/// Where the calibration parameters are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Prior,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// `X_i ~ N(theta, 1)`.
    Normal,
    /// `X_i ~ 0.5 N(theta, 1) + 0.5 N(-theta, 1)`.
    Gmm,
    /// `X_i ~ lognormal(mu, sigma^2)`, `theta = (mu, sigma^2)`.
    Lognormal,
    /// `N_b ~ Pois(nu * tau_hyper * b)`, `N_s ~ Pois(nu * b + mu * s)`,
    /// `theta = (mu, nu)`.
    PoissonCounting { s: f64, b: f64, tau_hyper: f64 },
    /// `Y_i ~ Gamma(shape 1/phi, scale phi * exp(beta . (1, x_i)))`,
    /// `theta = (beta_0, beta_1, beta_2, phi)`.
    GammaGlm {
        design: Vec<[f64; 2]>,
        design_seed: u64,
    },
}

/// A tractable statistical model with its parameter box, prior and
/// reference distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    pub bounds: ParamBox,
    pub prior: Prior,
    pub reference: Reference,
    /// Indices of the parameters of interest; the rest are nuisance.
    pub interest: Vec<usize>,
}

impl ModelSpec {
    pub fn normal() -> Self {
        ModelSpec {
            name: "normal".into(),
            kind: ModelKind::Normal,
            bounds: ParamBox::new(vec![-5.0], vec![5.0]).unwrap(),
            prior: Prior::Normal { mean: 0.0, var: 0.25 },
            reference: Reference::Uniform,
            interest: vec![0],
        }
    }

    pub fn gmm() -> Self {
        ModelSpec {
            name: "gmm".into(),
            kind: ModelKind::Gmm,
            bounds: ParamBox::new(vec![0.0], vec![5.0]).unwrap(),
            prior: Prior::Normal { mean: 0.25, var: 1.0 },
            reference: Reference::Uniform,
            interest: vec![0],
        }
    }

    pub fn lognormal() -> Self {
        ModelSpec {
            name: "lognormal".into(),
            kind: ModelKind::Lognormal,
            bounds: ParamBox::new(vec![-2.5, 0.15], vec![2.5, 1.25]).unwrap(),
            prior: Prior::NormalInverseGamma {
                mean: 0.0,
                lambda: 2.0,
                shape: 2.0,
                scale: 1.0,
            },
            reference: Reference::Uniform,
            interest: vec![0, 1],
        }
    }

    pub fn poisson_counting() -> Self {
        ModelSpec {
            name: "poisson".into(),
            kind: ModelKind::PoissonCounting {
                s: 15.0,
                b: 70.0,
                tau_hyper: 1.0,
            },
            bounds: ParamBox::new(vec![0.0, 0.0], vec![5.0, 1.5]).unwrap(),
            prior: Prior::Uniform,
            reference: Reference::Prior,
            interest: vec![0],
        }
    }

    /// Gamma GLM whose covariate design has `n` rows drawn from `U(-1, 1)^2`
    /// under `design_seed`. The interest parameter is `beta_1`.
    pub fn gamma_glm(n: usize, design_seed: u64) -> Self {
        let mut rng = derive_rng(design_seed, &[]);
        let design = (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        ModelSpec {
            name: "glm".into(),
            kind: ModelKind::GammaGlm {
                design,
                design_seed,
            },
            bounds: ParamBox::new(vec![-10.0, -5.0, -5.0, 0.01], vec![10.0, 5.0, 5.0, 1.75])
                .unwrap(),
            prior: Prior::Glm {
                beta_vars: [4.0, 1.0, 1.0],
                phi_rate: 1.0,
            },
            reference: Reference::Prior,
            interest: vec![1],
        }
    }

    pub fn by_name(name: &str, n: usize) -> Result<Self> {
        match name {
            "normal" => Ok(Self::normal()),
            "gmm" => Ok(Self::gmm()),
            "lognormal" => Ok(Self::lognormal()),
            "poisson" => Ok(Self::poisson_counting()),
            "glm" => Ok(Self::gamma_glm(n, DEFAULT_DESIGN_SEED)),
            other => Err(Error::UnknownName {
                kind: "model",
                name: other.into(),
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// Per-observation dimension of the data.
    pub fn obs_dim(&self) -> usize {
        match self.kind {
            ModelKind::PoissonCounting { .. } => 2,
            _ => 1,
        }
    }

    pub fn nuisance(&self) -> Vec<usize> {
        (0..self.dim()).filter(|d| !self.interest.contains(d)).collect()
    }

    pub fn has_nuisance(&self) -> bool {
        self.interest.len() < self.dim()
    }

    pub fn has_likelihood(&self) -> bool {
        true
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if self.bounds.contains(theta) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "theta {theta:?} outside the parameter box of `{}`",
                self.name
            )))
        }
    }

    /// Draws `count` parameters i.i.d. from the reference distribution.
    /// Point `i` uses its own stream, so prefixes agree across counts.
    pub fn sample_reference(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        (0..count)
            .map(|i| {
                let mut rng = derive_rng(seed, &[stage::REFERENCE, i as u64]);
                match self.reference {
                    Reference::Uniform => self.sample_uniform(&mut rng),
                    Reference::Prior => self.sample_prior(&mut rng),
                }
            })
            .collect()
    }

    fn sample_uniform(&self, rng: &mut Rng) -> Vec<f64> {
        self.bounds
            .lower
            .iter()
            .zip(&self.bounds.upper)
            .map(|(l, u)| l + (u - l) * rng.random::<f64>())
            .collect()
    }

    /// Prior draw restricted to the box (rejection for unbounded priors).
    pub fn sample_prior(&self, rng: &mut Rng) -> Vec<f64> {
        loop {
            let theta = match &self.prior {
                Prior::Uniform => return self.sample_uniform(rng),
                Prior::Normal { mean, var } => {
                    let z: f64 = rng.sample(StandardNormal);
                    vec![mean + var.sqrt() * z]
                }
                Prior::NormalInverseGamma {
                    mean,
                    lambda,
                    shape,
                    scale,
                } => {
                    let g = Gamma::new(*shape, 1.0 / scale).expect("valid gamma");
                    let sigma2 = 1.0 / g.sample(rng);
                    let z: f64 = rng.sample(StandardNormal);
                    vec![mean + (sigma2 / lambda).sqrt() * z, sigma2]
                }
                Prior::Glm {
                    beta_vars,
                    phi_rate,
                } => {
                    let mut theta: Vec<f64> = beta_vars
                        .iter()
                        .map(|v| v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    // inverse CDF of the exponential truncated to (0, upper]
                    let upper = self.bounds.upper[3];
                    let mass = 1.0 - (-phi_rate * upper).exp();
                    let u: f64 = rng.random();
                    theta.push(-(1.0 - u * mass).ln() / phi_rate);
                    theta
                }
            };
            if self.bounds.contains(&theta) {
                return theta;
            }
        }
    }

    /// Log prior density in its natural (untruncated) normalization.
    pub fn prior_ln_density(&self, theta: &[f64]) -> f64 {
        match &self.prior {
            Prior::Uniform => -(0..self.dim())
                .map(|d| self.bounds.width(d).ln())
                .sum::<f64>(),
            Prior::Normal { mean, var } => {
                let z = theta[0] - mean;
                -0.5 * z * z / var - 0.5 * (LN_2PI + var.ln())
            }
            Prior::NormalInverseGamma {
                mean,
                lambda,
                shape,
                scale,
            } => {
                let (mu, s2) = (theta[0], theta[1]);
                if s2 <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                0.5 * (lambda.ln() - LN_2PI - s2.ln()) + shape * scale.ln() - ln_gamma(*shape)
                    - (shape + 1.0) * s2.ln()
                    - (2.0 * scale + lambda * (mu - mean).powi(2)) / (2.0 * s2)
            }
            Prior::Glm {
                beta_vars,
                phi_rate,
            } => {
                let mut acc = 0.0;
                for j in 0..3 {
                    acc += -0.5 * theta[j] * theta[j] / beta_vars[j]
                        - 0.5 * (LN_2PI + beta_vars[j].ln());
                }
                let upper = self.bounds.upper[3];
                let mass = 1.0 - (-phi_rate * upper).exp();
                acc + phi_rate.ln() - phi_rate * theta[3] - mass.ln()
            }
        }
    }

    /// Simulates `n` i.i.d. observations at `theta`.
    pub fn simulate(&self, theta: &[f64], n: usize, seed: u64) -> Result<Dataset> {
        self.check_theta(theta)?;
        let mut rng = rng_from_seed(seed);
        self.simulate_with(theta, n, &mut rng)
    }

    pub(crate) fn simulate_with(&self, theta: &[f64], n: usize, rng: &mut Rng) -> Result<Dataset> {
        let values = match &self.kind {
            ModelKind::Normal => (0..n)
                .map(|_| theta[0] + rng.sample::<f64, _>(StandardNormal))
                .collect(),
            ModelKind::Gmm => (0..n)
                .map(|_| {
                    let center = if rng.random::<bool>() { theta[0] } else { -theta[0] };
                    center + rng.sample::<f64, _>(StandardNormal)
                })
                .collect(),
            ModelKind::Lognormal => {
                let sd = theta[1].sqrt();
                (0..n)
                    .map(|_| (theta[0] + sd * rng.sample::<f64, _>(StandardNormal)).exp())
                    .collect()
            }
            ModelKind::PoissonCounting { s, b, tau_hyper } => {
                let (mu, nu) = (theta[0], theta[1]);
                let (rate_b, rate_s) = (nu * tau_hyper * b, nu * b + mu * s);
                let mut out = Vec::with_capacity(2 * n);
                for _ in 0..n {
                    out.push(poisson_draw(rate_b, rng));
                    out.push(poisson_draw(rate_s, rng));
                }
                out
            }
            ModelKind::GammaGlm { design, .. } => {
                if n != design.len() {
                    return Err(Error::InvalidParameter(format!(
                        "GLM design has {} rows, cannot simulate n = {n}",
                        design.len()
                    )));
                }
                let phi = theta[3];
                let shape = 1.0 / phi;
                design
                    .iter()
                    .map(|row| {
                        let mean = glm_mean(theta, row);
                        let g = Gamma::new(shape, phi * mean).expect("valid gamma");
                        // gamma draws can underflow to zero for tiny shapes
                        g.sample(rng).max(f64::MIN_POSITIVE)
                    })
                    .collect()
            }
        };
        Dataset::new(n, self.obs_dim(), values)
    }

    /// Sum of per-observation log densities. Box membership is not checked,
    /// so symmetric extensions of the parameter can be evaluated.
    pub fn loglik(&self, x: &Dataset, theta: &[f64]) -> Result<f64> {
        if !self.has_likelihood() {
            return Err(Error::LikelihoodUnavailable(self.name.clone()));
        }
        let v = x.values();
        let ll = match &self.kind {
            ModelKind::Normal => v
                .iter()
                .map(|xi| -0.5 * (xi - theta[0]).powi(2) - 0.5 * LN_2PI)
                .sum(),
            ModelKind::Gmm => v.iter().map(|&xi| gmm_ln_density(xi, theta[0])).sum(),
            ModelKind::Lognormal => {
                let s2 = theta[1];
                v.iter()
                    .map(|&xi| {
                        let l = xi.ln();
                        -l - 0.5 * (LN_2PI + s2.ln()) - (l - theta[0]).powi(2) / (2.0 * s2)
                    })
                    .sum()
            }
            ModelKind::PoissonCounting { s, b, tau_hyper } => {
                let (mu, nu) = (theta[0], theta[1]);
                let (rate_b, rate_s) = (nu * tau_hyper * b, nu * b + mu * s);
                v.chunks(2)
                    .map(|c| ln_poisson_pmf(c[0], rate_b) + ln_poisson_pmf(c[1], rate_s))
                    .sum()
            }
            ModelKind::GammaGlm { design, .. } => {
                if v.len() != design.len() {
                    return Err(Error::InvalidParameter(format!(
                        "GLM design has {} rows, data has {}",
                        design.len(),
                        v.len()
                    )));
                }
                let phi = theta[3];
                let k = 1.0 / phi;
                let norm = -ln_gamma(k) - k * phi.ln();
                v.iter()
                    .zip(design)
                    .map(|(&y, row)| {
                        let eta = glm_eta(theta, row);
                        norm - k * eta + (k - 1.0) * y.ln() - y * (-eta).exp() / phi
                    })
                    .sum()
            }
        };
        Ok(ll)
    }

    /// Theoretical CDF of one observation, for univariate continuous models.
    pub fn cdf(&self, x: f64, theta: &[f64]) -> Result<f64> {
        match self.kind {
            ModelKind::Normal => Ok(normal_cdf(x - theta[0])),
            ModelKind::Gmm => Ok(0.5 * normal_cdf(x - theta[0]) + 0.5 * normal_cdf(x + theta[0])),
            ModelKind::Lognormal => {
                if x <= 0.0 {
                    Ok(0.0)
                } else {
                    Ok(normal_cdf((x.ln() - theta[0]) / theta[1].sqrt()))
                }
            }
            _ => Err(Error::CdfUnavailable(self.name.clone())),
        }
    }
}

pub(crate) fn glm_eta(theta: &[f64], row: &[f64; 2]) -> f64 {
    theta[0] + theta[1] * row[0] + theta[2] * row[1]
}

fn glm_mean(theta: &[f64], row: &[f64; 2]) -> f64 {
    glm_eta(theta, row).exp()
}

pub(crate) fn gmm_ln_density(x: f64, theta: f64) -> f64 {
    let a = -0.5 * (x - theta).powi(2);
    let b = -0.5 * (x + theta).powi(2);
    let m = a.max(b);
    m + (0.5 * ((a - m).exp() + (b - m).exp())).ln() - 0.5 * LN_2PI
}

fn poisson_draw(rate: f64, rng: &mut Rng) -> f64 {
    if rate <= 0.0 {
        0.0
    } else {
        Poisson::new(rate).expect("positive rate").sample(rng)
    }
}
