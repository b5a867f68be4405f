//! Test statistics `tau(x, theta0)`, normalized so that larger values mean
//! more plausible: the confidence set is always `{theta : tau >= C_theta}`.

mod ks;
mod lr;
mod optimize;
mod posterior;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Dataset, ModelSpec};

pub use ks::ks_distance;
pub use lr::{lr_statistic, max_loglik, restricted_max};
pub use optimize::{golden_max, grid_golden_max, solve_dense};
pub use posterior::PosteriorEngine;

use posterior::Posterior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    Lr,
    Ks,
    Bff,
    Evalue,
    Waldo,
}

impl StatisticKind {
    pub fn name(self) -> &'static str {
        match self {
            StatisticKind::Lr => "lr",
            StatisticKind::Ks => "ks",
            StatisticKind::Bff => "bff",
            StatisticKind::Evalue => "evalue",
            StatisticKind::Waldo => "waldo",
        }
    }

    /// `+1` if the native statistic already grows with plausibility, `-1`
    /// for the distance-like statistics that are negated.
    pub fn sign(self) -> f64 {
        match self {
            StatisticKind::Ks | StatisticKind::Waldo => -1.0,
            _ => 1.0,
        }
    }

    pub fn needs_posterior(self) -> bool {
        matches!(self, StatisticKind::Bff | StatisticKind::Evalue | StatisticKind::Waldo)
    }
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatisticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(StatisticKind::Lr),
            "ks" => Ok(StatisticKind::Ks),
            "bff" => Ok(StatisticKind::Bff),
            "evalue" => Ok(StatisticKind::Evalue),
            "waldo" => Ok(StatisticKind::Waldo),
            other => Err(Error::UnknownName {
                kind: "statistic",
                name: other.into(),
            }),
        }
    }
}

/// A statistic bound to a model (and to a posterior engine for the Bayesian
/// statistics). Evaluation is thread-safe.
#[derive(Debug)]
pub struct Statistic {
    kind: StatisticKind,
    model: ModelSpec,
    engine: Option<PosteriorEngine>,
    posterior: Option<Posterior>,
}

impl Statistic {
    /// Binds `kind` to `model` with the model's default posterior engine.
    pub fn new(kind: StatisticKind, model: &ModelSpec) -> Result<Self> {
        let engine = if kind.needs_posterior() {
            Some(PosteriorEngine::default_for(model).ok_or_else(|| {
                Error::PosteriorUnavailable(format!("no posterior engine for model `{}`", model.name))
            })?)
        } else {
            None
        };
        Self::with_engine(kind, model, engine)
    }

    pub fn with_engine(
        kind: StatisticKind,
        model: &ModelSpec,
        engine: Option<PosteriorEngine>,
    ) -> Result<Self> {
        match kind {
            StatisticKind::Lr if !model.has_likelihood() => {
                return Err(Error::LikelihoodUnavailable(model.name.clone()))
            }
            StatisticKind::Ks if model.has_nuisance() || model.obs_dim() != 1 => {
                return Err(Error::CdfUnavailable(model.name.clone()))
            }
            _ => {}
        }
        let (engine, posterior) = if kind.needs_posterior() {
            let engine = engine.ok_or_else(|| {
                Error::PosteriorUnavailable(format!("statistic `{kind}` needs a posterior engine"))
            })?;
            (Some(engine), Some(Posterior::new(model, engine)?))
        } else {
            (None, None)
        };
        Ok(Statistic {
            kind,
            model: model.clone(),
            engine,
            posterior,
        })
    }

    pub fn kind(&self) -> StatisticKind {
        self.kind
    }

    pub fn engine(&self) -> Option<PosteriorEngine> {
        self.engine
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// Direction-normalized `tau(x, theta)`. `theta` is a full parameter
    /// point; with nuisance parameters only its interest coordinates are
    /// used (nuisance is profiled out for LR, marginalized for posteriors).
    pub fn evaluate(&self, x: &Dataset, theta: &[f64]) -> Result<f64> {
        let raw = match self.kind {
            StatisticKind::Lr => lr_statistic(&self.model, x, theta)?,
            StatisticKind::Ks => ks_distance(&self.model, x, theta)?,
            StatisticKind::Bff | StatisticKind::Evalue | StatisticKind::Waldo => {
                let post = self.posterior.as_ref().expect("posterior bound at construction");
                let interest: Vec<f64> = self.model.interest.iter().map(|&k| theta[k]).collect();
                match self.kind {
                    StatisticKind::Bff => {
                        let (value, underflow) = post.bff(x, &interest)?;
                        if underflow {
                            log::debug!("posterior density underflow at {interest:?}; BFF set to 0");
                        }
                        value
                    }
                    StatisticKind::Evalue => post.e_value(x, &interest)?,
                    _ => post.waldo(x, &interest)?,
                }
            }
        };
        Ok(self.kind.sign() * raw)
    }

    /// Posterior mean and covariance (row-major) of the interest coordinates.
    pub fn posterior_moments(&self, x: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
        self.posterior
            .as_ref()
            .ok_or_else(|| Error::PosteriorUnavailable(format!("statistic `{}` has no posterior", self.kind)))?
            .moments(x)
    }
}
