//! Experiment configuration, read from TOML. Every key has a default, and
//! unknown keys are rejected so typos surface immediately.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::oracle::OracleNuisance;
use crate::calibration::{check_level, Method, TuneConfig};
use crate::error::{Error, Result};
use crate::evaluation::EvalGrid;
use crate::forest::{EmptyPolicy, ForestParams};
use crate::models::{ModelKind, ModelSpec, ParamBox, Reference};
use crate::nuisance::NuisanceConfig;
use crate::statistics::{PosteriorEngine, Statistic, StatisticKind};
use crate::tree::TreeParams;

/// Model selection plus optional overrides of its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// One of `normal`, `gmm`, `lognormal`, `poisson`, `glm`.
    pub name: String,
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
    #[serde(default)]
    pub reference: Option<Reference>,
    /// Signal efficiency, background scale and background-sample ratio of
    /// the Poisson counting model.
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default)]
    pub b: Option<f64>,
    #[serde(default)]
    pub tau_hyper: Option<f64>,
    /// Seed of the fixed GLM covariate design.
    #[serde(default)]
    pub design_seed: Option<u64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            name: "normal".into(),
            lower: None,
            upper: None,
            reference: None,
            s: None,
            b: None,
            tau_hyper: None,
            design_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub bootstrap: bool,
    /// Proximity threshold; `None` means the majority vote `ceil(K / 2)`.
    pub m: Option<usize>,
    pub empty_policy: EmptyPolicy,
    pub tree: TreeParams,
}

impl Default for ForestConfig {
    fn default() -> Self {
        let p = ForestParams::default();
        ForestConfig {
            n_trees: p.n_trees,
            bootstrap: p.bootstrap,
            m: None,
            empty_policy: EmptyPolicy::Error,
            tree: p.tree,
        }
    }
}

impl ForestConfig {
    pub fn params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            tree: self.tree.clone(),
            bootstrap: self.bootstrap,
        }
    }

    pub fn majority_m(&self) -> usize {
        self.m.unwrap_or(self.n_trees.div_ceil(2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    /// Simulations per grid node.
    pub n_mc: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { n_mc: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Simulations per oracle cutoff.
    pub n_oracle: usize,
    pub nuisance: OracleNuisance,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n_oracle: 10_000,
            nuisance: OracleNuisance::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// `None`: 100 points per dim up to two dims, otherwise 1000 reference
    /// draws.
    pub grid: Option<EvalGrid>,
    pub n_sim: usize,
    /// Also compute oracle cutoffs and report each method's deviation from
    /// oracle coverage.
    pub d_alpha: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            grid: None,
            n_sim: 1000,
            d_alpha: false,
        }
    }
}

impl EvalConfig {
    pub fn grid_for(&self, model: &ModelSpec) -> EvalGrid {
        self.grid.clone().unwrap_or(if model.dim() <= 2 {
            EvalGrid::Regular { per_dim: 100 }
        } else {
            EvalGrid::Reference { count: 1000 }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfsetConfig {
    /// Grid points per parameter of interest (nuisance coordinates are
    /// fixed at the box midpoint).
    pub per_dim: usize,
}

impl Default for ConfsetConfig {
    fn default() -> Self {
        ConfsetConfig { per_dim: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub statistic: StatisticKind,
    /// Methods run by `experiment`; the first one is used by `fit`.
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub beta: f64,
    /// Sample size of each simulated dataset.
    pub n: usize,
    /// Number of calibration simulations.
    pub b: usize,
    pub seed: u64,
    pub replicates: usize,
    /// Fit on the first half of the simulations and calibrate on the second.
    pub split: bool,
    pub out: PathBuf,
    pub posterior: Option<PosteriorEngine>,
    pub tree: TreeParams,
    pub forest: ForestConfig,
    pub tune: TuneConfig,
    pub nuisance: NuisanceConfig,
    pub mc: McConfig,
    pub oracle: OracleConfig,
    pub eval: EvalConfig,
    pub confset: ConfsetConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            statistic: StatisticKind::Ks,
            methods: vec![Method::Trustpp],
            alpha: 0.05,
            beta: 0.05,
            n: 10,
            b: 10_000,
            seed: 0,
            replicates: 10,
            split: false,
            out: PathBuf::from("out"),
            posterior: None,
            tree: TreeParams::default(),
            forest: ForestConfig::default(),
            tune: TuneConfig::default(),
            nuisance: NuisanceConfig::default(),
            mc: McConfig::default(),
            oracle: OracleConfig::default(),
            eval: EvalConfig::default(),
            confset: ConfsetConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::parse("<config>", e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        check_level(self.alpha, "alpha")?;
        check_level(self.beta, "beta")?;
        if self.n == 0 || self.b == 0 {
            return Err(Error::InvalidParameter("n and b must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("replicates must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("at least one method is required".into()));
        }
        self.tree.validate()?;
        self.forest.tree.validate()?;
        let m = self.forest.majority_m();
        if self.forest.n_trees == 0 || m == 0 || m > self.forest.n_trees {
            return Err(Error::InvalidParameter(format!(
                "forest needs K >= 1 and M in [1, K], got K = {}, M = {m}",
                self.forest.n_trees
            )));
        }
        if self.mc.n_mc == 0 || self.eval.n_sim == 0 || self.oracle.n_oracle == 0 {
            return Err(Error::InvalidParameter("simulation counts must be positive".into()));
        }
        if let Some(PosteriorEngine::Quadrature { points_per_dim }) = self.posterior {
            if points_per_dim < 3 || points_per_dim % 2 == 0 {
                return Err(Error::InvalidParameter(format!(
                    "quadrature needs an odd node count >= 3, got {points_per_dim}"
                )));
            }
        }
        self.model_spec()?;
        Ok(())
    }

    /// The configured model with overrides applied.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let c = &self.model;
        let mut spec = match (c.name.as_str(), c.design_seed) {
            ("glm", Some(seed)) => ModelSpec::gamma_glm(self.n, seed),
            (name, _) => ModelSpec::by_name(name, self.n)?,
        };
        if c.lower.is_some() || c.upper.is_some() {
            let lower = c.lower.clone().unwrap_or_else(|| spec.bounds.lower.clone());
            let upper = c.upper.clone().unwrap_or_else(|| spec.bounds.upper.clone());
            if lower.len() != spec.dim() || upper.len() != spec.dim() {
                return Err(Error::InvalidParameter(format!(
                    "bounds for `{}` need {} coordinates",
                    spec.name,
                    spec.dim()
                )));
            }
            spec.bounds = ParamBox::new(lower, upper)?;
        }
        if let Some(r) = c.reference {
            spec.reference = r;
        }
        let poisson_keys = c.s.is_some() || c.b.is_some() || c.tau_hyper.is_some();
        match &mut spec.kind {
            ModelKind::PoissonCounting { s, b, tau_hyper } => {
                for (slot, over) in [(s, c.s), (b, c.b), (tau_hyper, c.tau_hyper)] {
                    if let Some(v) = over {
                        if !(v > 0.0 && v.is_finite()) {
                            return Err(Error::InvalidParameter(format!("Poisson constants must be positive, got {v}")));
                        }
                        *slot = v;
                    }
                }
            }
            _ if poisson_keys => {
                return Err(Error::InvalidParameter(format!(
                    "keys s, b, tau_hyper apply only to the poisson model, not `{}`",
                    spec.name
                )))
            }
            _ => {}
        }
        Ok(spec)
    }

    pub fn statistic_for(&self, model: &ModelSpec) -> Result<Statistic> {
        let engine = if self.statistic.needs_posterior() {
            self.posterior.or_else(|| PosteriorEngine::default_for(model))
        } else {
            None
        };
        if self.statistic.needs_posterior() && engine.is_none() {
            return Err(Error::PosteriorUnavailable(format!(
                "no posterior engine for model `{}`",
                model.name
            )));
        }
        Statistic::with_engine(self.statistic, model, engine)
    }

    /// The model and the bound statistic.
    pub fn build(&self) -> Result<(ModelSpec, Statistic)> {
        let model = self.model_spec()?;
        let statistic = self.statistic_for(&model)?;
        Ok((model, statistic))
    }
}
