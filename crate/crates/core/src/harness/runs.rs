//! The pipeline stages behind the command-line subcommands. Each stage is a
//! pure function of the configuration (including its master seed) and its
//! input files.
//!
//! Seeds: the calibration set of replicate `r` uses
//! `derive_seed(seed, [REPLICATE, r, SIMULATE])`, its coverage sample
//! `derive_seed(seed, [REPLICATE, r, COVERAGE])`, and so on; standalone
//! stages use the master seed directly.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::baselines::asymptotic::asymptotic_cutoff;
use crate::baselines::mc::{axis_nodes, McCalibrator};
use crate::baselines::oracle::oracle_cutoffs;
use crate::calibration::{
    compute_cutoffs, confidence_set, p_value, tune_m, CalibratedCutoffs, ConfidenceReport, LocalCalibration, Method,
    SimulatedSet, TrustCalibrator, TrustPpCalibrator, TuneResult,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    coverage_from_sample, mae, oracle_deviation, replicate_summary, CoverageSample, CoverageTable, ExperimentResult,
    SummaryRow,
};
use crate::forest::Forest;
use crate::harness::config::ExperimentConfig;
use crate::harness::io::{self, Bundle, Calibrator};
use crate::models::ModelSpec;
use crate::nuisance::{nuisance_p_value, NuisanceGrid};
use crate::rng::{derive_seed, stage};
use crate::statistics::Statistic;
use crate::uncertainty::{cutoff_cis, three_way};

pub const SIMULATED_FILE: &str = "simulated.csv";
pub const BUNDLE_DIR: &str = "bundle";
pub const CONFSET_FILE: &str = "confset.csv";
pub const RESULTS_FILE: &str = "results.csv";

fn needs_set(method: Method) -> bool {
    matches!(method, Method::Trust | Method::Trustpp | Method::TrustppTuned)
}

/// Simulates the calibration set and writes it to `<out>/simulated.csv`.
pub fn run_simulate(config: &ExperimentConfig) -> Result<(PathBuf, SimulatedSet)> {
    let (model, statistic) = config.build()?;
    let set = SimulatedSet::simulate(&statistic, config.n, config.b, config.seed)?;
    let path = config.out.join(SIMULATED_FILE);
    io::write_simulated_set(&path, &set, &model)?;
    log::info!("wrote {} simulations to {}", set.len(), path.display());
    Ok((path, set))
}

/// Nuisance grid for a calibrator, when the model has nuisance parameters.
/// The Monte Carlo baseline never minimizes over nuisance values: every
/// point takes the cutoff of its nearest node.
pub fn nuisance_grid(cal: &dyn LocalCalibration, model: &ModelSpec, config: &ExperimentConfig) -> Result<Option<NuisanceGrid>> {
    if model.has_nuisance() && cal.method() != Method::Mc {
        Ok(Some(NuisanceGrid::from_calibration(cal, model, &config.nuisance)?))
    } else {
        Ok(None)
    }
}

fn forest_nuisance_grid(forest: &Forest, model: &ModelSpec, config: &ExperimentConfig) -> Result<Option<NuisanceGrid>> {
    if !model.has_nuisance() {
        return Ok(None);
    }
    let dims = model.nuisance();
    let splits = forest.split_values(&dims, config.nuisance.depth_limit);
    NuisanceGrid::build(&splits, &model.bounds, &model.interest, &dims, config.nuisance.max_points).map(Some)
}

/// TRUST++ calibrator over a fitted forest, with `M` tuned when asked.
fn trustpp_from_forest(
    forest: Forest,
    method: Method,
    model: &ModelSpec,
    statistic: &Statistic,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(TrustPpCalibrator, Option<TuneResult>)> {
    if method == Method::TrustppTuned {
        let ng = forest_nuisance_grid(&forest, model, config)?;
        let tuned = tune_m(&forest, statistic, config.n, config.alpha, &config.tune, ng.as_ref(), seed)?;
        log::info!("tuned M = {} (MAE table {:?})", tuned.m, tuned.table);
        let cal = TrustPpCalibrator::new(forest, tuned.m, config.forest.empty_policy)?.tuned();
        Ok((cal, Some(tuned)))
    } else {
        Ok((TrustPpCalibrator::new(forest, config.forest.majority_m(), config.forest.empty_policy)?, None))
    }
}

/// Fits the calibrator of `method` (the sample-based methods only).
pub fn fit_calibrator(
    config: &ExperimentConfig,
    model: &ModelSpec,
    statistic: &Statistic,
    method: Method,
    set: Option<&SimulatedSet>,
    seed: u64,
) -> Result<(Calibrator, Option<TuneResult>)> {
    let need = || set.ok_or_else(|| Error::InvalidParameter(format!("method `{method}` needs a simulated set")));
    match method {
        Method::Trust => {
            let cal = TrustCalibrator::fit(need()?, model, &config.tree, config.split)?;
            let sizes: Vec<usize> = cal.leaf_values().iter().map(Vec::len).collect();
            log::info!("TRUST tree: {} leaves, calibration records per leaf {sizes:?}", sizes.len());
            Ok((Calibrator::Trust(cal), None))
        }
        Method::Trustpp | Method::TrustppTuned => {
            let forest = TrustPpCalibrator::fit(need()?, model, &config.forest.params(), config.split, seed)?;
            let leaves: usize = forest.trees().iter().map(|t| t.n_leaves()).sum();
            log::info!(
                "TRUST++ forest: {} trees, {:.1} leaves per tree on average",
                forest.n_trees(),
                leaves as f64 / forest.n_trees() as f64
            );
            let (cal, tune) = trustpp_from_forest(forest, method, model, statistic, config, seed)?;
            Ok((Calibrator::TrustPp(cal), tune))
        }
        Method::Mc => Ok((
            Calibrator::Mc(McCalibrator::fit(statistic, config.n, config.b, config.mc.n_mc, seed)?),
            None,
        )),
        Method::Asymptotic | Method::Oracle => Err(Error::InvalidParameter(format!(
            "method `{method}` has no fitted calibrator"
        ))),
    }
}

/// Fits `method` and writes the bundle to `<out>/bundle`. The simulated set
/// is read from `set_path`, or simulated from the master seed when absent.
pub fn run_fit(config: &ExperimentConfig, method: Method, set_path: Option<&Path>) -> Result<(PathBuf, Bundle)> {
    let (model, statistic) = config.build()?;
    let set = if needs_set(method) {
        Some(match set_path {
            Some(p) => io::read_simulated_set(p, &model, config.n)?,
            None => SimulatedSet::simulate(&statistic, config.n, config.b, config.seed)?,
        })
    } else {
        None
    };
    let b = set.as_ref().map_or(config.b, SimulatedSet::len);
    let (cal, tune) = fit_calibrator(config, &model, &statistic, method, set.as_ref(), config.seed)?;
    let bundle = Bundle::new(
        cal,
        &model,
        statistic.kind(),
        statistic.engine(),
        config.n,
        b,
        config.seed,
        config.split,
        tune,
    );
    let dir = config.out.join(BUNDLE_DIR);
    bundle.save(&dir)?;
    log::info!("wrote bundle to {}", dir.display());
    Ok((dir, bundle))
}

/// Confidence-set grid: `per_dim` points along each parameter of interest,
/// nuisance coordinates at the box midpoint (the statistic ignores them).
pub fn confset_grid(model: &ModelSpec, per_dim: usize) -> Vec<Vec<f64>> {
    let mid = model.bounds.midpoint();
    let mut out = vec![mid];
    for &d in &model.interest {
        let axis = axis_nodes(model.bounds.lower[d], model.bounds.upper[d], per_dim.max(1));
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q[d] = v;
                    q
                })
            })
            .collect();
    }
    out
}

/// Cutoffs of a calibrator on `grid`, handling nuisance parameters.
pub fn calibrator_cutoffs(
    cal: &dyn LocalCalibration,
    model: &ModelSpec,
    grid: &[Vec<f64>],
    alpha: f64,
    config: &ExperimentConfig,
) -> Result<(CalibratedCutoffs, Option<NuisanceGrid>)> {
    let ng = nuisance_grid(cal, model, config)?;
    let cutoffs = compute_cutoffs(cal, grid, alpha, ng.as_ref())?;
    Ok((cutoffs, ng))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfsetSummary {
    pub method: Method,
    pub alpha: f64,
    pub beta: f64,
    pub grid_points: usize,
    pub members: usize,
    pub inside: usize,
    pub outside: usize,
    pub undetermined: usize,
    /// Member runs along the parameter of interest (one-parameter sets).
    pub intervals: Option<Vec<(f64, f64)>>,
}

/// Confidence set and three-way labels for observed data; writes
/// `<out>/confset.csv` and `<out>/confset.json`.
pub fn run_confset(config: &ExperimentConfig, bundle_dir: &Path, x_path: &Path) -> Result<(ConfidenceReport, ConfsetSummary)> {
    let (model, statistic) = config.build()?;
    let bundle = Bundle::load(bundle_dir)?;
    bundle.check_compatible(&model, statistic.kind(), statistic.engine())?;
    let x = io::read_observations(x_path, &model)?;
    let cal = bundle.calibrator.as_local();
    let grid = confset_grid(&model, config.confset.per_dim);
    let (cutoffs, ng) = calibrator_cutoffs(cal, &model, &grid, config.alpha, config)?;
    let mut report = confidence_set(&cutoffs, &statistic, &x)?;
    let cis = cutoff_cis(cal, &grid, cutoffs.argmin_nuisance.as_deref(), ng.as_ref(), config.alpha, config.beta)?;
    three_way(&mut report, &cis)?;

    let mut header: Vec<String> = (0..model.dim()).map(|k| format!("theta_{k}")).collect();
    header.extend(["tau", "cutoff", "m", "member", "ci_lower", "ci_upper", "label"].map(String::from));
    let labels = report.labels.clone().unwrap_or_default();
    let rows = (0..grid.len()).map(|i| {
        let mut row: Vec<String> = grid[i].iter().map(|&v| io::format_value(v)).collect();
        row.push(io::format_value(report.tau[i]));
        row.push(io::format_value(report.cutoff[i]));
        row.push(report.m[i].to_string());
        row.push(report.member[i].to_string());
        match &cis[i] {
            Some(ci) => {
                row.push(io::format_value(ci.lower));
                row.push(io::format_value(ci.upper));
            }
            None => row.extend([String::new(), String::new()]),
        }
        row.push(labels[i].to_string());
        row
    });
    io::write_table(&config.out.join(CONFSET_FILE), &header, rows)?;

    let count = |l| labels.iter().filter(|&&x| x == l).count();
    let summary = ConfsetSummary {
        method: cal.method(),
        alpha: config.alpha,
        beta: config.beta,
        grid_points: grid.len(),
        members: report.size(),
        inside: count(crate::calibration::Label::In),
        outside: count(crate::calibration::Label::Out),
        undetermined: count(crate::calibration::Label::Undetermined),
        intervals: (model.interest.len() == 1).then(|| report.intervals_along(model.interest[0])),
    };
    io::write_json(&config.out.join("confset.json"), &summary)?;
    Ok((report, summary))
}

/// p-value of `theta0` for observed data. With nuisance parameters it is
/// the largest local p-value over the nuisance grid at `theta0`'s
/// parameters of interest.
pub fn run_pvalue(config: &ExperimentConfig, bundle_dir: &Path, x_path: &Path, theta0: &[f64]) -> Result<f64> {
    let (model, statistic) = config.build()?;
    let bundle = Bundle::load(bundle_dir)?;
    bundle.check_compatible(&model, statistic.kind(), statistic.engine())?;
    if theta0.len() != model.dim() {
        return Err(Error::InvalidParameter(format!(
            "theta0 needs {} coordinates, got {}",
            model.dim(),
            theta0.len()
        )));
    }
    model.check_theta(theta0)?;
    let x = io::read_observations(x_path, &model)?;
    let cal = bundle.calibrator.as_local();
    match nuisance_grid(cal, &model, config)? {
        Some(ng) => nuisance_p_value(cal, &statistic, &x, theta0, &ng),
        None => p_value(cal, &statistic, &x, theta0),
    }
}

/// Fits a forest on the simulated set, tunes `M` and writes
/// `<out>/tune.json`.
pub fn run_tune(config: &ExperimentConfig, set_path: Option<&Path>) -> Result<TuneResult> {
    let (model, statistic) = config.build()?;
    let set = match set_path {
        Some(p) => io::read_simulated_set(p, &model, config.n)?,
        None => SimulatedSet::simulate(&statistic, config.n, config.b, config.seed)?,
    };
    let forest = TrustPpCalibrator::fit(&set, &model, &config.forest.params(), config.split, config.seed)?;
    let ng = forest_nuisance_grid(&forest, &model, config)?;
    let result = tune_m(&forest, &statistic, config.n, config.alpha, &config.tune, ng.as_ref(), config.seed)?;
    io::write_json(&config.out.join("tune.json"), &result)?;
    Ok(result)
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub results: Vec<ExperimentResult>,
    pub summary: Vec<SummaryRow>,
    /// Coverage per (replicate, method).
    pub coverage: Vec<(usize, CoverageTable)>,
}

struct Cell<'a> {
    config: &'a ExperimentConfig,
    model: &'a ModelSpec,
    statistic: &'a Statistic,
    grid: &'a [Vec<f64>],
}

impl Cell<'_> {
    fn result(&self, method: Method, replicate: usize) -> ExperimentResult {
        ExperimentResult {
            model: self.model.name.clone(),
            statistic: self.statistic.kind().name().into(),
            n: self.config.n,
            b: self.config.b,
            method: method.name().into(),
            replicate,
            mae: None,
            d_alpha: None,
            m: None,
            wall_time_s: 0.0,
            error: None,
        }
    }

    fn cutoffs(
        &self,
        method: Method,
        set: Option<&SimulatedSet>,
        forest: &mut Option<Result<Forest>>,
        oracle: Option<&CalibratedCutoffs>,
        seed: u64,
    ) -> Result<(CalibratedCutoffs, Option<usize>)> {
        let config = self.config;
        match method {
            Method::Asymptotic => {
                let c = asymptotic_cutoff(self.statistic.kind(), config.alpha, config.n, self.model.interest.len())?;
                Ok((
                    CalibratedCutoffs {
                        method,
                        alpha: config.alpha,
                        grid: self.grid.to_vec(),
                        cutoff: vec![c; self.grid.len()],
                        m: vec![0; self.grid.len()],
                        argmin_nuisance: None,
                    },
                    None,
                ))
            }
            Method::Oracle => oracle
                .cloned()
                .map(|c| (c, None))
                .ok_or_else(|| Error::InvalidParameter("oracle cutoffs were not computed".into())),
            Method::Trustpp | Method::TrustppTuned => {
                let set = set.ok_or(Error::EmptyTrainingSet)?;
                // both TRUST++ variants share one forest per replicate
                let fitted = forest.get_or_insert_with(|| {
                    TrustPpCalibrator::fit(set, self.model, &config.forest.params(), config.split, derive_seed(seed, &[stage::BOOTSTRAP]))
                });
                let f = match fitted {
                    Ok(f) => f.clone(),
                    Err(e) => return Err(Error::InvalidParameter(format!("forest fit failed: {e}"))),
                };
                let (cal, _) = trustpp_from_forest(f, method, self.model, self.statistic, config, derive_seed(seed, &[stage::TUNE_GRID]))?;
                let (cutoffs, _) = calibrator_cutoffs(&cal, self.model, self.grid, config.alpha, config)?;
                Ok((cutoffs, Some(cal.m())))
            }
            Method::Trust | Method::Mc => {
                let (cal, _) = fit_calibrator(config, self.model, self.statistic, method, set, derive_seed(seed, &[stage::MC]))?;
                let (cutoffs, _) = calibrator_cutoffs(cal.as_local(), self.model, self.grid, config.alpha, config)?;
                Ok((cutoffs, None))
            }
        }
    }
}

/// Runs every configured method on `replicates` independent calibration
/// sets, sharing one coverage sample per replicate across methods, and
/// writes `results.csv`, `results.json`, `coverage.csv`, `summary.csv` and
/// `summary.txt` under `<out>`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let out = run_experiment_in_memory(config)?;
    write_experiment(config, &out)?;
    Ok(out)
}

/// [`run_experiment`] without writing files.
pub fn run_experiment_in_memory(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let (model, statistic) = config.build()?;
    let grid = config.eval.grid_for(&model).points(&model, config.seed)?;
    let cell = Cell {
        config,
        model: &model,
        statistic: &statistic,
        grid: &grid,
    };
    let want_oracle = config.eval.d_alpha || config.methods.contains(&Method::Oracle);
    let oracle = if want_oracle {
        let t = Instant::now();
        let c = oracle_cutoffs(
            &statistic,
            &grid,
            config.n,
            config.alpha,
            config.oracle.n_oracle,
            &config.oracle.nuisance,
            derive_seed(config.seed, &[stage::ORACLE]),
        )?;
        log::info!("oracle cutoffs on {} points in {:.1}s", grid.len(), t.elapsed().as_secs_f64());
        Some(c)
    } else {
        None
    };

    let mut results = Vec::new();
    let mut coverage = Vec::new();
    for r in 0..config.replicates {
        let seed_r = derive_seed(config.seed, &[stage::REPLICATE, r as u64]);
        let t = Instant::now();
        let sample = CoverageSample::simulate(
            &statistic,
            &grid,
            config.n,
            config.eval.n_sim,
            derive_seed(seed_r, &[stage::COVERAGE]),
        );
        let set = if config.methods.iter().any(|&m| needs_set(m)) {
            Some(SimulatedSet::simulate(
                &statistic,
                config.n,
                config.b,
                derive_seed(seed_r, &[stage::SIMULATE]),
            ))
        } else {
            None
        };
        log::info!("replicate {r}: simulations in {:.1}s", t.elapsed().as_secs_f64());
        let oracle_table = match (&oracle, &sample) {
            (Some(o), Ok(s)) => Some(coverage_from_sample(o, s)?),
            _ => None,
        };
        let mut forest = None;
        for &method in &config.methods {
            let mut row = cell.result(method, r);
            let t = Instant::now();
            let outcome = (|| -> Result<(CoverageTable, Option<usize>)> {
                let sample = sample.as_ref().map_err(|e| Error::InvalidParameter(e.to_string()))?;
                let set = match &set {
                    Some(Ok(s)) => Some(s),
                    Some(Err(e)) if needs_set(method) => return Err(Error::InvalidParameter(e.to_string())),
                    _ => None,
                };
                let (cutoffs, m) = cell.cutoffs(method, set, &mut forest, oracle.as_ref(), seed_r)?;
                Ok((coverage_from_sample(&cutoffs, sample)?, m))
            })();
            row.wall_time_s = t.elapsed().as_secs_f64();
            match outcome {
                Ok((table, m)) => {
                    row.mae = Some(mae(&table, config.alpha)?);
                    row.d_alpha = oracle_table.as_ref().map(|o| oracle_deviation(&table, o)).transpose()?;
                    row.m = m;
                    log::info!(
                        "replicate {r} {method}: MAE {:.4}{} ({:.1}s)",
                        row.mae.unwrap_or(f64::NAN),
                        row.d_alpha.map_or(String::new(), |d| format!(", d_alpha {d:.4}")),
                        row.wall_time_s
                    );
                    coverage.push((r, table));
                }
                Err(e) => {
                    log::warn!("replicate {r} {method} failed: {e}");
                    row.error = Some(e.to_string());
                }
            }
            results.push(row);
        }
    }
    let summary = replicate_summary(&results);
    Ok(ExperimentOutput {
        results,
        summary,
        coverage,
    })
}

fn write_experiment(config: &ExperimentConfig, out: &ExperimentOutput) -> Result<()> {
    let dir = &config.out;
    io::write_records(&dir.join(RESULTS_FILE), &out.results)?;
    io::write_json(&dir.join("results.json"), &out.results)?;
    io::write_records(&dir.join("summary.csv"), &out.summary)?;
    let text = render_summary(&out.summary);
    std::fs::write(dir.join("summary.txt"), &text).map_err(|e| Error::io(dir.join("summary.txt"), e))?;
    let d = out.coverage.first().map_or(0, |(_, t)| t.grid.first().map_or(0, Vec::len));
    let mut header = vec!["replicate".to_string(), "method".to_string()];
    header.extend((0..d).map(|k| format!("theta_{k}")));
    header.push("coverage".into());
    let rows = out.coverage.iter().flat_map(|(r, table)| {
        table.grid.iter().zip(&table.coverage).map(move |(theta, c)| {
            let mut row = vec![r.to_string(), table.method.name().to_string()];
            row.extend(theta.iter().map(|&v| io::format_value(v)));
            row.push(io::format_value(*c));
            row
        })
    });
    io::write_table(&dir.join("coverage.csv"), &header, rows)
}

/// Plain-text table of summary rows; `*` marks the best methods per cell.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<10} {:<10} {:>5} {:>7} {:<14} {:<8} {:>10} {:>10} {:>5} {:>5}  best\n",
        "model", "statistic", "n", "B", "method", "metric", "mean", "se", "reps", "fail"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:<10} {:>5} {:>7} {:<14} {:<8} {:>10.5} {:>10.5} {:>5} {:>5}  {}\n",
            r.model,
            r.statistic,
            r.n,
            r.b,
            r.method,
            r.metric,
            r.mean,
            r.se,
            r.replicates,
            r.failures,
            if r.best { "*" } else { "" }
        ));
    }
    out
}

/// Summarizes a results file.
pub fn run_summary(results_path: &Path) -> Result<(Vec<SummaryRow>, String)> {
    let results: Vec<ExperimentResult> = io::read_records(results_path)?;
    let rows = replicate_summary(&results);
    let text = render_summary(&rows);
    Ok((rows, text))
}
