use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trustcal::calibration::Method;
use trustcal::harness::runs;
use trustcal::harness::ExperimentConfig;

/// Calibrated confidence sets from simulations: tree-partition (TRUST) and
/// forest-proximity (TRUST++) cutoffs, with baselines and coverage
/// diagnostics.
#[derive(Debug, Parser)]
#[command(name = "trustcal", version)]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration file (defaults apply to missing keys).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Calibration method(s), comma separated: trust, trustpp,
    /// trustpp-tuned, mc, asymptotic, oracle.
    #[arg(long, global = true, value_name = "NAME", value_delimiter = ',')]
    method: Option<Vec<Method>>,

    /// Miscoverage level of the confidence sets.
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Miscoverage level of the cutoff confidence intervals.
    #[arg(long, global = true)]
    beta: Option<f64>,

    /// Fit on the first half of the simulations and calibrate on the
    /// second half.
    #[arg(long, global = true)]
    split: bool,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the calibration set to <out>/simulated.csv.
    Simulate,
    /// Fit a calibrator and write it to <out>/bundle.
    Fit {
        /// Simulated set (simulated from the seed when omitted).
        #[arg(long, value_name = "PATH")]
        set: Option<PathBuf>,
    },
    /// Confidence set with three-way labels for observed data.
    Confset {
        #[arg(long, value_name = "DIR")]
        bundle: PathBuf,
        /// Observations, one row per observation with columns x_0, x_1, ...
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
    /// p-value of one parameter value for observed data.
    Pvalue {
        #[arg(long, value_name = "DIR")]
        bundle: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Full parameter vector, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta0: Vec<f64>,
    },
    /// Tune the TRUST++ proximity threshold M.
    TuneM {
        #[arg(long, value_name = "PATH")]
        set: Option<PathBuf>,
    },
    /// Replicated coverage experiment over the configured methods.
    Experiment,
    /// Summarize an experiment's results file.
    Summary {
        #[arg(long, value_name = "PATH")]
        results: PathBuf,
    },
}

fn load_config(g: &Global) -> trustcal::Result<ExperimentConfig> {
    let mut config = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(out) = &g.out {
        config.out = out.clone();
    }
    if let Some(methods) = &g.method {
        config.methods = methods.clone();
    }
    if let Some(alpha) = g.alpha {
        config.alpha = alpha;
    }
    if let Some(beta) = g.beta {
        config.beta = beta;
    }
    config.split |= g.split;
    config.validate()?;
    Ok(config)
}

fn run(command: Command, config: &ExperimentConfig) -> trustcal::Result<()> {
    match command {
        Command::Simulate => {
            let (path, set) = runs::run_simulate(config)?;
            println!("{} simulations written to {}", set.len(), path.display());
        }
        Command::Fit { set } => {
            let (dir, bundle) = runs::run_fit(config, config.methods[0], set.as_deref())?;
            println!("{} bundle written to {}", bundle.meta.method, dir.display());
            if let Some(k) = bundle.meta.n_trees {
                println!("trees: {k}, M: {}", bundle.meta.m.unwrap_or(0));
            }
        }
        Command::Confset { bundle, data } => {
            let (_, summary) = runs::run_confset(config, &bundle, &data)?;
            println!(
                "{} of {} grid points in the set (IN {}, OUT {}, UNDETERMINED {})",
                summary.members, summary.grid_points, summary.inside, summary.outside, summary.undetermined
            );
            for (lo, hi) in summary.intervals.iter().flatten() {
                println!("[{lo}, {hi}]");
            }
        }
        Command::Pvalue { bundle, data, theta0 } => {
            println!("{}", runs::run_pvalue(config, &bundle, &data, &theta0)?);
        }
        Command::TuneM { set } => {
            let result = runs::run_tune(config, set.as_deref())?;
            for (m, mae) in &result.table {
                println!("M = {m:>4}  MAE = {mae:.5}");
            }
            println!("selected M = {}", result.m);
        }
        Command::Experiment => {
            let out = runs::run_experiment(config)?;
            print!("{}", runs::render_summary(&out.summary));
        }
        Command::Summary { results } => {
            let (_, text) = runs::run_summary(&results)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let config = match load_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(jobs) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
