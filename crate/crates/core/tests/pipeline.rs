use std::fs;
use std::path::Path;

use trustcal::calibration::Method;
use trustcal::harness::io::{read_simulated_set, write_observations};
use trustcal::harness::runs::{
    calibrator_cutoffs, confset_grid, run_confset, run_fit, run_pvalue, run_simulate,
};
use trustcal::harness::{Bundle, ExperimentConfig};
use trustcal::{compute_cutoffs, confidence_set, p_value, Error, LocalCalibration, SimulatedSet, TrustCalibrator};

fn config(toml: &str, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml_str(toml).unwrap();
    c.out = out.to_path_buf();
    c.validate().unwrap();
    c
}

const NORMAL_KS: &str = "statistic = \"ks\"\nn = 10\nb = 3000\nseed = 42\n[model]\nname = \"normal\"\n";
const POISSON_LR: &str = "statistic = \"lr\"\nn = 1\nb = 3000\nseed = 5\n[model]\nname = \"poisson\"\n";

#[test]
fn simulated_csv_round_trips_and_tau_matches_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(POISSON_LR, dir.path());
    let (path, set) = run_simulate(&c).unwrap();
    let (model, statistic) = c.build().unwrap();
    let back = read_simulated_set(&path, &model, c.n).unwrap();
    assert_eq!(back, set);
    for ((theta, x), &tau) in back.thetas.iter().zip(&back.data).zip(&back.tau) {
        assert_eq!(statistic.evaluate(x, theta).unwrap(), tau);
    }
}

#[test]
fn bundles_reload_byte_identical() {
    for method in [Method::Trust, Method::Trustpp, Method::Mc] {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(NORMAL_KS, dir.path());
        c.forest.n_trees = 20;
        c.mc.n_mc = 50;
        let (bundle_dir, bundle) = run_fit(&c, method, None).unwrap();
        let loaded = Bundle::load(&bundle_dir).unwrap();
        assert_eq!(loaded.meta, bundle.meta);
        assert_eq!(loaded.blob(), fs::read(bundle_dir.join("bundle.bin")).unwrap());

        let again = dir.path().join("again");
        loaded.save(&again).unwrap();
        for file in ["bundle.json", "bundle.bin"] {
            assert_eq!(
                fs::read(bundle_dir.join(file)).unwrap(),
                fs::read(again.join(file)).unwrap(),
                "{method}: {file} differs after reload"
            );
        }
    }
}

#[test]
fn corrupted_bundle_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(NORMAL_KS, dir.path());
    let (bundle_dir, _) = run_fit(&c, Method::Trust, None).unwrap();
    let blob = bundle_dir.join("bundle.bin");
    let mut bytes = fs::read(&blob).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    fs::write(&blob, bytes).unwrap();
    assert!(matches!(Bundle::load(&bundle_dir), Err(Error::IncompatibleBundle(_))));
}

#[test]
fn same_seed_reproduces_cutoffs() {
    let cutoffs = |seed: u64| {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(NORMAL_KS, dir.path());
        c.seed = seed;
        c.forest.n_trees = 30;
        let (model, _) = c.build().unwrap();
        let (_, bundle) = run_fit(&c, Method::Trustpp, None).unwrap();
        let grid = confset_grid(&model, 50);
        calibrator_cutoffs(bundle.calibrator.as_local(), &model, &grid, 0.05, &c)
            .unwrap()
            .0
            .cutoff
    };
    assert_eq!(cutoffs(1), cutoffs(1));
    assert_ne!(cutoffs(1), cutoffs(2));
}

#[test]
fn p_value_at_least_alpha_exactly_on_the_confidence_set() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(NORMAL_KS, dir.path());
    let (model, statistic) = c.build().unwrap();
    let set = SimulatedSet::simulate(&statistic, c.n, c.b, 3).unwrap();
    let cal = TrustCalibrator::fit(&set, &model, &c.tree, false).unwrap();
    let x = model.simulate(&[1.0], c.n, 99).unwrap();
    let grid = confset_grid(&model, 400);
    for alpha in [0.01, 0.05, 0.2] {
        let cutoffs = compute_cutoffs(&cal, &grid, alpha, None).unwrap();
        let report = confidence_set(&cutoffs, &statistic, &x).unwrap();
        for (theta, &member) in grid.iter().zip(&report.member) {
            let p = p_value(&cal, &statistic, &x, theta).unwrap();
            assert_eq!(member, p >= alpha, "theta {theta:?}, alpha {alpha}, p {p}");
        }
    }
}

#[test]
fn larger_alpha_never_enlarges_the_set() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(NORMAL_KS, dir.path());
    let (model, statistic) = c.build().unwrap();
    let set = SimulatedSet::simulate(&statistic, c.n, c.b, 4).unwrap();
    let cal = TrustCalibrator::fit(&set, &model, &c.tree, false).unwrap();
    let x = model.simulate(&[-2.0], c.n, 7).unwrap();
    let grid = confset_grid(&model, 300);
    let members: Vec<Vec<bool>> = [0.01, 0.05, 0.1, 0.3]
        .iter()
        .map(|&a| confidence_set(&compute_cutoffs(&cal, &grid, a, None).unwrap(), &statistic, &x).unwrap().member)
        .collect();
    for w in members.windows(2) {
        assert!(w[1].iter().zip(&w[0]).all(|(&small, &big)| !small || big));
    }
}

#[test]
fn nuisance_cutoffs_never_exceed_any_local_cutoff_on_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(POISSON_LR, dir.path());
    let (model, statistic) = c.build().unwrap();
    let set = SimulatedSet::simulate(&statistic, c.n, c.b, 8).unwrap();
    let cal = TrustCalibrator::fit(&set, &model, &c.tree, false).unwrap();
    let grid = confset_grid(&model, 40);
    let (cutoffs, ng) = calibrator_cutoffs(&cal, &model, &grid, 0.05, &c).unwrap();
    let ng = ng.expect("poisson has a nuisance parameter");
    for (theta, &cut) in grid.iter().zip(&cutoffs.cutoff) {
        for q in ng.query_points(theta) {
            assert!(cut <= cal.local_ecdf(&q).unwrap().quantile(0.05));
        }
    }
}

#[test]
fn confset_and_pvalue_stages_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(NORMAL_KS, dir.path());
    c.confset.per_dim = 101;
    let (model, _) = c.build().unwrap();
    let (bundle_dir, _) = run_fit(&c, Method::Trust, None).unwrap();
    let x_path = dir.path().join("x.csv");
    write_observations(&x_path, &model.simulate(&[0.5], c.n, 11).unwrap()).unwrap();
    let (report, summary) = run_confset(&c, &bundle_dir, &x_path).unwrap();
    assert_eq!(summary.members, report.size());
    assert_eq!(summary.inside + summary.outside + summary.undetermined, summary.grid_points);
    assert!(dir.path().join("confset.csv").exists());
    for (theta, &member) in report.grid.iter().zip(&report.member).step_by(10) {
        let p = run_pvalue(&c, &bundle_dir, &x_path, theta).unwrap();
        assert_eq!(member, p >= c.alpha);
    }
}
