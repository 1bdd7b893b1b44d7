//! Persistence, reproducibility and calibration checks on small trained instances.

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prada::analysis::FunctionSet;
use prada::datagen::generate_legendre_dataset;
use prada::experiments::{
    calibrate_matched_baseline, complexity_statistic, load_run_records, run_legendre_benchmark, table1_from_records,
    write_results, BenchmarkConfig, LambdaChoice, MatchMode, Method,
};
use prada::extraction::{extract, group_nodes, ExtractOptions, ExtractionReport};
use prada::io::{load_model, persist_report, read_json, save_model, write_grids_csv, ModelFile};
use prada::lambda_path::{run_lambda_path, split_seed, TRAIN_FRACTION};
use prada::pipeline::{smooth_starts, train_from_starts, train_prada, TrainConfig};
use prada::{Dataset, NetworkParams};

fn small_cfg() -> TrainConfig {
    TrainConfig {
        hidden_units: 8,
        n_restarts: 1,
        lambda: 1e-3,
        ..TrainConfig::default()
    }
}

fn legendre(n: usize, seed: u64) -> Dataset {
    generate_legendre_dataset(n, 5, 0.1, seed).unwrap().data
}

fn trained(seed: u64) -> (Dataset, NetworkParams, f64) {
    let data = legendre(300, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, test) = data.split(0.9, &mut rng).unwrap();
    let out = train_prada(&train, &test, &TrainConfig { rng_seed: seed, ..small_cfg() }).unwrap();
    (data, out.params, out.test_mse)
}

#[test]
fn model_json_round_trip_predicts_identically() {
    let (data, params, test_mse) = trained(1);
    let model = ModelFile {
        column_names: data.column_names.clone(),
        response_name: data.response_name.clone(),
        standardization_stats: data.stats.clone(),
        lambda: 1e-3,
        config: small_cfg(),
        params,
        test_mse: Some(test_mse),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&path, &model).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        assert_eq!(back.predict_raw(&x).unwrap().to_bits(), model.predict_raw(&x).unwrap().to_bits());
    }
}

#[test]
fn report_round_trip_reproduces_grids() {
    let (data, params, _) = trained(2);
    let report = extract(&params, &data, &ExtractOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    persist_report(&report, dir.path()).unwrap();
    let back: ExtractionReport = read_json(dir.path().join("report.json")).unwrap();
    assert_eq!(back.components, report.components);
    let regrid = back.recompute_grids(&data).unwrap();
    assert_eq!(regrid.len(), report.grids.len());
    for (a, b) in regrid.iter().zip(&report.grids) {
        for (u, v) in a.value.iter().zip(&b.value) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
    }
    // components plus bias reproduce the stored network
    for i in 0..data.n_samples() {
        let x = data.x.row(i).to_vec();
        let linear: f64 = back.components.iter().flat_map(|c| c.linear_terms.iter()).map(|(&d, &s)| s * x[d]).sum();
        assert_abs_diff_eq!(back.predict(&x), back.params.forward(&x).unwrap() + linear, epsilon = 1e-10);
    }
}

#[test]
fn grid_rows_are_components_times_points() {
    // three one-variable components
    let p = NetworkParams::from_parts(
        &[vec![1.0, 0.0, 0.0], vec![0.5, 0.0, 0.0], vec![0.0, -2.0, 0.0], vec![0.0, 0.0, 0.7]],
        &[0.1, -0.2, 0.0, 0.3],
        &[1.0, -0.5, 0.8, 1.2],
        0.4,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = ndarray::Array2::from_shape_fn((50, 3), |_| rng.random_range(-1.5..1.5));
    let data = Dataset::from_standardized(x, ndarray::Array1::zeros(50)).unwrap();
    let mut opts = ExtractOptions { sigma2_max: None, ..ExtractOptions::default() };
    opts.grid.n_points = 17;
    let report = extract(&p, &data, &opts).unwrap();
    assert_eq!(report.components.len(), 3);
    let mut buf = Vec::new();
    write_grids_csv(&mut buf, &report.grids, &report.column_names).unwrap();
    let rows = String::from_utf8(buf).unwrap().lines().count() - 1;
    assert_eq!(rows, 3 * 17);
}

#[test]
fn constant_model_report_has_bias_only() {
    let mut p = NetworkParams::zeros(4, 5).unwrap();
    *p.output_bias_mut() = 0.7;
    let data = legendre(40, 5);
    let report = extract(&p, &data, &ExtractOptions::default()).unwrap();
    assert!(report.components.is_empty() && report.grids.is_empty());
    assert_eq!(report.output_bias, 0.7);
    assert_eq!(report.predict(&[0.3, -0.2, 0.9, 0.0, 1.0]), 0.7);
    assert!(report.importance.iter().all(|&v| v == 0.0));
}

#[test]
fn lambda_path_is_reproducible() {
    let data = legendre(200, 6);
    let cfg = TrainConfig { rng_seed: 4, ..small_cfg() };
    let a = run_lambda_path(&data, &[1e-3, 1e2], &cfg, 2).unwrap();
    let b = run_lambda_path(&data, &[1e2, 1e-3], &cfg, 2).unwrap();
    assert_eq!(a, b);
    // the largest strength prunes everything, leaving the constant predictor
    let constant: f64 = (0..2)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(cfg.rng_seed, s));
            let (train, test) = data.split(TRAIN_FRACTION, &mut rng).unwrap();
            let m = train.y.mean().unwrap();
            test.y.iter().map(|y| (y - m).powi(2)).sum::<f64>() / test.n_samples() as f64
        })
        .sum::<f64>()
        / 2.0;
    assert_abs_diff_eq!(a.mean_test_error[1], constant, epsilon = 0.01 * constant);
    assert!(a.mean_test_error[0] < 0.5 * constant);
}

#[test]
fn calibration_is_monotone_and_anchored_at_zero() {
    let data = legendre(300, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (train, test) = data.split(0.9, &mut rng).unwrap();
    let cfg = small_cfg();
    let starts = smooth_starts(&train, &cfg).unwrap();
    let reference = train_from_starts(&starts, &train, &test, &cfg).unwrap().params;
    let fit = calibrate_matched_baseline(&reference, MatchMode::ParamCount, &starts, &train, &test, &cfg, 1e-3).unwrap();
    assert!(fit.calibration.is_monotone(), "{:?}", fit.calibration.trace);
    assert_eq!(fit.calibration.target, complexity_statistic(MatchMode::ParamCount, &reference));
    assert_eq!(fit.calibration.achieved, complexity_statistic(MatchMode::ParamCount, &fit.params));
    let unpenalized = train_from_starts(&starts, &train, &test, &TrainConfig { lambda: 0.0, gamma: 0.0, ..cfg }).unwrap();
    assert!(complexity_statistic(MatchMode::ParamCount, &unpenalized.params) >= fit.calibration.target);
}

#[test]
fn results_directory_recomputes_aggregates() {
    let cfg = BenchmarkConfig {
        n_runs: 2,
        n_samples: 200,
        train: small_cfg(),
        lambda: LambdaChoice::Fixed { lambda: 1e-3 },
        baselines: vec![Method::Lasso],
        ..BenchmarkConfig::quick()
    };
    let result = run_legendre_benchmark(&cfg).unwrap();
    assert_eq!(result.records(Method::Prada).len(), 2);
    assert_eq!(result.records(Method::Lasso).len(), 2);
    let dir = tempfile::tempdir().unwrap();
    write_results(&result, dir.path()).unwrap();
    let records = load_run_records(dir.path()).unwrap();
    assert_eq!(records.len(), 4);
    assert_eq!(table1_from_records(&records, &result.column_names), result.table1());
    for r in &result.runs {
        let run_dir = dir.path().join("runs").join(&r.record.run_id);
        let model = load_model(run_dir.join("model.json")).unwrap();
        assert_eq!(model.params, r.model.params);
        // the function set derives from the persisted extraction
        assert_eq!(FunctionSet::from_components(&r.report.components), r.record.functions);
        let nonlinear = FunctionSet::from_components(&group_nodes(&r.report.params));
        assert!(nonlinear.supports().all(|s| r.record.functions.contains(s)));
    }
    for f in ["table1.csv", "table2.csv", "curves.csv"] {
        assert!(dir.path().join("aggregate").join(f).exists());
    }
}
