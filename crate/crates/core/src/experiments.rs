//! End-to-end experiments: the Legendre benchmark, complexity-matched
//! baselines and recovery of known additive structure.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{mean_similarity_to_medoid, medoid_model, summarize_ensemble, support_label, EnsembleSummary, FunctionSet};
use crate::datagen::{generate_additive_dataset, generate_legendre_dataset, GeneratedDataset, GeneratorSpec};
use crate::dataset::Dataset;
use crate::error::{PradaError, Result};
use crate::extraction::{extract, group_nodes, split_linear_terms, ExtractOptions, ExtractionReport};
use crate::io::{write_json, ModelFile};
use crate::lambda_path::{auto_lambda_grid, run_lambda_path, select_lambda, AutoGridOptions, LambdaPathTable, TRAIN_FRACTION};
use crate::network::NetworkParams;
use crate::pipeline::{dgr_from_starts, smooth_starts, train_from_starts, SmoothStart, TrainConfig};

/// SplitMix64 finalizer over `(master, stream, index)`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_PATH: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Prada,
    Lasso,
    Dgr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Prada => "prada",
            Method::Lasso => "lasso",
            Method::Dgr => "dgr",
        }
    }
}

/// Complexity statistic a baseline is matched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Nonzero penalized weights of live nodes; baseline is the uniform lasso.
    ParamCount,
    /// Number of node groups; baseline is the uniform lasso.
    FunctionCount,
    /// Live hidden nodes; baseline is the node-gate lasso.
    NodeCount,
}

/// The matched statistic of a network. Function counts use plain node grouping.
pub fn complexity_statistic(mode: MatchMode, params: &NetworkParams) -> usize {
    match mode {
        MatchMode::ParamCount => params.zero_dead_nodes().count_nonzero_weights(),
        MatchMode::FunctionCount => group_nodes(params).len(),
        MatchMode::NodeCount => params.live_nodes().len(),
    }
}

/// Like [`complexity_statistic`], but counts functions after extraction with
/// `options` on `data`, so linear splitting is taken into account.
pub fn extracted_statistic(mode: MatchMode, params: &NetworkParams, data: &Dataset, options: &ExtractOptions) -> Result<usize> {
    match (mode, options.sigma2_max) {
        (MatchMode::FunctionCount, Some(s)) => {
            let cleaned = params.zero_dead_nodes();
            Ok(split_linear_terms(&group_nodes(&cleaned), &cleaned, data, s)?.0.len())
        }
        _ => Ok(complexity_statistic(mode, params)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mode: MatchMode,
    pub lambda: f64,
    pub target: usize,
    pub achieved: usize,
    /// Every `(λ, statistic)` evaluated, in evaluation order.
    pub trace: Vec<(f64, usize)>,
}

impl Calibration {
    /// True iff the statistic never increases with λ over the trace (ties allowed).
    pub fn is_monotone(&self) -> bool {
        let mut t = self.trace.clone();
        t.sort_by(|a, b| a.0.total_cmp(&b.0));
        t.windows(2).all(|w| w[1].1 <= w[0].1)
    }

    pub fn mismatch(&self) -> usize {
        self.achieved.abs_diff(self.target)
    }
}

/// Baseline network fitted at the calibrated strength.
#[derive(Debug, Clone)]
pub struct MatchedFit {
    /// For the gate baseline, gates are multiplied into the output weights.
    pub params: NetworkParams,
    pub test_mse: f64,
    pub train_mse: f64,
    pub calibration: Calibration,
}

/// Bisection steps in log λ after bracketing.
pub const CALIBRATION_STEPS: usize = 6;

fn baseline_fit(
    mode: MatchMode,
    lambda: f64,
    starts: &[SmoothStart],
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, f64, f64)> {
    let c = TrainConfig { lambda, ..cfg.clone() };
    match mode {
        MatchMode::NodeCount => {
            let out = dgr_from_starts(starts, train, test, &c)?;
            Ok((out.params.effective(), out.test_mse, out.train_mse))
        }
        MatchMode::ParamCount | MatchMode::FunctionCount => {
            let c = TrainConfig { gamma: 0.0, ..c };
            let out = train_from_starts(starts, train, test, &c)?;
            Ok((out.params, out.test_mse, out.train_mse))
        }
    }
}

/// Finds the baseline penalty whose complexity statistic matches the reference.
///
/// Brackets the target by factors of 10 from `initial_lambda`, then bisects in
/// log λ. Returns the closest fit seen; a warning is logged when the match is
/// not exact.
pub fn calibrate_matched_baseline(
    reference: &NetworkParams,
    mode: MatchMode,
    starts: &[SmoothStart],
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    initial_lambda: f64,
) -> Result<MatchedFit> {
    calibrate_with_statistic(reference, mode, starts, train, test, cfg, initial_lambda, &|p| {
        Ok(complexity_statistic(mode, p))
    })
}

/// [`calibrate_matched_baseline`] with a caller-supplied statistic.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_with_statistic(
    reference: &NetworkParams,
    mode: MatchMode,
    starts: &[SmoothStart],
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    initial_lambda: f64,
    statistic: &(dyn Fn(&NetworkParams) -> Result<usize> + Sync),
) -> Result<MatchedFit> {
    if !(initial_lambda > 0.0) {
        return Err(PradaError::InvalidConfig("initial lambda must be > 0".into()));
    }
    let target = statistic(reference)?;
    let mut trace = Vec::new();
    let mut best: Option<(usize, f64, (NetworkParams, f64, f64))> = None;
    let mut eval = |lambda: f64| -> Result<usize> {
        let fit = baseline_fit(mode, lambda, starts, train, test, cfg)?;
        let stat = statistic(&fit.0)?;
        trace.push((lambda, stat));
        let gap = stat.abs_diff(target);
        if best.as_ref().is_none_or(|b| gap < b.0) {
            best = Some((gap, lambda, fit));
        }
        Ok(stat)
    };

    let (mut lo, mut hi) = (initial_lambda, initial_lambda);
    let s = eval(initial_lambda)?;
    if s != target {
        if s > target {
            loop {
                lo = hi;
                hi *= 10.0;
                let s = eval(hi)?;
                if s <= target || hi > 1e4 {
                    break;
                }
            }
        } else {
            loop {
                hi = lo;
                lo /= 10.0;
                let s = eval(lo)?;
                if s >= target || lo < 1e-9 {
                    break;
                }
            }
        }
        for _ in 0..CALIBRATION_STEPS {
            let mid = (lo * hi).sqrt();
            let s = eval(mid)?;
            if s == target {
                break;
            }
            if s > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let (gap, lambda, (params, test_mse, train_mse)) = best.expect("at least one evaluation");
    let achieved = statistic(&params)?;
    if gap != 0 {
        warn!("baseline calibration ({mode:?}): target {target}, closest {achieved} at lambda {lambda:e}");
    }
    Ok(MatchedFit {
        params,
        test_mse,
        train_mse,
        calibration: Calibration {
            mode,
            lambda,
            target,
            achieved,
            trace,
        },
    })
}

/// How the shared penalty strength is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed { lambda: f64 },
    /// Path over the given grid (automatic grid when `None`) on one extra dataset.
    Path { grid: Option<Vec<f64>>, n_splits: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n_runs: usize,
    pub n_samples: usize,
    pub dim: usize,
    pub noise_sd: f64,
    pub train: TrainConfig,
    pub lambda: LambdaChoice,
    pub master_seed: u64,
    /// Linear-split threshold used in extraction; `None` disables it.
    pub sigma2_max: Option<f64>,
    /// Baselines trained per run next to the adaptive lasso.
    pub baselines: Vec<Method>,
}

impl BenchmarkConfig {
    /// Full-scale settings: 50 runs, 50 hidden units, both baselines.
    pub fn full() -> Self {
        Self {
            n_runs: 50,
            n_samples: 1000,
            dim: 5,
            noise_sd: 0.1,
            train: TrainConfig::default(),
            lambda: LambdaChoice::Path { grid: None, n_splits: 20 },
            master_seed: 0,
            sigma2_max: None,
            baselines: vec![Method::Lasso, Method::Dgr],
        }
    }

    /// Desk-scale settings: 10 runs, 30 hidden units, no baselines.
    pub fn quick() -> Self {
        Self {
            n_runs: 10,
            train: TrainConfig {
                hidden_units: 30,
                n_restarts: 2,
                ..TrainConfig::default()
            },
            lambda: LambdaChoice::Path {
                grid: Some(vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1]),
                n_splits: 3,
            },
            baselines: vec![],
            ..Self::full()
        }
    }
}

/// Per-run, per-method record; everything aggregates are computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub run: usize,
    pub method: Method,
    pub data_seed: u64,
    pub lambda: f64,
    /// Test MSE on the standardized response.
    pub test_mse: f64,
    pub train_mse: f64,
    /// Saliency importance on the test set, standardized scale.
    pub importance: Vec<f64>,
    pub functions: FunctionSet,
    pub calibration: Option<Calibration>,
}

/// A run record with the model and extraction it came from.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub record: RunRecord,
    pub model: ModelFile,
    pub report: ExtractionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub name: String,
    pub column_names: Vec<String>,
    pub lambda: f64,
    pub path: Option<LambdaPathTable>,
    pub runs: Vec<RunArtifacts>,
    pub failures: Vec<RunFailure>,
    pub true_supports: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub method: Method,
    pub quantity: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

/// Scoring of identified supports against the generator's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScore {
    pub method: Method,
    /// Mean over runs of the fraction of true supports identified.
    pub mean_recall: f64,
    /// Mean over runs of the number of identified supports not in the truth.
    pub mean_false_positives: f64,
    /// Presence of each true support across runs.
    pub true_presence: Vec<f64>,
    pub medoid_run: usize,
    pub medoid_true_found: usize,
    pub medoid_false_positives: usize,
    /// Mean similarity of the other runs to the medoid (medoid excluded).
    pub medoid_similarity: Option<f64>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Mean and sd of test MSE and of each variable importance, per method.
pub fn table1_from_records(records: &[RunRecord], column_names: &[String]) -> Vec<Table1Row> {
    let mut by_method: BTreeMap<Method, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (method, recs) in by_method {
        let n = recs.len();
        let mse: Vec<f64> = recs.iter().map(|r| r.test_mse).collect();
        let (mean, sd) = mean_sd(&mse);
        rows.push(Table1Row { method, quantity: "test_mse".into(), mean, sd, n });
        for (d, name) in column_names.iter().enumerate() {
            let imp: Vec<f64> = recs.iter().map(|r| r.importance[d]).collect();
            let (mean, sd) = mean_sd(&imp);
            rows.push(Table1Row { method, quantity: format!("importance_{name}"), mean, sd, n });
        }
    }
    rows
}

impl ExperimentResult {
    pub fn records(&self, method: Method) -> Vec<&RunRecord> {
        self.runs.iter().map(|r| &r.record).filter(|r| r.method == method).collect()
    }

    pub fn function_sets(&self, method: Method) -> Vec<FunctionSet> {
        self.records(method).into_iter().map(|r| r.functions.clone()).collect()
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.runs.iter().map(|r| r.record.method).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn table1(&self) -> Vec<Table1Row> {
        let recs: Vec<RunRecord> = self.runs.iter().map(|r| r.record.clone()).collect();
        table1_from_records(&recs, &self.column_names)
    }

    pub fn table2(&self) -> Result<Vec<(Method, EnsembleSummary)>> {
        self.methods()
            .into_iter()
            .map(|m| Ok((m, summarize_ensemble(&self.function_sets(m))?)))
            .collect()
    }

    pub fn mean_test_mse(&self, method: Method) -> f64 {
        let v: Vec<f64> = self.records(method).iter().map(|r| r.test_mse).collect();
        mean_sd(&v).0
    }

    pub fn mean_importance(&self, method: Method) -> Vec<f64> {
        let recs = self.records(method);
        (0..self.column_names.len())
            .map(|d| recs.iter().map(|r| r.importance[d]).sum::<f64>() / recs.len() as f64)
            .collect()
    }

    /// Ground-truth scoring per method; `None` without known supports.
    pub fn recovery_scores(&self) -> Result<Option<Vec<RecoveryScore>>> {
        let Some(truth) = &self.true_supports else {
            return Ok(None);
        };
        let truth_set = FunctionSet::from_supports(truth.iter().cloned());
        let score = |f: &FunctionSet| {
            let tp = f.supports().filter(|s| truth_set.contains(s)).count();
            (tp, f.len() - tp)
        };
        let mut out = Vec::new();
        for m in self.methods() {
            let sets = self.function_sets(m);
            let n = sets.len() as f64;
            let (tp_sum, fp_sum) = sets.iter().map(score).fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
            let medoid = medoid_model(&sets)?;
            let (mt, mf) = score(&sets[medoid]);
            out.push(RecoveryScore {
                method: m,
                mean_recall: tp_sum as f64 / (n * truth_set.len() as f64),
                mean_false_positives: fp_sum as f64 / n,
                true_presence: truth_set
                    .supports()
                    .map(|s| sets.iter().filter(|f| f.contains(s)).count() as f64 / n)
                    .collect(),
                medoid_run: self.records(m)[medoid].run,
                medoid_true_found: mt,
                medoid_false_positives: mf,
                medoid_similarity: if sets.len() >= 2 { Some(mean_similarity_to_medoid(&sets)?) } else { None },
            });
        }
        Ok(Some(out))
    }

    /// Mean similarity to the medoid per method (medoid excluded from the mean).
    pub fn medoid_similarities(&self) -> Result<Vec<(Method, f64)>> {
        self.methods()
            .into_iter()
            .filter(|&m| self.records(m).len() >= 2)
            .map(|m| Ok((m, mean_similarity_to_medoid(&self.function_sets(m))?)))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunReportFile {
    record: RunRecord,
    extraction: ExtractionReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SummaryFile {
    name: String,
    lambda: f64,
    n_records: usize,
    failures: Vec<RunFailure>,
    medoid_similarity: Vec<(Method, f64)>,
    recovery: Option<Vec<RecoveryScore>>,
    notes: Vec<String>,
}

/// Writes the results directory:
/// `runs/<id>/{model,report}.json` and `aggregate/{table1,table2,curves}.csv`,
/// plus `aggregate/summary.json` and `aggregate/lambda_path.csv` when a path was run.
pub fn write_results(result: &ExperimentResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let agg = dir.join("aggregate");
    fs::create_dir_all(&agg)?;
    for r in &result.runs {
        let run_dir = dir.join("runs").join(&r.record.run_id);
        fs::create_dir_all(&run_dir)?;
        write_json(run_dir.join("model.json"), &r.model)?;
        write_json(
            run_dir.join("report.json"),
            &RunReportFile {
                record: r.record.clone(),
                extraction: r.report.clone(),
            },
        )?;
    }

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(agg.join("table1.csv"))?));
    w.write_record(["method", "quantity", "mean", "sd", "n"])?;
    for row in result.table1() {
        w.write_record([
            row.method.name().to_string(),
            row.quantity,
            row.mean.to_string(),
            row.sd.to_string(),
            row.n.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(agg.join("table2.csv"))?));
    w.write_record(["method", "support", "presence", "mean_complexity"])?;
    for (m, summary) in result.table2()? {
        for s in &summary.supports {
            w.write_record([
                m.name().to_string(),
                support_label(&s.support, &result.column_names),
                s.presence.to_string(),
                s.mean_complexity.to_string(),
            ])?;
        }
    }
    w.flush()?;

    // curves of each method's medoid run
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(agg.join("curves.csv"))?));
    w.write_record(["method", "run_id", "component", "variable", "x", "value", "fixed_level"])?;
    for m in result.methods() {
        let runs: Vec<&RunArtifacts> = result.runs.iter().filter(|r| r.record.method == m).collect();
        let sets: Vec<FunctionSet> = runs.iter().map(|r| r.record.functions.clone()).collect();
        let medoid = runs[medoid_model(&sets)?];
        for g in &medoid.report.grids {
            let comp = support_label(&medoid.report.components[g.component_id].support, &result.column_names);
            let var = result.column_names.get(g.variable).cloned().unwrap_or_default();
            let level = g.fixed_level.map(|l| l.to_string()).unwrap_or_default();
            for (x, v) in g.x.iter().zip(&g.value) {
                w.write_record([
                    m.name(),
                    &medoid.record.run_id,
                    &comp,
                    &var,
                    &x.to_string(),
                    &v.to_string(),
                    &level,
                ])?;
            }
        }
    }
    w.flush()?;

    if let Some(path) = &result.path {
        path.write_csv(BufWriter::new(File::create(agg.join("lambda_path.csv"))?))?;
    }
    write_json(
        agg.join("summary.json"),
        &SummaryFile {
            name: result.name.clone(),
            lambda: result.lambda,
            n_records: result.runs.len(),
            failures: result.failures.clone(),
            medoid_similarity: result.medoid_similarities()?,
            recovery: result.recovery_scores()?,
            notes: vec![
                "medoid similarity is averaged over the non-medoid runs".into(),
                "lambda path uses uniform random 90/10 splits without replacement".into(),
                "test errors and importances are on the standardized scale".into(),
            ],
        },
    )?;
    Ok(())
}

/// Reads back every per-run record under `dir/runs`, sorted by run id.
pub fn load_run_records(dir: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir.as_ref().join("runs"))? {
        let path = entry?.path().join("report.json");
        let f: RunReportFile = crate::io::read_json(&path)?;
        out.push(f.record);
    }
    out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(out)
}

fn model_file(data: &Dataset, lambda: f64, cfg: &TrainConfig, params: NetworkParams, test_mse: f64) -> ModelFile {
    ModelFile {
        column_names: data.column_names.clone(),
        response_name: data.response_name.clone(),
        standardization_stats: data.stats.clone(),
        lambda,
        config: TrainConfig { lambda, ..cfg.clone() },
        params,
        test_mse: Some(test_mse),
    }
}

/// Everything shared by the per-run drivers.
struct RunPlan<'a> {
    lambda: f64,
    train: &'a TrainConfig,
    master_seed: u64,
    extract: ExtractOptions,
    baselines: Vec<(Method, MatchMode)>,
}

fn run_one(plan: &RunPlan<'_>, run: usize, generated: GeneratedDataset, data_seed: u64) -> Result<Vec<RunArtifacts>> {
    let data = generated.data;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.master_seed, STREAM_SPLIT, run as u64));
    let (train, test) = data.split(TRAIN_FRACTION, &mut rng)?;
    let cfg = TrainConfig {
        lambda: plan.lambda,
        rng_seed: derive_seed(plan.master_seed, STREAM_TRAIN, run as u64),
        ..plan.train.clone()
    };
    let starts = smooth_starts(&train, &cfg)?;
    let prada = train_from_starts(&starts, &train, &test, &cfg)?;

    let mut out = Vec::new();
    let mut push = |method: Method, params: NetworkParams, test_mse: f64, train_mse: f64, lambda: f64, calibration: Option<Calibration>| -> Result<()> {
        let report = extract(&params, &test, &plan.extract)?;
        let record = RunRecord {
            run_id: format!("{}-{:03}", method.name(), run),
            run,
            method,
            data_seed,
            lambda,
            test_mse,
            train_mse,
            importance: report.importance.clone(),
            functions: FunctionSet::from_components(&report.components),
            calibration,
        };
        out.push(RunArtifacts {
            model: model_file(&data, lambda, &cfg, params, test_mse),
            record,
            report,
        });
        Ok(())
    };
    push(Method::Prada, prada.params.clone(), prada.test_mse, prada.train_mse, plan.lambda, None)?;
    for &(method, mode) in &plan.baselines {
        let stat = |p: &NetworkParams| extracted_statistic(mode, p, &test, &plan.extract);
        let fit = calibrate_with_statistic(&prada.params, mode, &starts, &train, &test, &cfg, plan.lambda, &stat)?;
        let lambda = fit.calibration.lambda;
        push(method, fit.params, fit.test_mse, fit.train_mse, lambda, Some(fit.calibration))?;
    }
    info!("run {run} done");
    Ok(out)
}

fn collect_runs(results: Vec<(usize, Result<Vec<RunArtifacts>>)>) -> (Vec<RunArtifacts>, Vec<RunFailure>) {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (run, r) in results {
        match r {
            Ok(a) => runs.extend(a),
            Err(e) => {
                warn!("run {run} failed: {e}");
                failures.push(RunFailure { run, message: e.to_string() });
            }
        }
    }
    (runs, failures)
}

fn choose_lambda(choice: &LambdaChoice, path_data: impl FnOnce() -> Result<Dataset>, cfg: &TrainConfig, master_seed: u64) -> Result<(f64, Option<LambdaPathTable>)> {
    match choice {
        LambdaChoice::Fixed { lambda } => Ok((*lambda, None)),
        LambdaChoice::Path { grid, n_splits } => {
            let data = path_data()?;
            let cfg = TrainConfig {
                rng_seed: derive_seed(master_seed, STREAM_PATH, 1),
                ..cfg.clone()
            };
            let grid = match grid {
                Some(g) => g.clone(),
                None => auto_lambda_grid(&data, &cfg, &AutoGridOptions::default())?,
            };
            let table = run_lambda_path(&data, &grid, &cfg, *n_splits)?;
            let lambda = select_lambda(&table)?;
            info!("selected lambda {lambda:e}");
            Ok((lambda, Some(table)))
        }
    }
}

/// Legendre benchmark: fresh data per run, adaptive lasso at λ* and optional
/// complexity-matched baselines on the same splits and smooth starts.
pub fn run_legendre_benchmark(cfg: &BenchmarkConfig) -> Result<ExperimentResult> {
    cfg.train.validate()?;
    if cfg.n_runs < 1 {
        return Err(PradaError::InvalidConfig("n_runs must be >= 1".into()));
    }
    let (lambda, path) = choose_lambda(
        &cfg.lambda,
        || {
            generate_legendre_dataset(cfg.n_samples, cfg.dim, cfg.noise_sd, derive_seed(cfg.master_seed, STREAM_PATH, 0))
                .map(|g| g.data)
        },
        &cfg.train,
        cfg.master_seed,
    )?;
    let baselines = cfg
        .baselines
        .iter()
        .filter_map(|m| match m {
            Method::Lasso => Some((Method::Lasso, MatchMode::ParamCount)),
            Method::Dgr => Some((Method::Dgr, MatchMode::NodeCount)),
            Method::Prada => None,
        })
        .collect();
    let plan = RunPlan {
        lambda,
        train: &cfg.train,
        master_seed: cfg.master_seed,
        extract: ExtractOptions {
            sigma2_max: cfg.sigma2_max,
            ..ExtractOptions::default()
        },
        baselines,
    };
    let results: Vec<(usize, Result<Vec<RunArtifacts>>)> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.master_seed, STREAM_DATA, r as u64);
            let res = generate_legendre_dataset(cfg.n_samples, cfg.dim, cfg.noise_sd, seed)
                .and_then(|g| run_one(&plan, r, g, seed));
            (r, res)
        })
        .collect();
    let (runs, failures) = collect_runs(results);
    let column_names = (1..=cfg.dim).map(|j| format!("x{j}")).collect();
    Ok(ExperimentResult {
        name: "legendre".into(),
        column_names,
        lambda,
        path,
        runs,
        failures,
        true_supports: Some((0..4).map(|d| vec![d]).collect()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub generator: GeneratorSpec,
    pub n_runs: usize,
    pub train: TrainConfig,
    pub lambda: LambdaChoice,
    pub master_seed: u64,
    pub sigma2_max: Option<f64>,
    /// Statistic the uniform-lasso baseline is matched on.
    pub match_mode: MatchMode,
}

impl RecoveryConfig {
    /// Full-scale settings: 50 runs of the six-component generator, 100 hidden units.
    pub fn full() -> Self {
        Self {
            generator: GeneratorSpec::six_component(1000, 0.1),
            n_runs: 50,
            train: TrainConfig {
                hidden_units: 100,
                ..TrainConfig::default()
            },
            lambda: LambdaChoice::Path { grid: None, n_splits: 20 },
            master_seed: 0,
            sigma2_max: Some(0.01),
            match_mode: MatchMode::FunctionCount,
        }
    }

    /// Desk-scale settings: 10 runs, 30 hidden units, one restart, fixed λ.
    pub fn quick() -> Self {
        Self {
            n_runs: 10,
            train: TrainConfig {
                hidden_units: 30,
                n_restarts: 1,
                ..TrainConfig::default()
            },
            lambda: LambdaChoice::Fixed { lambda: 1e-3 },
            master_seed: 1,
            ..Self::full()
        }
    }
}

/// Per run: fresh data from the generator, the adaptive lasso, and a uniform
/// lasso matched to it; identified supports are scored against the generator.
pub fn run_recovery_study(cfg: &RecoveryConfig) -> Result<ExperimentResult> {
    cfg.train.validate()?;
    cfg.generator.validate()?;
    if cfg.n_runs < 1 {
        return Err(PradaError::InvalidConfig("n_runs must be >= 1".into()));
    }
    let (lambda, path) = choose_lambda(
        &cfg.lambda,
        || generate_additive_dataset(&cfg.generator, derive_seed(cfg.master_seed, STREAM_PATH, 0)).map(|g| g.data),
        &cfg.train,
        cfg.master_seed,
    )?;
    let plan = RunPlan {
        lambda,
        train: &cfg.train,
        master_seed: cfg.master_seed,
        extract: ExtractOptions {
            sigma2_max: cfg.sigma2_max,
            ..ExtractOptions::default()
        },
        baselines: vec![(Method::Lasso, cfg.match_mode)],
    };
    let results: Vec<(usize, Result<Vec<RunArtifacts>>)> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.master_seed, STREAM_DATA, r as u64);
            let res = generate_additive_dataset(&cfg.generator, seed).and_then(|g| run_one(&plan, r, g, seed));
            (r, res)
        })
        .collect();
    let (runs, failures) = collect_runs(results);
    let d = cfg.generator.covariates.dim();
    let column_names = cfg
        .generator
        .column_names
        .clone()
        .unwrap_or_else(|| (1..=d).map(|j| format!("x{j}")).collect());
    Ok(ExperimentResult {
        name: "recovery".into(),
        column_names,
        lambda,
        path,
        runs,
        failures,
        true_supports: Some(cfg.generator.true_supports()),
    })
}
