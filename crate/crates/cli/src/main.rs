//! `prada`: train sparse networks, choose λ, extract additive components, run experiments.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure. Errors
//! are a single line on standard error: `error: command=<cmd> kind=<kind> message=<text>`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use prada::analysis::{mean_similarity_to_medoid, medoid_model, summarize_ensemble, FunctionSet};
use prada::datagen::{generate_additive_dataset, GeneratorSpec};
use prada::experiments::{
    run_legendre_benchmark, run_recovery_study, write_results, BenchmarkConfig, ExperimentResult, LambdaChoice,
    RecoveryConfig,
};
use prada::extraction::{extract, variable_importance, CoInputs, ExtractOptions, ExtractionReport};
use prada::io::{
    ingest_csv, load_config, load_model, persist_report, read_json, save_model, write_dataset_csv,
    write_importance_csv, ModelFile,
};
use prada::lambda_path::{
    auto_lambda_grid, run_lambda_path, select_lambda_with, AutoGridOptions, SelectionRule, TRAIN_FRACTION,
};
use prada::pipeline::{train_prada, TrainConfig};
use prada::{Dataset, ErrorKind, PradaError};

/// Environment variable holding the default worker count.
const THREADS_ENV: &str = "PRADA_THREADS";

#[derive(Parser, Debug)]
#[command(name = "prada", version, about = "Sparse one-hidden-layer networks as additive models")]
struct Cli {
    /// Worker threads (default: $PRADA_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network on a CSV dataset and write model.json.
    Train(TrainArgs),
    /// Sweep λ over repeated splits, write the path table and print λ*.
    Path(PathArgs),
    /// Extract additive components, grids and importance from a model.
    Extract(ExtractArgs),
    /// Write per-variable importance of a model on a dataset.
    Importance(ImportanceArgs),
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Run the Legendre benchmark or the synthetic recovery study.
    Benchmark(BenchmarkArgs),
    /// Compare the supports found by several extraction reports.
    Compare(CompareArgs),
}

/// Training configuration: defaults, then `--config`, then `--set`, then explicit flags.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// File of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set gamma=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> prada::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => TrainConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| PradaError::InvalidConfig(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        if let Some(h) = self.hidden {
            cfg.hidden_units = h;
        }
        if let Some(r) = self.restarts {
            cfg.n_restarts = r;
        }
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// CSV with a header; the last column is the response.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Rule {
    TwoSd,
    OneSe,
}

#[derive(Args, Debug)]
struct PathArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated λ grid; automatic when omitted.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Number of points of the automatic grid.
    #[arg(long, default_value_t = 20)]
    grid_points: usize,
    #[arg(long, default_value_t = 20)]
    splits: usize,
    #[arg(long, value_enum, default_value_t = Rule::TwoSd)]
    rule: Rule,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "lambda_path.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    model: PathBuf,
    /// Data that sets importance, linearity and grid ranges (raw scale, model columns).
    #[arg(long)]
    data: PathBuf,
    /// Derivative-variance threshold below which a variable becomes a linear term.
    #[arg(long, default_value_t = 0.01)]
    sigma2_max: f64,
    /// Keep near-linear variables inside their components.
    #[arg(long)]
    no_linear_split: bool,
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
    /// Average co-inputs of interaction grids over the data instead of fixing them.
    #[arg(long)]
    marginal: bool,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ImportanceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "importance.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Legendre,
    SixComponent,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Sum of the first four Legendre polynomials plus noise columns.
    #[arg(long, conflicts_with_all = ["preset", "generator"])]
    legendre: bool,
    #[arg(long, value_enum, conflicts_with = "generator")]
    preset: Option<Preset>,
    /// Generator specification as JSON.
    #[arg(long)]
    generator: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Number of covariates for the Legendre preset.
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Desk-scale settings (10 runs, fewer hidden units).
    #[arg(long)]
    quick: bool,
    /// Run the six-component recovery study instead of the Legendre benchmark.
    #[arg(long)]
    recovery: bool,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use a fixed λ instead of a path.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Extraction reports (`report.json` files or directories containing one).
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, default_value = "ensemble.csv")]
    out: PathBuf,
}

/// Error tagged with the subcommand it came from.
struct CliError {
    command: &'static str,
    kind: ErrorKind,
    message: String,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Usage => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

fn kind_name(k: ErrorKind) -> &'static str {
    match k {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::from(if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 });
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: command=cli kind=usage message={}", one_line(first));
            return ExitCode::from(2);
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: command=cli kind=usage message={}", one_line(&e));
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error: command={} kind={} message={}",
                e.command,
                kind_name(e.kind),
                one_line(&e.message)
            );
            ExitCode::from(e.exit_code())
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), String> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err("worker count must be >= 1".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    let (name, res) = match command {
        Command::Train(a) => ("train", cmd_train(a)),
        Command::Path(a) => ("path", cmd_path(a)),
        Command::Extract(a) => ("extract", cmd_extract(a)),
        Command::Importance(a) => ("importance", cmd_importance(a)),
        Command::Simulate(a) => ("simulate", cmd_simulate(a)),
        Command::Benchmark(a) => ("benchmark", cmd_benchmark(a)),
        Command::Compare(a) => ("compare", cmd_compare(a)),
    };
    res.map_err(|e| CliError {
        command: name,
        kind: e.kind(),
        message: e.to_string(),
    })
}

fn create(path: &Path) -> prada::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn split_seed(cfg: &TrainConfig) -> u64 {
    cfg.rng_seed ^ 0x5EED_5EED_5EED_5EED
}

fn cmd_train(a: TrainArgs) -> prada::Result<()> {
    let mut cfg = a.config.resolve()?;
    if let Some(l) = a.lambda {
        cfg.lambda = l;
        cfg.validate()?;
    }
    let data = ingest_csv(&a.data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(&cfg));
    let (train, test) = data.split(TRAIN_FRACTION, &mut rng)?;
    let out = train_prada(&train, &test, &cfg)?;
    let model = ModelFile {
        column_names: data.column_names.clone(),
        response_name: data.response_name.clone(),
        standardization_stats: data.stats.clone(),
        lambda: cfg.lambda,
        config: cfg,
        params: out.params,
        test_mse: Some(out.test_mse),
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_model(&a.out, &model)?;
    println!("test_mse={}", out.test_mse);
    println!("nonzero_weights={}", model.params.count_nonzero_weights());
    Ok(())
}

fn cmd_path(a: PathArgs) -> prada::Result<()> {
    let cfg = a.config.resolve()?;
    let data = ingest_csv(&a.data)?;
    let grid = match a.lambdas {
        Some(g) => g,
        None => {
            let opts = AutoGridOptions {
                n_points: a.grid_points,
                ..AutoGridOptions::default()
            };
            auto_lambda_grid(&data, &cfg, &opts)?
        }
    };
    let table = run_lambda_path(&data, &grid, &cfg, a.splits)?;
    table.write_csv(create(&a.out)?)?;
    let rule = match a.rule {
        Rule::TwoSd => SelectionRule::TwoSd,
        Rule::OneSe => SelectionRule::OneStandardError,
    };
    println!("lambda_star={}", select_lambda_with(&table, rule)?);
    Ok(())
}

/// Loads a model and re-expresses a raw CSV on its scale.
fn model_and_data(model: &Path, data: &Path) -> prada::Result<(ModelFile, Dataset)> {
    let model = load_model(model)?;
    let data = model.restandardize(&ingest_csv(data)?)?;
    Ok((model, data))
}

fn cmd_extract(a: ExtractArgs) -> prada::Result<()> {
    let (model, data) = model_and_data(&a.model, &a.data)?;
    let mut opts = ExtractOptions {
        sigma2_max: if a.no_linear_split { None } else { Some(a.sigma2_max) },
        ..ExtractOptions::default()
    };
    opts.grid.n_points = a.grid_points;
    if a.marginal {
        opts.grid.co_inputs = CoInputs::Marginal;
    }
    let report = extract(&model.params, &data, &opts)?;
    persist_report(&report, &a.out)?;
    let stdout = io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "components={}", report.components.len())?;
    for c in &report.components {
        writeln!(w, "{} complexity={}", c.label(&report.column_names), c.complexity)?;
    }
    Ok(())
}

fn cmd_importance(a: ImportanceArgs) -> prada::Result<()> {
    let (model, data) = model_and_data(&a.model, &a.data)?;
    let imp = variable_importance(&model.params, &data)?;
    write_importance_csv(create(&a.out)?, &model.column_names, &imp)
}

fn cmd_simulate(a: SimulateArgs) -> prada::Result<()> {
    let spec = match (&a.generator, a.preset) {
        (Some(p), _) => read_json::<GeneratorSpec>(p)?,
        (None, Some(Preset::SixComponent)) => GeneratorSpec::six_component(a.n, a.noise),
        (None, Some(Preset::Legendre)) | (None, None) => GeneratorSpec::legendre(a.n, a.dim, a.noise),
    };
    let g = generate_additive_dataset(&spec, a.seed)?;
    let names = g.data.column_names.clone();
    match &a.out {
        Some(p) => write_dataset_csv(create(p)?, &names, "y", &g.raw_x, &g.raw_y),
        None => write_dataset_csv(io::stdout().lock(), &names, "y", &g.raw_x, &g.raw_y),
    }
}

fn cmd_benchmark(a: BenchmarkArgs) -> prada::Result<()> {
    let result: ExperimentResult = if a.recovery {
        let mut cfg = if a.quick { RecoveryConfig::quick() } else { RecoveryConfig::full() };
        if let Some(n) = a.runs {
            cfg.n_runs = n;
        }
        apply_train_overrides(&mut cfg.train, &mut cfg.master_seed, &mut cfg.lambda, &a);
        run_recovery_study(&cfg)?
    } else {
        let mut cfg = if a.quick { BenchmarkConfig::quick() } else { BenchmarkConfig::full() };
        if let Some(n) = a.runs {
            cfg.n_runs = n;
        }
        apply_train_overrides(&mut cfg.train, &mut cfg.master_seed, &mut cfg.lambda, &a);
        run_legendre_benchmark(&cfg)?
    };
    write_results(&result, &a.out)?;
    info!("results written to {}", a.out.display());
    println!("lambda={}", result.lambda);
    println!("runs={} failures={}", result.runs.len(), result.failures.len());
    Ok(())
}

fn apply_train_overrides(train: &mut TrainConfig, seed: &mut u64, lambda: &mut LambdaChoice, a: &BenchmarkArgs) {
    if let Some(h) = a.hidden {
        train.hidden_units = h;
    }
    if let Some(r) = a.restarts {
        train.n_restarts = r;
    }
    if let Some(s) = a.seed {
        *seed = s;
    }
    if let Some(l) = a.lambda {
        *lambda = LambdaChoice::Fixed { lambda: l };
    }
}

fn cmd_compare(a: CompareArgs) -> prada::Result<()> {
    let mut sets = Vec::new();
    let mut column_names = Vec::new();
    for p in &a.reports {
        let file = if p.is_dir() { p.join("report.json") } else { p.clone() };
        let report = read_report(&file)?;
        if column_names.is_empty() {
            column_names = report.column_names.clone();
        }
        sets.push(FunctionSet::from_components(&report.components));
    }
    let summary = summarize_ensemble(&sets)?;
    summary.write_csv(create(&a.out)?, &column_names)?;
    let m = medoid_model(&sets)?;
    println!("medoid={}", a.reports[m].display());
    if sets.len() >= 2 {
        println!("mean_similarity_to_medoid={}", mean_similarity_to_medoid(&sets)?);
    }
    Ok(())
}

/// Accepts both `extract` reports and per-run benchmark reports, which wrap the
/// extraction under an `extraction` key.
fn read_report(path: &Path) -> prada::Result<ExtractionReport> {
    let value: serde_json::Value = read_json(path)?;
    let inner = match value.get("extraction") {
        Some(v) => v.clone(),
        None => value,
    };
    Ok(serde_json::from_value(inner)?)
}
