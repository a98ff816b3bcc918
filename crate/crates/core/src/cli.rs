//! Command-line entry points: `simulate`, `validate` and `plotdata`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{
    adherent_subset, apply_artificial_censoring, load_longitudinal_csv, write_longitudinal_csv, ColumnSchema,
    DataError, Dataset, StrategySpec,
};
use crate::development::{baseline_predictors, HazardFamily, InterventionalModel, RiskPredictionSet};
use crate::glm::Link;
use crate::io::write_atomic;
use crate::metrics::{counterfactual_metrics, subset_metrics, MetricOptions, MetricsError, PerformanceReport};
use crate::report::{plot_data, write_calibration_csv, AnyReport, PlotKind, ValidationReport};
use crate::simulation::{prepare_replication, run_scenario, write_metrics_csv, ScenarioId, SimulationConfig};
use crate::weights::{Pooling, 
    compute_ipacw, estimate_standard_censoring, fit_treatment_models, truncate_weights, TreatmentModelSpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "counterval", version, about = "Counterfactual validation of predictions under interventions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation scenario and write the aggregate report.
    Simulate(SimulateArgs),
    /// Validate predictions under a strategy on an observational dataset.
    Validate(ValidateArgs),
    /// Emit plot-ready CSV from a report.
    Plotdata(PlotdataArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON run configuration; command-line flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<ScenarioId>,
    #[arg(long)]
    pub family: Option<HazardFamily>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub true_weights: bool,
    /// Percentile at which to cap artificial-censoring weights.
    #[arg(long)]
    pub truncate_weights: Option<f64>,
    /// How visits share treatment-model coefficients.
    #[arg(long, value_enum)]
    pub pooling: Option<Pooling>,
    /// Weight-model formula, e.g. `1 + L`.
    #[arg(long)]
    pub weight_terms: Option<String>,
    #[arg(long)]
    pub link: Option<Link>,
    /// Also write the datasets and predictions of the first replication.
    #[arg(long)]
    pub dump_data: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Long-format CSV, one row per subject and visit.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV with columns `id,strategy,tau,risk`.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    pub predictions: Option<PathBuf>,
    /// Fitted model JSON to predict from.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `never_treated`, `always_treated`, or a 0/1 path such as `00111`.
    #[arg(long)]
    pub strategy: String,
    #[arg(long, default_value_t = 5.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 10)]
    pub groups: usize,
    #[arg(long, default_value = "1 + L")]
    pub weight_terms: String,
    #[arg(long, default_value = "logit")]
    pub link: Link,
    /// Link of the visit-0 model when it differs from `--link`.
    #[arg(long)]
    pub baseline_link: Option<Link>,
    /// How visits share treatment-model coefficients.
    #[arg(long, value_enum, default_value = "baseline-separate")]
    pub pooling: Pooling,
    #[arg(long)]
    pub truncate_weights: Option<f64>,
    /// JSON column mapping for the data file.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotdataArgs {
    /// Report JSON written by `simulate` or `validate`.
    #[arg(long)]
    pub report: PathBuf,
    /// `calibration`, `outcome-curves` or `brier`.
    #[arg(long)]
    pub kind: PlotKind,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(_) => EXIT_FAILURE,
        }
    }
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(run_err)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(run_err)
}

fn write_csv_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<(), String>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(CliError::Run)?;
    write_atomic(path, &buf).map_err(run_err)
}

/// Merges the JSON configuration (if any) with command-line overrides.
pub fn resolve_simulation_config(args: &SimulateArgs) -> Result<SimulationConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let mut value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            if let Some(obj) = value.as_object_mut() {
                if let Some(s) = args.scenario {
                    obj.insert("scenario".into(), serde_json::to_value(s).map_err(run_err)?);
                }
                if let Some(f) = args.family {
                    obj.insert("family".into(), serde_json::to_value(f).map_err(run_err)?);
                }
            }
            serde_json::from_value::<SimulationConfig>(value)
                .map_err(|e| CliError::Usage(format!("invalid configuration {}: {e}", path.display())))?
        }
        None => {
            let scenario = args
                .scenario
                .ok_or_else(|| CliError::Usage("--scenario is required without --config".into()))?;
            SimulationConfig::new(scenario, args.family.unwrap_or(HazardFamily::Additive))
        }
    };
    if let Some(v) = args.n {
        config.n = v;
    }
    if let Some(v) = args.reps {
        config.reps = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.groups {
        config.groups = v;
    }
    if let Some(v) = args.tau {
        config.tau = v;
    }
    if args.true_weights {
        config.true_weights = true;
    }
    if args.truncate_weights.is_some() {
        config.truncate_weights = args.truncate_weights;
    }
    if let Some(p) = args.pooling {
        config.pooling = p;
    }
    if args.weight_terms.is_some() {
        config.weight_terms = args.weight_terms.clone();
    }
    if args.link.is_some() {
        config.link = args.link;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

/// Long-format predictions, one row per subject, strategy and horizon.
pub fn write_predictions_csv<W: std::io::Write>(set: &RiskPredictionSet, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "strategy", "tau", "risk"])?;
    for (s, strategy) in set.strategies.iter().enumerate() {
        for (k, tau) in set.taus.iter().enumerate() {
            for (i, id) in set.ids.iter().enumerate() {
                w.write_record([id, strategy, &tau.to_string(), &set.risks[s][k][i].to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let config = resolve_simulation_config(args)?;
    std::fs::create_dir_all(&args.out).map_err(run_err)?;
    log::info!(
        "scenario {} ({:?}): {} replications of n = {}",
        config.scenario,
        config.family,
        config.reps,
        config.n
    );
    let run = run_scenario(&config).map_err(run_err)?;
    write_json(&args.out.join("report.json"), &run.report)?;
    write_csv_with(&args.out.join("replications.csv"), |buf| {
        write_metrics_csv(&run.replications, buf).map_err(|e| e.to_string())
    })?;
    let calibration = plot_data(&AnyReport::Simulation(Box::new(run.report.clone())), PlotKind::Calibration)
        .map_err(CliError::Run)?;
    write_csv_with(&args.out.join("calibration.csv"), |buf| {
        calibration.write_csv(buf).map_err(|e| e.to_string())
    })?;
    let curves = plot_data(&AnyReport::Simulation(Box::new(run.report.clone())), PlotKind::OutcomeCurves)
        .map_err(CliError::Run)?;
    write_csv_with(&args.out.join("curves.csv"), |buf| curves.write_csv(buf).map_err(|e| e.to_string()))?;

    if args.dump_data {
        let data = prepare_replication(&config, 0).map_err(run_err)?;
        let dump = |name: &str, d: &Dataset| {
            write_csv_with(&args.out.join(name), |buf| {
                write_longitudinal_csv(d, buf).map_err(|e| e.to_string())
            })
        };
        dump("development.csv", &data.development.dataset)?;
        dump("validation.csv", &data.validation.dataset)?;
        for (s, perfect) in data.strategies.iter().zip(&data.perfect) {
            dump(&format!("perfect_{}.csv", s.name), &perfect.dataset)?;
        }
        write_csv_with(&args.out.join("predictions.csv"), |buf| {
            write_predictions_csv(&data.predictions, buf).map_err(|e| e.to_string())
        })?;
        data.model.save(&args.out.join("model.json")).map_err(run_err)?;
    }

    if run.report.failed {
        log::error!(
            "{} of {} replications failed",
            run.report.failures.len(),
            run.report.reps_requested
        );
        return Ok(EXIT_FAILURE);
    }
    Ok(EXIT_OK)
}

fn parse_strategy(text: &str, visits: usize) -> Result<StrategySpec, CliError> {
    if let Some(s) = StrategySpec::builtin(text, visits) {
        return Ok(s);
    }
    let path: Option<Vec<bool>> = text
        .chars()
        .map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect();
    match path {
        Some(p) if !p.is_empty() => Ok(StrategySpec {
            name: text.to_string(),
            path: p,
        }),
        _ => Err(CliError::Usage(format!(
            "unknown strategy `{text}` (expected never_treated, always_treated or a 0/1 path)"
        ))),
    }
}

/// Reads predictions for one strategy and horizon, aligned with `dataset`.
pub fn read_predictions(
    path: &Path,
    dataset: &Dataset,
    strategy: &str,
    tau: f64,
) -> Result<Vec<f64>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| run_err(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(run_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Run(format!("{}: missing column `{name}`", path.display())))
    };
    let (id_col, strategy_col, tau_col, risk_col) = (col("id")?, col("strategy")?, col("tau")?, col("risk")?);
    let mut risks: HashMap<String, f64> = HashMap::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(run_err)?;
        if &record[strategy_col] != strategy {
            continue;
        }
        let parse = |c: usize| {
            record[c]
                .trim()
                .parse::<f64>()
                .map_err(|_| CliError::Run(format!("{}: row {}: `{}` is not a number", path.display(), row + 2, &record[c])))
        };
        if parse(tau_col)? != tau {
            continue;
        }
        risks.insert(record[id_col].to_string(), parse(risk_col)?);
    }
    dataset
        .subjects
        .iter()
        .map(|s| {
            risks.get(&s.id).copied().ok_or_else(|| {
                CliError::Run(format!(
                    "{}: no prediction for subject `{}` under `{strategy}` at tau = {tau}",
                    path.display(),
                    s.id
                ))
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct ValidateSettings<'a> {
    data: &'a Path,
    predictions: Option<&'a Path>,
    model: Option<&'a Path>,
    strategy: &'a StrategySpec,
    tau: f64,
    groups: usize,
    weight_terms: &'a str,
    link: Link,
    baseline_link: Option<Link>,
    pooling: Pooling,
    truncate_weights: Option<f64>,
    schema: &'a ColumnSchema,
}

/// Counterfactual and subset performance of `predictions` under `strategy`.
pub struct Validation {
    pub counterfactual: PerformanceReport,
    pub subset: Option<PerformanceReport>,
    pub followed: usize,
    pub max_weight: f64,
    pub positivity_warnings: usize,
}

/// The validation pipeline on an in-memory dataset.
pub fn validate_predictions(
    dataset: &Dataset,
    strategy: &StrategySpec,
    predictions: &[f64],
    spec: &TreatmentModelSpec,
    truncate: Option<f64>,
    options: &MetricOptions,
) -> Result<Validation, CliError> {
    let view = apply_artificial_censoring(dataset, strategy).map_err(run_err)?;
    if view.followed() == 0 {
        return Err(run_err(MetricsError::Positivity(strategy.name.clone())));
    }
    let models = fit_treatment_models(dataset, spec).map_err(run_err)?;
    let mut ipacw = compute_ipacw(dataset, &view, &models);
    if let Some(p) = truncate {
        truncate_weights(&mut ipacw.trajectories, p);
    }
    let max_weight = ipacw.max_weight();
    let positivity_warnings = ipacw.warnings.len();
    let censoring = estimate_standard_censoring(dataset);
    let counterfactual =
        counterfactual_metrics(&view, ipacw.trajectories, censoring, predictions, options).map_err(run_err)?;
    let subset = match adherent_subset(dataset, strategy, options.tau) {
        Ok(_) => Some(subset_metrics(dataset, strategy, predictions, options).map_err(run_err)?),
        Err(DataError::EmptySubset(_)) => None,
        Err(e) => return Err(run_err(e)),
    };
    Ok(Validation {
        counterfactual,
        subset,
        followed: view.followed(),
        max_weight,
        positivity_warnings,
    })
}

fn cmd_validate(args: &ValidateArgs) -> Result<i32, CliError> {
    let schema: ColumnSchema = match &args.schema {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid schema {}: {e}", p.display())))?
        }
        None => ColumnSchema::default(),
    };
    if !(args.tau > 0.0) {
        return Err(CliError::Usage(format!("tau must be positive, got {}", args.tau)));
    }
    let dataset = load_longitudinal_csv(&args.data, &schema).map_err(|e| run_err(format!("{}: {e}", args.data.display())))?;
    let strategy = parse_strategy(&args.strategy, dataset.max_visits())?;

    let mut hasher = Sha256::new();
    hasher.update(std::fs::read(&args.data).map_err(run_err)?);
    let predictions = match (&args.predictions, &args.model) {
        (Some(p), _) => {
            hasher.update(std::fs::read(p).map_err(run_err)?);
            read_predictions(p, &dataset, &strategy.name, args.tau)?
        }
        (None, Some(m)) => {
            hasher.update(std::fs::read(m).map_err(run_err)?);
            let model = InterventionalModel::load(m).map_err(|e| run_err(format!("{}: {e}", m.display())))?;
            dataset
                .subjects
                .iter()
                .map(|s| {
                    model
                        .predict(&baseline_predictors(s), &strategy, &[args.tau])
                        .map(|r| r[0])
                        .map_err(run_err)
                })
                .collect::<Result<Vec<f64>, CliError>>()?
        }
        (None, None) => return Err(CliError::Usage("one of --predictions or --model is required".into())),
    };

    let mut spec = TreatmentModelSpec::parse(&args.weight_terms, &dataset, args.link).map_err(|e| CliError::Usage(e.to_string()))?;
    spec.pooling = args.pooling;
    spec.baseline_link = args.baseline_link;
    let options = MetricOptions {
        tau: args.tau,
        groups: args.groups,
        ..Default::default()
    };
    let v = validate_predictions(&dataset, &strategy, &predictions, &spec, args.truncate_weights, &options)?;

    let settings = ValidateSettings {
        data: &args.data,
        predictions: args.predictions.as_deref(),
        model: args.model.as_deref(),
        strategy: &strategy,
        tau: args.tau,
        groups: args.groups,
        weight_terms: &args.weight_terms,
        link: args.link,
        baseline_link: args.baseline_link,
        pooling: args.pooling,
        truncate_weights: args.truncate_weights,
        schema: &schema,
    };
    let report = ValidationReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        settings: serde_json::to_value(&settings).map_err(run_err)?,
        input_hash: hex::encode(hasher.finalize()),
        strategy: strategy.name.clone(),
        tau: args.tau,
        n: dataset.len(),
        followed: v.followed,
        max_weight: v.max_weight,
        positivity_warnings: v.positivity_warnings,
        counterfactual: v.counterfactual,
        subset: v.subset,
    };
    std::fs::create_dir_all(&args.out).map_err(run_err)?;
    write_json(&args.out.join("report.json"), &report)?;
    let mut rows = vec![(strategy.name.as_str(), "counterfactual", &report.counterfactual)];
    if let Some(s) = &report.subset {
        rows.push((strategy.name.as_str(), "subset", s));
    }
    write_csv_with(&args.out.join("calibration.csv"), |buf| {
        write_calibration_csv(&rows, buf).map_err(|e| e.to_string())
    })?;
    Ok(EXIT_OK)
}

fn cmd_plotdata(args: &PlotdataArgs) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(&args.report).map_err(|e| run_err(format!("{}: {e}", args.report.display())))?;
    let report = AnyReport::from_json(&text).map_err(|e| run_err(format!("{}: {e}", args.report.display())))?;
    let data = plot_data(&report, args.kind).map_err(CliError::Usage)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf).map_err(run_err)?;
    match &args.out {
        Some(p) => write_atomic(p, &buf).map_err(run_err)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&buf).map_err(run_err)?;
        }
    }
    Ok(EXIT_OK)
}

/// Caps the global thread pool from `COUNTERVAL_THREADS`.
pub fn configure_threads() {
    if let Some(n) = std::env::var("COUNTERVAL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not configure {n} threads: {e}");
            }
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Plotdata(a) => cmd_plotdata(a),
    }
}
