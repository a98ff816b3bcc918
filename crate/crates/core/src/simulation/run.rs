use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, AggregateReport};
use super::dgm::{generate_observational, generate_perfect, OracleTreatment, SimulatedData};
use super::rng::{Purpose, Role, StreamKey};
use super::scenario::{Scenario, ScenarioId};
use super::SimulationError;
use crate::data::{adherent_subset, apply_artificial_censoring, Dataset, StrategySpec, ViewRecord};
use crate::development::{
    develop_msm, predict_under_strategies, DevelopmentConfig, HazardFamily, InterventionalModel, PredictorSource, RiskPredictionSet,
    TreatmentHistory,
};
use crate::glm::Link;
use crate::metrics::{
    counterfactual_metrics, observed_risk, outcome_curve, standard_metrics, subset_metrics, MetricInputs,
    MetricOptions, ObservedWeighting, PerformanceReport,
};
use crate::survival::HazardPolicy;
use crate::weights::{Pooling, 
    compute_ipacw, estimate_standard_censoring, fit_treatment_models, truncate_weights, CensoringSurvival,
    CombinedWeights, TreatmentModelSpec, TreatmentProbability,
};

fn default_n() -> usize {
    3000
}
fn default_reps() -> usize {
    200
}
fn default_seed() -> u64 {
    1
}
fn default_groups() -> usize {
    10
}
fn default_tau() -> f64 {
    5.0
}

/// Everything that determines a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub scenario: ScenarioId,
    pub family: HazardFamily,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_groups")]
    pub groups: usize,
    /// Horizon of the performance measures; outcome curves use `1..=tau`.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Use the data-generating treatment model instead of a fitted one.
    #[serde(default)]
    pub true_weights: bool,
    /// Cap artificial-censoring weights at this percentile.
    #[serde(default)]
    pub truncate_weights: Option<f64>,
    /// How visits share treatment-model coefficients.
    #[serde(default)]
    pub pooling: Pooling,
    /// Overrides the scenario's weight-model formula.
    #[serde(default)]
    pub weight_terms: Option<String>,
    /// Overrides the scenario's weight-model link.
    #[serde(default)]
    pub link: Option<Link>,
    #[serde(default)]
    pub observed_weighting: ObservedWeighting,
    #[serde(default)]
    pub hazard_policy: HazardPolicy,
    /// Treatment-history terms of the development model. Defaults to the
    /// current treatment for additive models and to current treatment plus
    /// treated duration for Cox models.
    #[serde(default)]
    pub history: Option<TreatmentHistory>,
}

impl SimulationConfig {
    pub fn new(scenario: ScenarioId, family: HazardFamily) -> Self {
        Self {
            scenario,
            family,
            n: default_n(),
            reps: default_reps(),
            seed: default_seed(),
            groups: default_groups(),
            tau: default_tau(),
            true_weights: false,
            truncate_weights: None,
            pooling: Pooling::default(),
            weight_terms: None,
            link: None,
            observed_weighting: ObservedWeighting::TimeUpdated,
            hazard_policy: HazardPolicy::RunningMax,
            history: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |msg: String| Err(SimulationError::Config(msg));
        if self.n < 10 {
            return bad(format!("n must be at least 10, got {}", self.n));
        }
        if self.reps == 0 {
            return bad("reps must be positive".into());
        }
        if self.groups == 0 {
            return bad("groups must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau <= 5.0) {
            return bad(format!("tau must lie in (0, 5], got {}", self.tau));
        }
        if let Some(p) = self.truncate_weights {
            if !(p > 0.0 && p <= 100.0) {
                return bad(format!("truncate_weights must be a percentile in (0, 100], got {p}"));
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        let mut s = Scenario::new(self.scenario, self.family);
        if let Some(terms) = &self.weight_terms {
            s.weight_formula = terms.clone();
        }
        if let Some(link) = self.link {
            s.weight_link = link;
            s.baseline_weight_link = None;
        }
        s
    }

    pub fn development_history(&self) -> TreatmentHistory {
        self.history.unwrap_or(match self.family {
            HazardFamily::Additive => TreatmentHistory::Current,
            HazardFamily::Cox => TreatmentHistory::CurrentAndDuration,
        })
    }

    /// Horizons of the outcome-proportion curves.
    pub fn curve_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = (1..=self.tau.floor() as usize).map(|t| t as f64).collect();
        if times.last() != Some(&self.tau) {
            times.push(self.tau);
        }
        times
    }

    fn metric_options(&self) -> MetricOptions {
        MetricOptions {
            tau: self.tau,
            groups: self.groups,
            observed_weighting: self.observed_weighting,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Standard performance on perfectly adherent data.
    True,
    Subset,
    Counterfactual,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::True, Estimator::Subset, Estimator::Counterfactual];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::True => "true",
            Estimator::Subset => "subset",
            Estimator::Counterfactual => "counterfactual",
        }
    }
}

/// One row of the per-replication metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub rep: usize,
    pub strategy: String,
    pub estimator: Estimator,
    pub n: usize,
    pub oe: Option<f64>,
    pub observed: Option<f64>,
    pub expected: Option<f64>,
    pub cindex: Option<f64>,
    pub auc: Option<f64>,
    pub brier: Option<f64>,
    pub scaled_brier: Option<f64>,
}

impl MetricRow {
    fn new(rep: usize, strategy: &str, estimator: Estimator, report: &PerformanceReport) -> Self {
        Self {
            rep,
            strategy: strategy.to_string(),
            estimator,
            n: report.n,
            oe: report.oe(),
            observed: report.calibration.observed,
            expected: Some(report.calibration.mean_predicted),
            cindex: report.cindex(),
            auc: report.auc(),
            brier: report.brier.brier,
            scaled_brier: report.scaled_brier(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub strategy: String,
    pub estimator: Estimator,
    pub group: usize,
    pub mean_predicted: f64,
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub strategy: String,
    pub estimator: Estimator,
    pub time: f64,
    pub mean_predicted: f64,
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub rep: usize,
    pub metrics: Vec<MetricRow>,
    pub calibration: Vec<CalibrationRow>,
    pub curves: Vec<CurveRow>,
    pub negative_hazards: usize,
    pub positivity_warnings: usize,
    pub max_weight: f64,
}

/// The datasets and predictions of one replication.
#[derive(Debug, Clone)]
pub struct ReplicationData {
    pub development: SimulatedData,
    pub validation: SimulatedData,
    /// Perfectly adherent counterparts of the validation data, one per strategy.
    pub perfect: Vec<SimulatedData>,
    pub strategies: Vec<StrategySpec>,
    pub model: InterventionalModel,
    pub predictions: RiskPredictionSet,
}

/// Generates the data of replication `rep`, develops the model and predicts
/// risks for the validation subjects.
pub fn prepare_replication(config: &SimulationConfig, rep: usize) -> Result<ReplicationData, SimulationError> {
    let scenario = config.scenario();
    let rep_id = rep as u64;
    let development = generate_observational(
        &scenario.development,
        config.n,
        StreamKey::new(config.seed, rep_id, Role::Development),
    );
    let mut dev_config = DevelopmentConfig::new(config.family);
    dev_config.hazard_policy = config.hazard_policy;
    dev_config.history = config.development_history();
    let model = develop_msm(&development.dataset, &dev_config)?;

    let val_key = StreamKey::new(config.seed, rep_id, Role::Validation);
    let validation = generate_observational(&scenario.validation, config.n, val_key);
    let visits = scenario.validation.visits;
    let strategies = vec![StrategySpec::never_treated(visits), StrategySpec::always_treated(visits)];
    let perfect = strategies.iter().map(|s| generate_perfect(&validation, &s.path)).collect();

    let source = if scenario.measurement_error {
        PredictorSource::MeasurementError {
            sd: scenario.validation.measurement_error_sd,
            seed: val_key.derived_seed(Purpose::MeasurementError),
        }
    } else {
        PredictorSource::Baseline
    };
    let predictions = predict_under_strategies(&model, &validation.dataset, &strategies, &config.curve_times(), source)?;
    Ok(ReplicationData {
        development,
        validation,
        perfect,
        strategies,
        model,
        predictions,
    })
}

fn censoring_weights(dataset: &Dataset) -> (Vec<ViewRecord>, CombinedWeights) {
    let records: Vec<ViewRecord> = dataset
        .subjects
        .iter()
        .enumerate()
        .map(|(i, s)| ViewRecord::unmodified(i, s))
        .collect();
    let weights = CombinedWeights::censoring_only(records.len(), estimate_standard_censoring(dataset));
    (records, weights)
}

fn push_calibration(out: &mut Vec<CalibrationRow>, strategy: &str, estimator: Estimator, report: &PerformanceReport) {
    out.extend(report.calibration.groups.iter().map(|g| CalibrationRow {
        strategy: strategy.to_string(),
        estimator,
        group: g.group,
        mean_predicted: g.mean_predicted,
        observed: g.observed,
    }));
}

fn push_curve(
    out: &mut Vec<CurveRow>,
    strategy: &str,
    estimator: Estimator,
    records: &[ViewRecord],
    weights: &CombinedWeights,
    times: &[f64],
    risks: &[Vec<f64>],
    weighting: ObservedWeighting,
) {
    out.extend(
        outcome_curve(records, weights, times, risks, weighting)
            .into_iter()
            .map(|p| CurveRow {
                strategy: strategy.to_string(),
                estimator,
                time: p.time,
                mean_predicted: p.mean_predicted,
                observed: p.observed,
            }),
    );
}

/// The subset comparator re-selects adherent subjects at every horizon.
fn push_subset_curve(
    out: &mut Vec<CurveRow>,
    dataset: &Dataset,
    strategy: &StrategySpec,
    times: &[f64],
    risks: &[Vec<f64>],
    weighting: ObservedWeighting,
) -> Result<(), SimulationError> {
    for (&t, r) in times.iter().zip(risks) {
        let members = adherent_subset(dataset, strategy, t)?;
        let subset = dataset.subset(&members);
        let preds: Vec<f64> = members.iter().map(|&i| r[i]).collect();
        let (records, weights) = censoring_weights(&subset);
        let everyone: Vec<usize> = (0..members.len()).collect();
        let inputs = MetricInputs::new(&records, &weights, &preds);
        out.push(CurveRow {
            strategy: strategy.name.clone(),
            estimator: Estimator::Subset,
            time: t,
            mean_predicted: preds.iter().sum::<f64>() / preds.len() as f64,
            observed: observed_risk(&inputs, &everyone, t, weighting),
        });
    }
    Ok(())
}

/// Runs the full validation pipeline for replication `rep`.
pub fn run_replication(config: &SimulationConfig, rep: usize) -> Result<ReplicationResult, SimulationError> {
    let data = prepare_replication(config, rep)?;
    let scenario = config.scenario();
    let options = config.metric_options();
    let times = config.curve_times();
    let tau_index = times.len() - 1;
    let val = &data.validation.dataset;

    let fitted;
    let oracle = OracleTreatment(scenario.validation);
    let treatment_model: &dyn TreatmentProbability = if config.true_weights {
        &oracle
    } else {
        let mut spec = TreatmentModelSpec::parse(&scenario.weight_formula, val, scenario.weight_link)?;
        spec.pooling = config.pooling;
        spec.baseline_link = scenario.baseline_weight_link;
        fitted = fit_treatment_models(val, &spec)?;
        &fitted
    };
    let censoring: CensoringSurvival = estimate_standard_censoring(val);

    let mut result = ReplicationResult {
        rep,
        metrics: Vec::new(),
        calibration: Vec::new(),
        curves: Vec::new(),
        negative_hazards: data.validation.negative_hazards,
        positivity_warnings: 0,
        max_weight: 1.0,
    };

    for (s, strategy) in data.strategies.iter().enumerate() {
        let name = strategy.name.as_str();
        let risks = &data.predictions.risks[s];
        let preds = &risks[tau_index];
        let perfect = &data.perfect[s].dataset;
        result.negative_hazards += data.perfect[s].negative_hazards;

        let truth = standard_metrics(perfect, preds, &options)?;
        let subset = subset_metrics(val, strategy, preds, &options)?;

        let view = apply_artificial_censoring(val, strategy)?;
        let mut ipacw = compute_ipacw(val, &view, treatment_model);
        if let Some(p) = config.truncate_weights {
            truncate_weights(&mut ipacw.trajectories, p);
        }
        result.positivity_warnings += ipacw.warnings.len();
        result.max_weight = result.max_weight.max(ipacw.max_weight());
        let combined = CombinedWeights {
            ipacw: ipacw.trajectories,
            censoring: censoring.clone(),
        };
        let counterfactual =
            counterfactual_metrics(&view, combined.ipacw.clone(), combined.censoring.clone(), preds, &options)?;

        for (estimator, report) in [
            (Estimator::True, &truth),
            (Estimator::Subset, &subset),
            (Estimator::Counterfactual, &counterfactual),
        ] {
            result.metrics.push(MetricRow::new(rep, name, estimator, report));
            push_calibration(&mut result.calibration, name, estimator, report);
        }

        let (records, weights) = censoring_weights(perfect);
        let w = config.observed_weighting;
        push_curve(&mut result.curves, name, Estimator::True, &records, &weights, &times, risks, w);
        push_subset_curve(&mut result.curves, val, strategy, &times, risks, w)?;
        push_curve(&mut result.curves, name, Estimator::Counterfactual, &view.records, &combined, &times, risks, w);
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub rep: usize,
    pub error: String,
}

/// Aggregate report plus the per-replication results it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub report: AggregateReport,
    pub replications: Vec<ReplicationResult>,
}

/// Runs every replication (in parallel on the current rayon pool) and
/// aggregates them in replication order.
pub fn run_scenario(config: &SimulationConfig) -> Result<ScenarioRun, SimulationError> {
    config.validate()?;
    let outcomes: Vec<Result<ReplicationResult, SimulationError>> =
        (0..config.reps).into_par_iter().map(|rep| run_replication(config, rep)).collect();

    let mut replications = Vec::with_capacity(config.reps);
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => replications.push(r),
            Err(e) => {
                log::warn!("replication {rep} failed: {e}");
                failures.push(ReplicationFailure {
                    rep,
                    error: e.to_string(),
                });
            }
        }
    }
    let report = aggregate(config, &replications, failures)?;
    Ok(ScenarioRun { report, replications })
}
