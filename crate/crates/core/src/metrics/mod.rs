//! Counterfactual performance measures for predictions under a treatment
//! strategy, and their standard counterparts used by the subset comparator and
//! on fully adherent data.

mod brier;
mod calibration;
mod discrimination;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{adherent_subset, DataError, Dataset, StrategySpec, StrategyView, ViewRecord};
use crate::weights::{CensoringSurvival, CombinedWeights, WeightTrajectory};

pub use brier::{brier, BrierResult};
pub use calibration::{calibration, observed_risk, CalibrationGroup, CalibrationResult, ObservedWeighting};
pub use discrimination::{auc_cd, cindex, PairSummary};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(
        "positivity violated: no subject follows strategy `{0}` at the first visit, so \
         counterfactual performance cannot be estimated"
    )]
    Positivity(String),
    #[error("{what} has {got} entries, expected {expected}")]
    Length { what: &'static str, got: usize, expected: usize },
}

/// Aligned per-subject inputs: follow-up records, weights and predicted risks.
#[derive(Debug, Clone, Copy)]
pub struct MetricInputs<'a> {
    pub records: &'a [ViewRecord],
    pub weights: &'a CombinedWeights,
    pub predictions: &'a [f64],
}

impl<'a> MetricInputs<'a> {
    pub fn new(records: &'a [ViewRecord], weights: &'a CombinedWeights, predictions: &'a [f64]) -> Self {
        assert_eq!(records.len(), weights.len());
        assert_eq!(records.len(), predictions.len());
        Self {
            records,
            weights,
            predictions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub tau: f64,
    pub groups: usize,
    #[serde(default)]
    pub observed_weighting: ObservedWeighting,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            tau: 5.0,
            groups: 10,
            observed_weighting: ObservedWeighting::TimeUpdated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub n: usize,
    pub events: usize,
    pub calibration: CalibrationResult,
    pub cindex: PairSummary,
    pub auc: PairSummary,
    pub brier: BrierResult,
}

impl PerformanceReport {
    pub fn oe(&self) -> Option<f64> {
        self.calibration.oe
    }
    pub fn cindex(&self) -> Option<f64> {
        self.cindex.value
    }
    pub fn auc(&self) -> Option<f64> {
        self.auc.value
    }
    pub fn scaled_brier(&self) -> Option<f64> {
        self.brier.scaled
    }
}

/// All four measure families at horizon `tau`.
pub fn evaluate(inputs: &MetricInputs<'_>, options: &MetricOptions) -> PerformanceReport {
    let tau = options.tau;
    PerformanceReport {
        n: inputs.records.len(),
        events: inputs.records.iter().filter(|r| r.is_event() && r.time <= tau).count(),
        calibration: calibration(inputs, tau, options.groups, options.observed_weighting),
        cindex: cindex(inputs, tau),
        auc: auc_cd(inputs, tau),
        brier: brier(inputs, tau),
    }
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), MetricsError> {
    if got == expected {
        Ok(())
    } else {
        Err(MetricsError::Length { what, got, expected })
    }
}

/// Counterfactual performance from an artificially censored view, its
/// artificial-censoring weights and the standard-censoring survival.
pub fn counterfactual_metrics(
    view: &StrategyView,
    ipacw: Vec<WeightTrajectory>,
    censoring: CensoringSurvival,
    predictions: &[f64],
    options: &MetricOptions,
) -> Result<PerformanceReport, MetricsError> {
    check_len("predictions", predictions.len(), view.len())?;
    check_len("weights", ipacw.len(), view.len())?;
    if view.followed() == 0 {
        return Err(MetricsError::Positivity(view.strategy.name.clone()));
    }
    let weights = CombinedWeights { ipacw, censoring };
    Ok(evaluate(&MetricInputs::new(&view.records, &weights, predictions), options))
}

/// Standard performance on data where every subject follows the strategy
/// (or is treated as if it did): unit artificial-censoring weights and a
/// censoring survival estimated on the same data.
pub fn standard_metrics(
    dataset: &Dataset,
    predictions: &[f64],
    options: &MetricOptions,
) -> Result<PerformanceReport, MetricsError> {
    check_len("predictions", predictions.len(), dataset.len())?;
    let records: Vec<ViewRecord> = dataset
        .subjects
        .iter()
        .enumerate()
        .map(|(i, s)| ViewRecord::unmodified(i, s))
        .collect();
    let censoring = CensoringSurvival::from_follow_up(records.iter().map(|r| (r.time, !r.is_event())));
    let weights = CombinedWeights::censoring_only(records.len(), censoring);
    Ok(evaluate(&MetricInputs::new(&records, &weights, predictions), options))
}

/// Naive comparator: standard performance on subjects observed to follow the
/// strategy. Returns the report together with the subset size.
pub fn subset_metrics(
    dataset: &Dataset,
    strategy: &StrategySpec,
    predictions: &[f64],
    options: &MetricOptions,
) -> Result<PerformanceReport, MetricsError> {
    check_len("predictions", predictions.len(), dataset.len())?;
    let members = adherent_subset(dataset, strategy, options.tau)?;
    let subset = dataset.subset(&members);
    let preds: Vec<f64> = members.iter().map(|&i| predictions[i]).collect();
    standard_metrics(&subset, &preds, options)
}

/// Mean predicted and observed risk at several horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub time: f64,
    pub mean_predicted: f64,
    pub observed: Option<f64>,
}

/// `risks[k][i]` is subject `i`'s predicted risk at `times[k]`.
pub fn outcome_curve(
    records: &[ViewRecord],
    weights: &CombinedWeights,
    times: &[f64],
    risks: &[Vec<f64>],
    weighting: ObservedWeighting,
) -> Vec<CurvePoint> {
    let everyone: Vec<usize> = (0..records.len()).collect();
    times
        .iter()
        .zip(risks)
        .map(|(&t, r)| {
            let inputs = MetricInputs::new(records, weights, r);
            CurvePoint {
                time: t,
                mean_predicted: r.iter().sum::<f64>() / r.len() as f64,
                observed: observed_risk(&inputs, &everyone, t, weighting),
            }
        })
        .collect()
}
