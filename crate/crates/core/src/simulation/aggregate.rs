use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::run::{Estimator, MetricRow, ReplicationFailure, ReplicationResult, SimulationConfig};
use super::SimulationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Oe,
    Observed,
    Expected,
    Cindex,
    Auc,
    Brier,
    ScaledBrier,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Oe,
        Metric::Observed,
        Metric::Expected,
        Metric::Cindex,
        Metric::Auc,
        Metric::Brier,
        Metric::ScaledBrier,
    ];

    pub fn value(self, row: &MetricRow) -> Option<f64> {
        match self {
            Metric::Oe => row.oe,
            Metric::Observed => row.observed,
            Metric::Expected => row.expected,
            Metric::Cindex => row.cindex,
            Metric::Auc => row.auc,
            Metric::Brier => row.brier,
            Metric::ScaledBrier => row.scaled_brier,
        }
    }
}

/// Summary of one metric for one strategy and estimator across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub metric: Metric,
    pub strategy: String,
    pub estimator: Estimator,
    /// Replications with a defined value.
    pub reps: usize,
    pub mean: Option<f64>,
    /// Mean difference from the true value; absent for the true estimator.
    pub bias: Option<f64>,
    /// Monte Carlo standard error of the bias.
    pub mc_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub strategy: String,
    pub estimator: Estimator,
    pub group: usize,
    pub mean_predicted: f64,
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub strategy: String,
    pub estimator: Estimator,
    pub time: f64,
    pub mean_predicted: f64,
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub version: String,
    pub config: SimulationConfig,
    /// SHA-256 of the serialized configuration.
    pub config_hash: String,
    pub reps_requested: usize,
    pub reps_succeeded: usize,
    pub failures: Vec<ReplicationFailure>,
    /// Set when at least 1% of the replications failed.
    pub failed: bool,
    pub negative_hazards: usize,
    pub positivity_warnings: usize,
    pub max_weight: f64,
    pub cells: Vec<AggregateCell>,
    pub calibration: Vec<CalibrationSummary>,
    pub curves: Vec<CurveSummary>,
}

impl AggregateReport {
    pub fn cell(&self, metric: Metric, strategy: &str, estimator: Estimator) -> Option<&AggregateCell> {
        self.cells
            .iter()
            .find(|c| c.metric == metric && c.strategy == strategy && c.estimator == estimator)
    }

    pub fn mean(&self, metric: Metric, strategy: &str, estimator: Estimator) -> Option<f64> {
        self.cell(metric, strategy, estimator)?.mean
    }

    pub fn bias(&self, metric: Metric, strategy: &str, estimator: Estimator) -> Option<f64> {
        self.cell(metric, strategy, estimator)?.bias
    }
}

pub fn config_hash(config: &SimulationConfig) -> Result<String, SimulationError> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn standard_error(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    Some((var / values.len() as f64).sqrt())
}

fn strategies_in_order(replications: &[ReplicationResult]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for row in replications.iter().flat_map(|r| &r.metrics) {
        if !names.contains(&row.strategy) {
            names.push(row.strategy.clone());
        }
    }
    names
}

fn summarize_cells(replications: &[ReplicationResult]) -> Vec<AggregateCell> {
    let strategies = strategies_in_order(replications);
    let lookup: BTreeMap<(usize, &str, Estimator), &MetricRow> = replications
        .iter()
        .flat_map(|r| &r.metrics)
        .map(|m| ((m.rep, m.strategy.as_str(), m.estimator), m))
        .collect();

    let mut cells = Vec::new();
    for metric in Metric::ALL {
        for strategy in &strategies {
            for estimator in Estimator::ALL {
                let mut values = Vec::new();
                let mut diffs = Vec::new();
                for r in replications {
                    let Some(row) = lookup.get(&(r.rep, strategy.as_str(), estimator)) else {
                        continue;
                    };
                    let Some(v) = metric.value(row) else { continue };
                    values.push(v);
                    let truth = lookup
                        .get(&(r.rep, strategy.as_str(), Estimator::True))
                        .and_then(|t| metric.value(t));
                    if let Some(t) = truth {
                        diffs.push(v - t);
                    }
                }
                let has_bias = estimator != Estimator::True;
                cells.push(AggregateCell {
                    metric,
                    strategy: strategy.clone(),
                    estimator,
                    reps: values.len(),
                    mean: mean(&values),
                    bias: if has_bias { mean(&diffs) } else { None },
                    mc_se: if has_bias { standard_error(&diffs) } else { None },
                });
            }
        }
    }
    cells
}

/// Averages `(mean_predicted, observed)` pairs keyed by `key`, keeping first-seen order.
fn average_points<K: Ord + Clone>(points: impl Iterator<Item = (K, f64, Option<f64>)>) -> Vec<(K, f64, Option<f64>)> {
    let mut order: Vec<K> = Vec::new();
    let mut acc: BTreeMap<K, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (k, predicted, observed) in points {
        let entry = acc.entry(k.clone()).or_insert_with(|| {
            order.push(k);
            (Vec::new(), Vec::new())
        });
        entry.0.push(predicted);
        entry.1.extend(observed);
    }
    order
        .into_iter()
        .map(|k| {
            let (p, o) = &acc[&k];
            (k.clone(), mean(p).unwrap_or(f64::NAN), mean(o))
        })
        .collect()
}

pub fn aggregate(
    config: &SimulationConfig,
    replications: &[ReplicationResult],
    failures: Vec<ReplicationFailure>,
) -> Result<AggregateReport, SimulationError> {
    let calibration = average_points(
        replications
            .iter()
            .flat_map(|r| &r.calibration)
            .map(|c| ((c.strategy.clone(), c.estimator, c.group), c.mean_predicted, c.observed)),
    )
    .into_iter()
    .map(|((strategy, estimator, group), mean_predicted, observed)| CalibrationSummary {
        strategy,
        estimator,
        group,
        mean_predicted,
        observed,
    })
    .collect();

    // Times are keyed by their bit pattern so they can be ordered.
    let curves = average_points(
        replications
            .iter()
            .flat_map(|r| &r.curves)
            .map(|c| ((c.strategy.clone(), c.estimator, c.time.to_bits()), c.mean_predicted, c.observed)),
    )
    .into_iter()
    .map(|((strategy, estimator, time), mean_predicted, observed)| CurveSummary {
        strategy,
        estimator,
        time: f64::from_bits(time),
        mean_predicted,
        observed,
    })
    .collect();

    Ok(AggregateReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        config_hash: config_hash(config)?,
        reps_requested: config.reps,
        reps_succeeded: replications.len(),
        failed: !failures.is_empty() && failures.len() * 100 >= config.reps,
        failures,
        negative_hazards: replications.iter().map(|r| r.negative_hazards).sum(),
        positivity_warnings: replications.iter().map(|r| r.positivity_warnings).sum(),
        max_weight: replications.iter().map(|r| r.max_weight).fold(1.0, f64::max),
        cells: summarize_cells(replications),
        calibration,
        curves,
    })
}

/// Per-replication metrics as CSV, one row per replication, strategy and estimator.
pub fn write_metrics_csv<W: Write>(replications: &[ReplicationResult], writer: W) -> Result<(), SimulationError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in replications.iter().flat_map(|r| &r.metrics) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::development::HazardFamily;
    use crate::simulation::ScenarioId;

    fn row(rep: usize, estimator: Estimator, oe: f64) -> MetricRow {
        MetricRow {
            rep,
            strategy: "never_treated".into(),
            estimator,
            n: 10,
            oe: Some(oe),
            observed: None,
            expected: Some(0.5),
            cindex: None,
            auc: None,
            brier: None,
            scaled_brier: None,
        }
    }

    fn rep(i: usize, truth: f64, est: f64) -> ReplicationResult {
        ReplicationResult {
            rep: i,
            metrics: vec![row(i, Estimator::True, truth), row(i, Estimator::Counterfactual, est)],
            calibration: vec![],
            curves: vec![],
            negative_hazards: 0,
            positivity_warnings: 0,
            max_weight: 1.0,
        }
    }

    #[test]
    fn bias_and_monte_carlo_error() {
        let config = SimulationConfig::new(ScenarioId::S1, HazardFamily::Additive);
        let reps = vec![rep(0, 1.0, 1.1), rep(1, 0.9, 1.1), rep(2, 1.0, 1.0)];
        let report = aggregate(&config, &reps, vec![]).unwrap();
        let cell = report.cell(Metric::Oe, "never_treated", Estimator::Counterfactual).unwrap();
        // Differences 0.1, 0.2, 0.0.
        assert!((cell.bias.unwrap() - 0.1).abs() < 1e-12);
        assert!((cell.mc_se.unwrap() - (0.01f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((cell.mean.unwrap() - 3.2 / 3.0).abs() < 1e-12);
        let truth = report.cell(Metric::Oe, "never_treated", Estimator::True).unwrap();
        assert!(truth.bias.is_none());
        assert!(report.cell(Metric::Cindex, "never_treated", Estimator::True).unwrap().mean.is_none());
    }

    #[test]
    fn failure_threshold() {
        let mut config = SimulationConfig::new(ScenarioId::S1, HazardFamily::Additive);
        config.reps = 200;
        let fail = |rep| ReplicationFailure { rep, error: "x".into() };
        assert!(!aggregate(&config, &[], vec![fail(1)]).unwrap().failed);
        assert!(aggregate(&config, &[], vec![fail(1), fail(2)]).unwrap().failed);
    }
}
