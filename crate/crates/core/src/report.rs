//! Flat, plot-ready tables derived from simulation and validation reports.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::PerformanceReport;
use crate::simulation::{AggregateReport, Metric};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Calibration,
    OutcomeCurves,
    Brier,
}

impl FromStr for PlotKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "calibration" => Ok(Self::Calibration),
            "outcome-curves" | "outcome_curves" => Ok(Self::OutcomeCurves),
            "brier" => Ok(Self::Brier),
            other => Err(format!(
                "unknown plot kind `{other}` (expected calibration, outcome-curves or brier)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationPoint {
    pub strategy: String,
    pub estimator: String,
    pub group: usize,
    pub mean_predicted: f64,
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub strategy: String,
    pub estimator: String,
    pub time: f64,
    pub mean_predicted: f64,
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrierPoint {
    pub strategy: String,
    pub estimator: String,
    pub metric: String,
    pub value: Option<f64>,
    pub bias: Option<f64>,
    pub mc_se: Option<f64>,
}

/// Rows of one plot table.
#[derive(Debug, Clone, PartialEq)]
pub enum PlotData {
    Calibration(Vec<CalibrationPoint>),
    Curves(Vec<CurvePoint>),
    Brier(Vec<BrierPoint>),
}

/// A single-dataset validation of predictions under one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub version: String,
    /// Resolved settings of the run.
    pub settings: serde_json::Value,
    /// SHA-256 over the input files.
    pub input_hash: String,
    pub strategy: String,
    pub tau: f64,
    pub n: usize,
    /// Subjects following the strategy at the first visit.
    pub followed: usize,
    pub max_weight: f64,
    pub positivity_warnings: usize,
    pub counterfactual: PerformanceReport,
    /// Absent when nobody in the data follows the strategy up to the horizon.
    pub subset: Option<PerformanceReport>,
}

impl ValidationReport {
    fn estimators(&self) -> Vec<(&'static str, &PerformanceReport)> {
        let mut out = vec![("counterfactual", &self.counterfactual)];
        if let Some(s) = &self.subset {
            out.push(("subset", s));
        }
        out
    }
}

/// Either kind of report, as read back from JSON.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyReport {
    Simulation(Box<AggregateReport>),
    Validation(Box<ValidationReport>),
}

impl AnyReport {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        match serde_json::from_str::<AggregateReport>(text) {
            Ok(r) => Ok(Self::Simulation(Box::new(r))),
            Err(e) => serde_json::from_str::<ValidationReport>(text)
                .map(|r| Self::Validation(Box::new(r)))
                .map_err(|_| e),
        }
    }
}

pub fn plot_data(report: &AnyReport, kind: PlotKind) -> Result<PlotData, String> {
    match (report, kind) {
        (AnyReport::Simulation(r), PlotKind::Calibration) => Ok(PlotData::Calibration(
            r.calibration
                .iter()
                .map(|c| CalibrationPoint {
                    strategy: c.strategy.clone(),
                    estimator: c.estimator.as_str().into(),
                    group: c.group,
                    mean_predicted: c.mean_predicted,
                    observed: c.observed,
                })
                .collect(),
        )),
        (AnyReport::Simulation(r), PlotKind::OutcomeCurves) => Ok(PlotData::Curves(
            r.curves
                .iter()
                .map(|c| CurvePoint {
                    strategy: c.strategy.clone(),
                    estimator: c.estimator.as_str().into(),
                    time: c.time,
                    mean_predicted: c.mean_predicted,
                    observed: c.observed,
                })
                .collect(),
        )),
        (AnyReport::Simulation(r), PlotKind::Brier) => {
            let mut rows = Vec::new();
            for metric in [Metric::Brier, Metric::ScaledBrier] {
                let name = if metric == Metric::Brier { "brier" } else { "scaled_brier" };
                for c in r.cells.iter().filter(|c| c.metric == metric) {
                    rows.push(BrierPoint {
                        strategy: c.strategy.clone(),
                        estimator: c.estimator.as_str().into(),
                        metric: name.into(),
                        value: c.mean,
                        bias: c.bias,
                        mc_se: c.mc_se,
                    });
                }
            }
            Ok(PlotData::Brier(rows))
        }
        (AnyReport::Validation(r), PlotKind::Calibration) => Ok(PlotData::Calibration(
            r.estimators()
                .into_iter()
                .flat_map(|(name, p)| {
                    p.calibration.groups.iter().map(move |g| CalibrationPoint {
                        strategy: r.strategy.clone(),
                        estimator: name.into(),
                        group: g.group,
                        mean_predicted: g.mean_predicted,
                        observed: g.observed,
                    })
                })
                .collect(),
        )),
        (AnyReport::Validation(r), PlotKind::Brier) => Ok(PlotData::Brier(
            r.estimators()
                .into_iter()
                .flat_map(|(name, p)| {
                    [("brier", p.brier.brier), ("scaled_brier", p.brier.scaled)].map(|(metric, value)| BrierPoint {
                        strategy: r.strategy.clone(),
                        estimator: name.into(),
                        metric: metric.into(),
                        value,
                        bias: None,
                        mc_se: None,
                    })
                })
                .collect(),
        )),
        (AnyReport::Validation(_), PlotKind::OutcomeCurves) => {
            Err("outcome curves are only available for simulation reports".into())
        }
    }
}

impl PlotData {
    pub fn len(&self) -> usize {
        match self {
            PlotData::Calibration(r) => r.len(),
            PlotData::Curves(r) => r.len(),
            PlotData::Brier(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        match self {
            PlotData::Calibration(rows) => rows.iter().try_for_each(|r| w.serialize(r))?,
            PlotData::Curves(rows) => rows.iter().try_for_each(|r| w.serialize(r))?,
            PlotData::Brier(rows) => rows.iter().try_for_each(|r| w.serialize(r))?,
        }
        w.flush()?;
        Ok(())
    }
}

/// Calibration groups of a single performance report as CSV.
pub fn write_calibration_csv<W: Write>(
    rows: &[(&str, &str, &PerformanceReport)],
    writer: W,
) -> Result<(), csv::Error> {
    #[derive(Serialize)]
    struct Row<'a> {
        strategy: &'a str,
        estimator: &'a str,
        group: usize,
        size: usize,
        lower: f64,
        upper: f64,
        mean_predicted: f64,
        observed: Option<f64>,
    }
    let mut w = csv::Writer::from_writer(writer);
    for (strategy, estimator, report) in rows {
        for g in &report.calibration.groups {
            w.serialize(Row {
                strategy,
                estimator,
                group: g.group,
                size: g.size,
                lower: g.lower,
                upper: g.upper,
                mean_predicted: g.mean_predicted,
                observed: g.observed,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

