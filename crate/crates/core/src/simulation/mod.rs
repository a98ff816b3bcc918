//! Simulation study: data-generating mechanisms, scenarios, the per-replication
//! validation pipeline and aggregation against perfect-data truth.

mod aggregate;
mod dgm;
mod rng;
mod run;
mod scenario;

use thiserror::Error;

pub use aggregate::{
    aggregate, config_hash, write_metrics_csv, AggregateCell, AggregateReport, CalibrationSummary, CurveSummary, Metric,
};
pub use dgm::{
    generate_observational, generate_perfect, simulate_event_time, DgmParams, HazardParams, LogitCoefs,
    OracleTreatment, SimulatedData,
};
pub use rng::{Purpose, Role, StreamKey};
pub use run::{
    prepare_replication, run_replication, run_scenario, CalibrationRow, CurveRow, Estimator, MetricRow,
    ReplicationData, ReplicationFailure, ReplicationResult, ScenarioRun, SimulationConfig,
};
pub use scenario::{Scenario, ScenarioId};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Development(#[from] crate::development::DevelopmentError),
    #[error(transparent)]
    Weights(#[from] crate::weights::WeightError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
