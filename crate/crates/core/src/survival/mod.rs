//! Weighted survival estimators: Kaplan–Meier, Cox partial likelihood and
//! Aalen additive hazards, plus risk prediction along a covariate path.

mod aalen;
mod cox;
mod km;
mod predict;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aalen::{fit_weighted_aalen, AalenFit, AalenStratum};
pub use cox::{fit_weighted_cox, CoxFit, CoxOptions};
pub use km::{
    unweighted_kaplan_meier, weighted_kaplan_meier, FixedWeights, KmObservation, LeftLimitTrajectories,
    RiskSetWeights, UnitWeights, WeightedSurvivalCurve,
};
pub use predict::{CovariatePath, HazardPolicy, SurvivalFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("no events in the data")]
    NoEvents,
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("Cox fit did not converge in {iterations} iterations (last loglik change {change:e})")]
    NotConverged { iterations: usize, change: f64 },
    #[error("Cox information matrix is singular")]
    Singular,
    #[error("prediction horizon {tau} is beyond the last fitted time {max_time}")]
    HorizonBeyondFit { tau: f64, max_time: f64 },
    #[error("covariate path has {got} columns, fit expects {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("stratum {0} was not fitted")]
    UnknownStratum(usize),
    #[error("stratum `{0}` has no events")]
    EmptyStratum(String),
}

/// One interval `(start, stop]` of a subject's follow-up with constant
/// covariates and case weight.
#[derive(Debug, Clone, PartialEq)]
pub struct CountingRow {
    pub start: f64,
    pub stop: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
    pub weight: f64,
    pub stratum: usize,
}

fn check_rows(rows: &[CountingRow], n_cov: usize) -> Result<(), SurvivalError> {
    for (i, r) in rows.iter().enumerate() {
        let fail = |message: &str| {
            Err(SurvivalError::InvalidRow {
                row: i,
                message: message.to_string(),
            })
        };
        if !(r.start.is_finite() && r.stop.is_finite()) || r.stop <= r.start {
            return fail("interval must satisfy start < stop");
        }
        if !(r.weight.is_finite() && r.weight >= 0.0) {
            return fail("weight must be finite and nonnegative");
        }
        if r.covariates.len() != n_cov {
            return fail("covariate count differs from the covariate names");
        }
        if r.covariates.iter().any(|x| !x.is_finite()) {
            return fail("non-finite covariate");
        }
    }
    Ok(())
}

/// Distinct event times of rows with positive weight, ascending.
fn event_times(rows: &[CountingRow]) -> Vec<f64> {
    let mut times: Vec<f64> = rows.iter().filter(|r| r.event && r.weight > 0.0).map(|r| r.stop).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// Right-continuous step function with jumps at `times`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    /// Value at `t`, with `0` before the first jump.
    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            0.0
        } else {
            self.values[idx - 1]
        }
    }
}
