//! Longitudinal subject records, static treatment strategies and the
//! artificially censored views built from them.

mod csv_io;

pub use csv_io::{load_longitudinal_csv, write_longitudinal_csv, write_view_csv, ColumnSchema};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("subject `{id}`: duplicate visit {visit}")]
    DuplicateVisit { id: String, visit: usize },
    #[error("subject `{id}`: {message}")]
    InvalidSubject { id: String, message: String },
    #[error("strategy `{name}` has {len} visits but the dataset needs {needed}")]
    StrategyTooShort { name: String, len: usize, needed: usize },
    #[error("no subject in the dataset adheres to strategy `{0}`")]
    EmptySubset(String),
}

/// One subject's visit-indexed covariate and treatment history together with
/// the end of follow-up in continuous time.
///
/// Visit `k` is recorded at time `k`; a subject has visits `0..covariates.len()`
/// and every recorded visit lies strictly before `event_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalSubject {
    pub id: String,
    /// `L_k` for every recorded visit.
    pub covariates: Vec<Vec<f64>>,
    /// `A_k` for every recorded visit.
    pub treatment: Vec<bool>,
    /// Time-fixed predictors recorded at baseline.
    pub baseline: Vec<f64>,
    pub event_time: f64,
    pub event: bool,
}

impl LongitudinalSubject {
    pub fn visits(&self) -> usize {
        self.treatment.len()
    }

    /// Covariates in force at time `t`, carrying the last visit forward.
    pub fn covariates_at(&self, t: f64) -> Option<&[f64]> {
        if self.covariates.is_empty() || t < 0.0 {
            return None;
        }
        let k = (t.floor() as usize).min(self.covariates.len() - 1);
        Some(&self.covariates[k])
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |message: String| DataError::InvalidSubject {
            id: self.id.clone(),
            message,
        };
        if !(self.event_time.is_finite() && self.event_time >= 0.0) {
            return Err(fail(format!("event time {} is not a nonnegative number", self.event_time)));
        }
        if self.covariates.len() != self.treatment.len() {
            return Err(fail("covariate and treatment histories differ in length".into()));
        }
        if let Some(last) = self.visits().checked_sub(1) {
            if last as f64 >= self.event_time {
                return Err(fail(format!(
                    "visit {last} is at or after the end of follow-up {}",
                    self.event_time
                )));
            }
        }
        let width = self.covariates.first().map_or(0, Vec::len);
        if self.covariates.iter().any(|row| row.len() != width) {
            return Err(fail("covariate rows have inconsistent widths".into()));
        }
        if self
            .covariates
            .iter()
            .flatten()
            .chain(self.baseline.iter())
            .any(|v| !v.is_finite())
        {
            return Err(fail("non-finite covariate value".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub covariate_names: Vec<String>,
    pub baseline_names: Vec<String>,
    pub subjects: Vec<LongitudinalSubject>,
}

impl Dataset {
    pub fn new(
        covariate_names: Vec<String>,
        baseline_names: Vec<String>,
        subjects: Vec<LongitudinalSubject>,
    ) -> Result<Self, DataError> {
        for s in &subjects {
            s.validate()?;
            if let Some(row) = s.covariates.first() {
                if row.len() != covariate_names.len() {
                    return Err(DataError::InvalidSubject {
                        id: s.id.clone(),
                        message: format!(
                            "expected {} covariates, found {}",
                            covariate_names.len(),
                            row.len()
                        ),
                    });
                }
            }
            if s.baseline.len() != baseline_names.len() {
                return Err(DataError::InvalidSubject {
                    id: s.id.clone(),
                    message: format!(
                        "expected {} baseline predictors, found {}",
                        baseline_names.len(),
                        s.baseline.len()
                    ),
                });
            }
        }
        Ok(Self {
            covariate_names,
            baseline_names,
            subjects,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn max_visits(&self) -> usize {
        self.subjects.iter().map(|s| s.visits()).max().unwrap_or(0)
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    pub fn baseline_index(&self, name: &str) -> Option<usize> {
        self.baseline_names.iter().position(|n| n == name)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            covariate_names: self.covariate_names.clone(),
            baseline_names: self.baseline_names.clone(),
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }
}

/// A static deterministic treatment strategy: the treatment to take at each visit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub name: String,
    pub path: Vec<bool>,
}

impl StrategySpec {
    pub const NEVER_TREATED: &'static str = "never_treated";
    pub const ALWAYS_TREATED: &'static str = "always_treated";

    pub fn never_treated(visits: usize) -> Self {
        Self {
            name: Self::NEVER_TREATED.to_string(),
            path: vec![false; visits],
        }
    }

    pub fn always_treated(visits: usize) -> Self {
        Self {
            name: Self::ALWAYS_TREATED.to_string(),
            path: vec![true; visits],
        }
    }

    /// Resolves a built-in strategy by name (`never_treated`/`never`, `always_treated`/`always`).
    pub fn builtin(name: &str, visits: usize) -> Option<Self> {
        match name {
            "never_treated" | "never" => Some(Self::never_treated(visits)),
            "always_treated" | "always" => Some(Self::always_treated(visits)),
            _ => None,
        }
    }

    pub fn treatment_at(&self, visit: usize) -> bool {
        self.path[visit]
    }

    fn check_covers(&self, dataset: &Dataset) -> Result<(), DataError> {
        let needed = dataset.max_visits();
        if self.path.len() < needed {
            return Err(DataError::StrategyTooShort {
                name: self.name.clone(),
                len: self.path.len(),
                needed,
            });
        }
        Ok(())
    }

    /// First visit at which `subject` deviates from this strategy.
    pub fn first_deviation(&self, subject: &LongitudinalSubject) -> Option<usize> {
        subject
            .treatment
            .iter()
            .zip(&self.path)
            .position(|(observed, planned)| observed != planned)
    }
}

/// Why follow-up ended in a view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndOfFollowUp {
    Event,
    /// Censored in the source data (loss to follow-up, end of study).
    Censored,
    /// Censored at the first visit where treatment deviated from the strategy.
    Deviated,
}

/// Follow-up of one subject within a [`StrategyView`] or a plain evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    /// Index of the subject in the source dataset.
    pub subject: usize,
    /// Artificial censoring visit, `None` when the subject never deviates.
    pub deviation: Option<usize>,
    pub time: f64,
    pub end: EndOfFollowUp,
}

impl ViewRecord {
    pub fn is_event(&self) -> bool {
        self.end == EndOfFollowUp::Event
    }

    /// Observed to be event free through time `t` (inclusive).
    ///
    /// A standard censoring at exactly `t` counts as event free through `t`;
    /// an artificial censoring at `t` does not, because the deviating visit at
    /// `t` is already outside the strategy.
    pub fn event_free_through(&self, t: f64) -> bool {
        self.time > t || (self.time == t && self.end == EndOfFollowUp::Censored)
    }

    /// Plain record for a subject evaluated without artificial censoring.
    pub fn unmodified(index: usize, subject: &LongitudinalSubject) -> Self {
        Self {
            subject: index,
            deviation: None,
            time: subject.event_time,
            end: if subject.event {
                EndOfFollowUp::Event
            } else {
                EndOfFollowUp::Censored
            },
        }
    }
}

/// An artificially censored copy of a dataset under a strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyView {
    pub strategy: StrategySpec,
    pub records: Vec<ViewRecord>,
}

impl StrategyView {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn events(&self) -> usize {
        self.records.iter().filter(|r| r.is_event()).count()
    }

    /// Number of subjects with positive follow-up.
    pub fn followed(&self) -> usize {
        self.records.iter().filter(|r| r.time > 0.0).count()
    }
}

/// Censors each subject at the first visit where observed treatment departs
/// from `strategy`.
///
/// An event at exactly the deviation time counts as censored.
pub fn apply_artificial_censoring(
    dataset: &Dataset,
    strategy: &StrategySpec,
) -> Result<StrategyView, DataError> {
    strategy.check_covers(dataset)?;
    let records = dataset
        .subjects
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let deviation = strategy.first_deviation(s);
            match deviation {
                Some(k) if (k as f64) <= s.event_time => ViewRecord {
                    subject: i,
                    deviation,
                    time: k as f64,
                    end: EndOfFollowUp::Deviated,
                },
                _ => ViewRecord {
                    deviation,
                    ..ViewRecord::unmodified(i, s)
                },
            }
        })
        .collect();
    Ok(StrategyView {
        strategy: strategy.clone(),
        records,
    })
}

/// Subjects whose observed treatment matches `strategy` at every visit that
/// influences follow-up up to `horizon`: visit 0 always, and each later visit
/// `k` with `k < min(T*, horizon)`.
///
/// Subjects with an event before they had the chance to deviate are kept,
/// which is what makes this naive comparator prone to immortal-time bias.
pub fn adherent_subset(
    dataset: &Dataset,
    strategy: &StrategySpec,
    horizon: f64,
) -> Result<Vec<usize>, DataError> {
    strategy.check_covers(dataset)?;
    let members: Vec<usize> = dataset
        .subjects
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            s.treatment.iter().enumerate().all(|(k, &a)| {
                let relevant = k == 0 || (k as f64) < horizon.min(s.event_time);
                !relevant || a == strategy.path[k]
            })
        })
        .map(|(i, _)| i)
        .collect();
    if members.is_empty() {
        return Err(DataError::EmptySubset(strategy.name.clone()));
    }
    Ok(members)
}
