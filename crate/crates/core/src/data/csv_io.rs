use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, LongitudinalSubject, StrategyView};

/// Maps the long-format CSV columns onto subject fields.
///
/// Empty `covariates` / `baseline` lists select every column whose name
/// starts with `L` / `P` respectively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub id: String,
    pub visit: String,
    pub treatment: String,
    pub event_time: String,
    pub event: String,
    pub covariates: Vec<String>,
    pub baseline: Vec<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            visit: "visit".into(),
            treatment: "A".into(),
            event_time: "event_time".into(),
            event: "event".into(),
            covariates: Vec::new(),
            baseline: Vec::new(),
        }
    }
}

impl ColumnSchema {
    fn resolve(&self, headers: &csv::StringRecord) -> Result<ResolvedColumns, DataError> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingColumn(name.to_string()))
        };
        let mapped = [
            &self.id,
            &self.visit,
            &self.treatment,
            &self.event_time,
            &self.event,
        ];
        let auto = |prefix: char| -> Vec<String> {
            headers
                .iter()
                .filter(|h| h.starts_with(prefix) && !mapped.iter().any(|m| m.as_str() == *h))
                .map(str::to_string)
                .collect()
        };
        let covariate_names = if self.covariates.is_empty() {
            auto('L')
        } else {
            self.covariates.clone()
        };
        let baseline_names = if self.baseline.is_empty() {
            auto('P')
        } else {
            self.baseline.clone()
        };
        Ok(ResolvedColumns {
            id: find(&self.id)?,
            visit: find(&self.visit)?,
            treatment: find(&self.treatment)?,
            event_time: find(&self.event_time)?,
            event: find(&self.event)?,
            covariates: covariate_names
                .iter()
                .map(|n| find(n))
                .collect::<Result<_, _>>()?,
            baseline: baseline_names
                .iter()
                .map(|n| find(n))
                .collect::<Result<_, _>>()?,
            covariate_names,
            baseline_names,
        })
    }
}

struct ResolvedColumns {
    id: usize,
    visit: usize,
    treatment: usize,
    event_time: usize,
    event: usize,
    covariates: Vec<usize>,
    baseline: Vec<usize>,
    covariate_names: Vec<String>,
    baseline_names: Vec<String>,
}

struct PendingSubject {
    first_row: usize,
    event_time: f64,
    event: bool,
    baseline: Vec<f64>,
    visits: Vec<(usize, bool, Vec<f64>)>,
}

fn parse_f64(raw: &str, row: usize, column: &str) -> Result<f64, DataError> {
    raw.trim().parse::<f64>().map_err(|_| DataError::InvalidRow {
        row,
        message: format!("column `{column}`: `{raw}` is not a number"),
    })
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<bool, DataError> {
    match raw.trim() {
        "0" | "0.0" => Ok(false),
        "1" | "1.0" => Ok(true),
        other => Err(DataError::InvalidRow {
            row,
            message: format!("column `{column}` must be 0 or 1, found `{other}`"),
        }),
    }
}

pub fn load_longitudinal_csv(path: &Path, schema: &ColumnSchema) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_longitudinal_csv(file, schema)
}

/// Reads long-format data: one row per subject-visit, with the event time,
/// event indicator and baseline predictors repeated on every row of a subject.
///
/// Subjects keep the order of their first row in the file.
pub fn read_longitudinal_csv<R: Read>(
    reader: R,
    schema: &ColumnSchema,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = schema.resolve(&headers)?;

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, PendingSubject> = HashMap::new();

    for (index, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = index + 2;
        let id = record[cols.id].to_string();
        let visit_raw = parse_f64(&record[cols.visit], row, &schema.visit)?;
        if visit_raw < 0.0 || visit_raw.fract() != 0.0 {
            return Err(DataError::InvalidRow {
                row,
                message: format!("visit `{}` is not a nonnegative integer", &record[cols.visit]),
            });
        }
        let visit = visit_raw as usize;
        let treated = parse_binary(&record[cols.treatment], row, &schema.treatment)?;
        let event_time = parse_f64(&record[cols.event_time], row, &schema.event_time)?;
        let event = parse_binary(&record[cols.event], row, &schema.event)?;
        let covariates = cols
            .covariates
            .iter()
            .zip(&cols.covariate_names)
            .map(|(&c, name)| parse_f64(&record[c], row, name))
            .collect::<Result<Vec<_>, _>>()?;
        let baseline = cols
            .baseline
            .iter()
            .zip(&cols.baseline_names)
            .map(|(&c, name)| parse_f64(&record[c], row, name))
            .collect::<Result<Vec<_>, _>>()?;
        if visit as f64 >= event_time {
            return Err(DataError::InvalidRow {
                row,
                message: format!("visit {visit} is at or after the end of follow-up {event_time}"),
            });
        }

        match pending.get_mut(&id) {
            Some(p) => {
                if p.event_time != event_time || p.event != event || p.baseline != baseline {
                    return Err(DataError::InvalidRow {
                        row,
                        message: format!(
                            "subject `{id}` has time-fixed columns that differ from row {}",
                            p.first_row
                        ),
                    });
                }
                if p.visits.iter().any(|(v, _, _)| *v == visit) {
                    return Err(DataError::DuplicateVisit { id, visit });
                }
                p.visits.push((visit, treated, covariates));
            }
            None => {
                order.push(id.clone());
                pending.insert(
                    id,
                    PendingSubject {
                        first_row: row,
                        event_time,
                        event,
                        baseline,
                        visits: vec![(visit, treated, covariates)],
                    },
                );
            }
        }
    }

    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let mut p = pending.remove(&id).expect("subject recorded in order");
        p.visits.sort_by_key(|(v, _, _)| *v);
        if let Some(gap) = p.visits.iter().enumerate().find(|(k, (v, _, _))| k != v) {
            return Err(DataError::InvalidSubject {
                id,
                message: format!("visits must run 0,1,2,...; visit {} is missing", gap.0),
            });
        }
        let (treatment, covariates) = p.visits.into_iter().map(|(_, a, l)| (a, l)).unzip();
        subjects.push(LongitudinalSubject {
            id,
            covariates,
            treatment,
            baseline: p.baseline,
            event_time: p.event_time,
            event: p.event,
        });
    }
    Dataset::new(cols.covariate_names, cols.baseline_names, subjects)
}

fn header(dataset: &Dataset) -> Vec<String> {
    let mut h: Vec<String> = ["id", "visit", "A"].iter().map(|s| s.to_string()).collect();
    h.extend(dataset.covariate_names.iter().cloned());
    h.extend(["event_time".to_string(), "event".to_string()]);
    h.extend(dataset.baseline_names.iter().cloned());
    h
}

fn subject_rows(s: &LongitudinalSubject) -> impl Iterator<Item = Vec<String>> + '_ {
    (0..s.visits()).map(move |k| {
        let mut row = vec![
            s.id.clone(),
            k.to_string(),
            u8::from(s.treatment[k]).to_string(),
        ];
        row.extend(s.covariates[k].iter().map(f64::to_string));
        row.push(s.event_time.to_string());
        row.push(u8::from(s.event).to_string());
        row.extend(s.baseline.iter().map(f64::to_string));
        row
    })
}

/// Writes a dataset in the long format read by [`load_longitudinal_csv`] with
/// the default schema. Numbers use the shortest round-trip representation, so
/// re-reading reproduces the dataset exactly.
pub fn write_longitudinal_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(dataset))?;
    for s in &dataset.subjects {
        for row in subject_rows(s) {
            w.write_record(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Same layout as [`write_longitudinal_csv`] plus `c_a0`, `t_tilde` and `d_tilde`.
pub fn write_view_csv<W: Write>(
    dataset: &Dataset,
    view: &StrategyView,
    writer: W,
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut h = header(dataset);
    h.extend(["c_a0", "t_tilde", "d_tilde"].iter().map(|s| s.to_string()));
    w.write_record(h)?;
    for r in &view.records {
        let s = &dataset.subjects[r.subject];
        let c = r.deviation.map_or_else(|| "inf".to_string(), |k| k.to_string());
        for mut row in subject_rows(s) {
            row.push(c.clone());
            row.push(r.time.to_string());
            row.push(u8::from(r.is_event()).to_string());
            w.write_record(row)?;
        }
    }
    w.flush()?;
    Ok(())
}
