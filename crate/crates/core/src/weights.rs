//! Inverse probability weights: artificial-censoring weights for validation,
//! standard-censoring survival, their combination, and stabilized treatment
//! weights for model development.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, LongitudinalSubject, StrategyView};
use crate::glm::{fit_binary_model, BinaryRow, FittedBinaryModel, GlmError, Link, TermSpec, Transform, PROB_FLOOR};

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("{context}: {source}")]
    Model {
        context: String,
        #[source]
        source: GlmError,
    },
    #[error("unknown term `{0}` in weight model formula")]
    UnknownTerm(String),
    #[error("subject `{0}` stops treatment after starting; enable continuation models for non-absorbing data")]
    NotAbsorbing(String),
    #[error("no rows available to fit the {0} model")]
    NoRows(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Where a weight-model term reads its value from, for the row of visit `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermSource {
    /// Time-varying covariate at the current visit, `L_s`.
    Current(usize),
    /// Time-varying covariate at visit 0, `L_0`.
    Initial(usize),
    /// Time-fixed baseline predictor.
    Baseline(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTerm {
    pub source: TermSource,
    pub transform: Transform,
    pub label: String,
}

/// How treatment decisions at different visits share model coefficients.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One model for every visit.
    All,
    /// A model for visit 0 and one pooled over the later visits.
    #[default]
    BaselineSeparate,
    /// One model per visit.
    PerVisit,
}

impl Pooling {
    fn group(self, visit: usize) -> usize {
        match self {
            Pooling::All => 0,
            Pooling::BaselineSeparate => visit.min(1),
            Pooling::PerVisit => visit,
        }
    }
}

/// Treatment model specification shared by validation and development weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentModelSpec {
    pub terms: Vec<ModelTerm>,
    pub link: Link,
    #[serde(default)]
    pub pooling: Pooling,
    /// Link of the visit-0 model when visit 0 has a model of its own;
    /// `link` when absent.
    #[serde(default)]
    pub baseline_link: Option<Link>,
    /// Estimate `P(A_s = 1 | A_{s-1} = 1)` instead of treating treatment as absorbing.
    #[serde(default)]
    pub estimate_continuation: bool,
}

impl TreatmentModelSpec {
    pub fn new(terms: Vec<ModelTerm>, link: Link) -> Self {
        Self {
            terms,
            link,
            pooling: Pooling::default(),
            baseline_link: None,
            estimate_continuation: false,
        }
    }

    /// Parses a formula such as `1 + L`, `1 + log(L+20)`, `1 + L^2`, `1 + first(L)`.
    ///
    /// Bare names refer to time-varying covariates at the current visit or to
    /// baseline predictors; `first(x)` is the visit-0 value of `x`. The
    /// intercept is always included.
    pub fn parse(formula: &str, dataset: &Dataset, link: Link) -> Result<Self, WeightError> {
        let mut terms = Vec::new();
        for raw in split_top_level(formula).into_iter().filter(|t| !t.is_empty()) {
            if raw == "1" {
                continue;
            }
            terms.push(parse_term(raw, dataset)?);
        }
        Ok(Self::new(terms, link))
    }

    fn glm_terms(&self, n_covariates: usize) -> Vec<TermSpec> {
        self.terms
            .iter()
            .map(|t| {
                let column = match t.source {
                    TermSource::Current(j) => j,
                    TermSource::Initial(j) => n_covariates + j,
                    TermSource::Baseline(j) => 2 * n_covariates + j,
                };
                TermSpec::new(column, t.transform, t.label.clone())
            })
            .collect()
    }
}

/// Splits on `+` signs that are not nested inside parentheses.
fn split_top_level(formula: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in formula.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            '+' if depth == 0 => {
                parts.push(formula[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(formula[start..].trim());
    parts
}

fn parse_term(raw: &str, dataset: &Dataset) -> Result<ModelTerm, WeightError> {
    let unknown = || WeightError::UnknownTerm(raw.to_string());
    let source_of = |name: &str| -> Result<TermSource, WeightError> {
        let name = name.trim();
        if let Some(inner) = name.strip_prefix("first(").and_then(|r| r.strip_suffix(')')) {
            return dataset
                .covariate_index(inner.trim())
                .map(TermSource::Initial)
                .ok_or_else(unknown);
        }
        dataset
            .covariate_index(name)
            .map(TermSource::Current)
            .or_else(|| dataset.baseline_index(name).map(TermSource::Baseline))
            .ok_or_else(unknown)
    };
    let (source, transform) = if let Some(inner) =
        raw.strip_prefix("log(").and_then(|r| r.strip_suffix(')'))
    {
        let (name, shift) = match inner.rsplit_once('+') {
            Some((n, c)) => (n, c.trim().parse::<f64>().map_err(|_| unknown())?),
            _ => (inner, 0.0),
        };
        (source_of(name)?, Transform::LogShift(shift))
    } else if let Some(name) = raw.strip_suffix("^2") {
        (source_of(name)?, Transform::Square)
    } else {
        (source_of(raw)?, Transform::Identity)
    };
    Ok(ModelTerm {
        source,
        transform,
        label: raw.to_string(),
    })
}

fn covariate_row(subject: &LongitudinalSubject, visit: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(2 * subject.covariates[visit].len() + subject.baseline.len());
    row.extend_from_slice(&subject.covariates[visit]);
    row.extend_from_slice(&subject.covariates[0]);
    row.extend_from_slice(&subject.baseline);
    row
}

/// Conditional treatment probabilities `P(A_s = 1 | Ā_{s-1}, L̄_s)` evaluated on
/// a subject's observed history.
pub trait TreatmentProbability: Sync {
    /// Unclamped probability of being treated at `visit`.
    fn prob_treated(&self, subject: &LongitudinalSubject, visit: usize) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitModels {
    Pooled(FittedBinaryModel),
    /// Model `k` serves visit `k`; the last one also serves every later visit.
    PerVisit(Vec<FittedBinaryModel>),
}

impl VisitModels {
    fn at(&self, visit: usize) -> &FittedBinaryModel {
        match self {
            VisitModels::Pooled(m) => m,
            VisitModels::PerVisit(ms) => &ms[visit.min(ms.len() - 1)],
        }
    }

    pub fn models(&self) -> Vec<&FittedBinaryModel> {
        match self {
            VisitModels::Pooled(m) => vec![m],
            VisitModels::PerVisit(ms) => ms.iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTreatmentModels {
    pub spec: TreatmentModelSpec,
    /// `P(A_s = 1 | A_{s-1} = 0)`, with `A_{-1} = 0`.
    pub initiation: VisitModels,
    /// `P(A_s = 1 | A_{s-1} = 1)`; `None` means treatment is absorbing.
    pub continuation: Option<VisitModels>,
    /// Rows left out of fitting because a term was undefined there.
    #[serde(default)]
    pub excluded_rows: usize,
    /// `(column, floor)`: values below the smallest one used in fitting are
    /// raised to it before evaluation, so undefined terms cannot arise.
    #[serde(default)]
    pub column_floors: Vec<(usize, f64)>,
}

impl TreatmentProbability for FittedTreatmentModels {
    fn prob_treated(&self, subject: &LongitudinalSubject, visit: usize) -> f64 {
        let previously_treated = visit > 0 && subject.treatment[visit - 1];
        let models = if previously_treated {
            match &self.continuation {
                Some(m) => m,
                None => return 1.0,
            }
        } else {
            &self.initiation
        };
        let mut row = covariate_row(subject, visit);
        for &(c, floor) in &self.column_floors {
            row[c] = row[c].max(floor);
        }
        models.at(visit).raw_probability(&row)
    }
}

impl FittedTreatmentModels {
    pub fn all_models(&self) -> Vec<&FittedBinaryModel> {
        let mut all = self.initiation.models();
        if let Some(c) = &self.continuation {
            all.extend(c.models());
        }
        all
    }
}

/// Rows `(visit, outcome row)` for the treatment decision at each visit.
fn decision_rows(dataset: &Dataset, continuation: bool) -> Vec<(usize, BinaryRow)> {
    let mut rows = Vec::new();
    for s in &dataset.subjects {
        for k in 0..s.visits() {
            let previously_treated = k > 0 && s.treatment[k - 1];
            if previously_treated == continuation {
                rows.push((
                    k,
                    BinaryRow {
                        outcome: s.treatment[k],
                        covariates: covariate_row(s, k),
                        weight: 1.0,
                    },
                ));
            }
        }
    }
    rows
}

fn fit_visit_models(
    rows: Vec<(usize, BinaryRow)>,
    spec: &TreatmentModelSpec,
    terms: &[TermSpec],
    what: &str,
) -> Result<VisitModels, WeightError> {
    if rows.is_empty() {
        return Err(WeightError::NoRows(what.to_string()));
    }
    if spec.pooling == Pooling::All {
        let rows: Vec<BinaryRow> = rows.into_iter().map(|(_, r)| r).collect();
        return fit_binary_model(&rows, terms, spec.link)
            .map(VisitModels::Pooled)
            .map_err(|source| WeightError::Model {
                context: format!("{what} model (pooled over visits)"),
                source,
            });
    }
    let groups = rows.iter().map(|(k, _)| spec.pooling.group(*k) + 1).max().unwrap_or(0);
    let mut models = Vec::with_capacity(groups);
    for g in 0..groups {
        let in_group: Vec<BinaryRow> = rows
            .iter()
            .filter(|(v, _)| spec.pooling.group(*v) == g)
            .map(|(_, r)| r.clone())
            .collect();
        let context = match (spec.pooling, g) {
            (Pooling::BaselineSeparate, 1) => format!("{what} model (pooled over visits 1 and later)"),
            _ => format!("{what} model at visit {g}"),
        };
        let link = match g {
            0 => spec.baseline_link.unwrap_or(spec.link),
            _ => spec.link,
        };
        let fitted = fit_binary_model(&in_group, terms, link)
            .map_err(|source| WeightError::Model { context, source })?;
        models.push(fitted);
    }
    Ok(VisitModels::PerVisit(models))
}

/// Fits the treatment models used to build artificial-censoring weights.
///
/// Only the initiation model is fitted unless `spec.estimate_continuation` is
/// set; in that case an absorbing history is required.
pub fn fit_treatment_models(
    dataset: &Dataset,
    spec: &TreatmentModelSpec,
) -> Result<FittedTreatmentModels, WeightError> {
    let terms = spec.glm_terms(dataset.covariate_names.len());
    let mut excluded_rows = 0;
    let mut rows = decision_rows(dataset, false);
    excluded_rows += retain_defined(&mut rows, &terms);
    let column_floors = domain_floors(&rows, &terms);
    if !spec.estimate_continuation {
        if let Some(s) = dataset
            .subjects
            .iter()
            .find(|s| s.treatment.windows(2).any(|w| w[0] && !w[1]))
        {
            return Err(WeightError::NotAbsorbing(s.id.clone()));
        }
    }
    let initiation = fit_visit_models(rows, spec, &terms, "treatment initiation")?;
    let continuation = if spec.estimate_continuation {
        let mut rows = decision_rows(dataset, true);
        excluded_rows += retain_defined(&mut rows, &terms);
        Some(fit_visit_models(rows, spec, &terms, "treatment continuation")?)
    } else {
        None
    };
    if excluded_rows > 0 {
        log::warn!("{excluded_rows} treatment-model rows left out of fitting: a term is undefined there");
    }
    Ok(FittedTreatmentModels {
        spec: spec.clone(),
        initiation,
        continuation,
        excluded_rows,
        column_floors,
    })
}

/// Drops rows on which a term cannot be evaluated (such as a logarithm of a
/// non-positive value). Returns the number dropped.
fn retain_defined(rows: &mut Vec<(usize, BinaryRow)>, terms: &[TermSpec]) -> usize {
    let before = rows.len();
    rows.retain(|(_, r)| {
        terms
            .iter()
            .all(|t| !matches!(t.evaluate(&r.covariates), Err(GlmError::TermDomain { .. })))
    });
    before - rows.len()
}

fn domain_floors(rows: &[(usize, BinaryRow)], terms: &[TermSpec]) -> Vec<(usize, f64)> {
    terms
        .iter()
        .filter(|t| matches!(t.transform, Transform::LogShift(_)))
        .filter_map(|t| {
            let lowest = rows.iter().map(|(_, r)| r.covariates[t.column]).reduce(f64::min)?;
            Some((t.column, lowest))
        })
        .collect()
}

/// Piecewise-constant weight over the visit grid: `values[s]` applies on `[s, s+1)`
/// and the last value is held afterwards (visits that were never reached
/// contribute no factor).
///
/// An empty trajectory carries no factor and evaluates to 1; subjects with
/// zero follow-up have an empty trajectory but are never evaluated.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightTrajectory {
    values: Vec<f64>,
}

impl WeightTrajectory {
    pub fn unit() -> Self {
        Self { values: Vec::new() }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value on piece `⌊t⌋ = piece`.
    pub fn on_piece(&self, piece: usize) -> f64 {
        match self.values.len() {
            0 => 1.0,
            n => self.values[piece.min(n - 1)],
        }
    }

    /// `w(t)`, using the factor of every visit `s <= ⌊t⌋`.
    pub fn at(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 1.0;
        }
        self.on_piece(t.floor() as usize)
    }

    /// `w(t^-)`; equals 1 at `t <= 0`.
    pub fn left_limit(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        self.on_piece(t.ceil() as usize - 1)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(1.0, f64::max)
    }
}

/// A treatment probability that fell below the clamp floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityWarning {
    pub subject: String,
    pub visit: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpacwResult {
    pub trajectories: Vec<WeightTrajectory>,
    pub warnings: Vec<PositivityWarning>,
}

impl IpacwResult {
    pub fn max_weight(&self) -> f64 {
        self.trajectories.iter().map(WeightTrajectory::max).fold(1.0, f64::max)
    }
}

fn probability_of(
    subject: &LongitudinalSubject,
    visit: usize,
    treated: bool,
    model: &dyn TreatmentProbability,
    warnings: &mut Vec<PositivityWarning>,
) -> f64 {
    let p1 = model.prob_treated(subject, visit);
    let p = if treated { p1 } else { 1.0 - p1 };
    if p < PROB_FLOOR {
        warnings.push(PositivityWarning {
            subject: subject.id.clone(),
            visit,
            probability: p,
        });
    }
    p.clamp(PROB_FLOOR, 1.0)
}

/// Unstabilized artificial-censoring weights
/// `G^{-1}(t|L) = ∏_{s ≤ ⌊t⌋} 1 / P(A_s = a_s | Ā_{s-1} = ā_{s-1}, L̄_s)`,
/// defined on every visit the subject attended while still following the strategy.
pub fn compute_ipacw(
    dataset: &Dataset,
    view: &StrategyView,
    model: &dyn TreatmentProbability,
) -> IpacwResult {
    let mut warnings = Vec::new();
    let trajectories = view
        .records
        .iter()
        .map(|r| {
            let s = &dataset.subjects[r.subject];
            let adherent = r.deviation.unwrap_or(s.visits()).min(s.visits());
            let mut cumulative = 1.0;
            let values = (0..adherent)
                .map(|k| {
                    let planned = view.strategy.path[k];
                    cumulative /= probability_of(s, k, planned, model, &mut warnings);
                    cumulative
                })
                .collect();
            WeightTrajectory::from_values(values)
        })
        .collect();
    IpacwResult {
        trajectories,
        warnings,
    }
}

/// Caps every weight value at the given percentile (0–100) of all values.
/// Returns the cap that was applied.
pub fn truncate_weights(trajectories: &mut [WeightTrajectory], percentile: f64) -> f64 {
    let mut all: Vec<f64> = trajectories.iter().flat_map(|t| t.values.iter().copied()).collect();
    if all.is_empty() {
        return f64::INFINITY;
    }
    all.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * (all.len() - 1) as f64).round() as usize;
    let cap = all[rank.min(all.len() - 1)];
    for t in trajectories.iter_mut() {
        for v in &mut t.values {
            *v = v.min(cap);
        }
    }
    cap
}

/// Kaplan–Meier estimate of the standard-censoring survival `Ĝ_c(t) = P(C > t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringSurvival {
    times: Vec<f64>,
    survival: Vec<f64>,
}

impl CensoringSurvival {
    /// `Ĝ_c ≡ 1`.
    pub fn none() -> Self {
        Self {
            times: Vec::new(),
            survival: Vec::new(),
        }
    }

    /// Builds the estimate from `(end of follow-up, censored)` pairs. Events are
    /// treated as censorings of the censoring process; at tied times the
    /// event-time subjects remain in the censoring risk set.
    pub fn from_follow_up(follow_up: impl IntoIterator<Item = (f64, bool)>) -> Self {
        let mut obs: Vec<(f64, bool)> = follow_up.into_iter().collect();
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = obs.len();
        let mut times = Vec::new();
        let mut survival = Vec::new();
        let mut current = 1.0;
        let mut i = 0;
        while i < n {
            let t = obs[i].0;
            let at_risk = (n - i) as f64;
            let mut censored = 0usize;
            let mut j = i;
            while j < n && obs[j].0 == t {
                censored += usize::from(obs[j].1);
                j += 1;
            }
            if censored > 0 {
                current *= 1.0 - censored as f64 / at_risk;
                times.push(t);
                survival.push(current);
            }
            i = j;
        }
        Self { times, survival }
    }

    /// `Ĝ_c(t)`, right-continuous.
    pub fn survival(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            1.0
        } else {
            self.survival[idx - 1]
        }
    }

    /// `Ĝ_c(t^-)`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s < t);
        if idx == 0 {
            1.0
        } else {
            self.survival[idx - 1]
        }
    }
}

/// Censoring survival of the standard censoring process in `dataset`.
pub fn estimate_standard_censoring(dataset: &Dataset) -> CensoringSurvival {
    CensoringSurvival::from_follow_up(dataset.subjects.iter().map(|s| (s.event_time, !s.event)))
}

/// `G^{-1}_{a0c}(t|L) = G^{-1}_{a0}(t|L) · G_c^{-1}(t)` for every subject of a view.
///
/// The evaluators return `None` where `Ĝ_c` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedWeights {
    pub ipacw: Vec<WeightTrajectory>,
    pub censoring: CensoringSurvival,
}

fn inverse(g: f64) -> Option<f64> {
    (g > 0.0).then(|| 1.0 / g)
}

impl CombinedWeights {
    /// Unit artificial-censoring weights for `n` subjects.
    pub fn censoring_only(n: usize, censoring: CensoringSurvival) -> Self {
        Self {
            ipacw: vec![WeightTrajectory::unit(); n],
            censoring,
        }
    }

    pub fn len(&self) -> usize {
        self.ipacw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ipacw.is_empty()
    }

    /// `G^{-1}_{a0c}(t|L_i)`.
    pub fn at(&self, i: usize, t: f64) -> Option<f64> {
        inverse(self.censoring.survival(t)).map(|g| g * self.ipacw[i].at(t))
    }

    /// `G^{-1}_{a0c}(t^-|L_i)`.
    pub fn left_limit(&self, i: usize, t: f64) -> Option<f64> {
        inverse(self.censoring.left_limit(t)).map(|g| g * self.ipacw[i].left_limit(t))
    }

    /// Weight for subject `i` observed event free through `t`: the adherence
    /// factor includes visit `⌊t⌋`, and a standard censoring at exactly `t`
    /// still counts as observed through `t`.
    pub fn event_free(&self, i: usize, t: f64) -> Option<f64> {
        inverse(self.censoring.left_limit(t)).map(|g| g * self.ipacw[i].at(t))
    }
}

pub fn combine_weights(ipacw: Vec<WeightTrajectory>, censoring: CensoringSurvival) -> CombinedWeights {
    CombinedWeights { ipacw, censoring }
}

/// Stabilized treatment weights over each subject's full observed history,
/// `∏_{s ≤ ⌊t⌋} P(A_s = a_s | Ā_{s-1}, X) / P(A_s = a_s | Ā_{s-1}, L̄_s)`.
pub fn compute_stabilized_iptw(
    dataset: &Dataset,
    numerator: &dyn TreatmentProbability,
    denominator: &dyn TreatmentProbability,
) -> IpacwResult {
    let mut warnings = Vec::new();
    let trajectories = dataset
        .subjects
        .iter()
        .map(|s| {
            let mut cumulative = 1.0;
            let values = (0..s.visits())
                .map(|k| {
                    let a = s.treatment[k];
                    let num = probability_of(s, k, a, numerator, &mut Vec::new());
                    let den = probability_of(s, k, a, denominator, &mut warnings);
                    cumulative *= num / den;
                    cumulative
                })
                .collect();
            WeightTrajectory::from_values(values)
        })
        .collect();
    IpacwResult {
        trajectories,
        warnings,
    }
}

/// Fitted numerator and denominator models with the resulting stabilized weights.
#[derive(Debug, Clone)]
pub struct StabilizedWeights {
    pub numerator: FittedTreatmentModels,
    pub denominator: FittedTreatmentModels,
    pub weights: IpacwResult,
}

pub fn fit_stabilized_iptw(
    dataset: &Dataset,
    numerator: &TreatmentModelSpec,
    denominator: &TreatmentModelSpec,
) -> Result<StabilizedWeights, WeightError> {
    let numerator = fit_treatment_models(dataset, numerator)?;
    let denominator = fit_treatment_models(dataset, denominator)?;
    let weights = compute_stabilized_iptw(dataset, &numerator, &denominator);
    Ok(StabilizedWeights {
        numerator,
        denominator,
        weights,
    })
}

/// Diagnostic dump: `id,interval_start,weight`.
pub fn write_weight_csv<W: Write>(
    dataset: &Dataset,
    subjects: &[usize],
    trajectories: &[WeightTrajectory],
    writer: W,
) -> Result<(), WeightError> {
    let mut w = std::io::BufWriter::new(writer);
    writeln!(w, "id,interval_start,weight")?;
    for (&i, t) in subjects.iter().zip(trajectories) {
        for (k, v) in t.values().iter().enumerate() {
            writeln!(w, "{},{},{}", dataset.subjects[i].id, k, v)?;
        }
    }
    w.flush()?;
    Ok(())
}
