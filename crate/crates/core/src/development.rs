//! Interventional prediction models: marginal structural models fitted with
//! stabilized inverse probability of treatment weights, and the
//! clone-censor-weight alternative.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{apply_artificial_censoring, DataError, Dataset, LongitudinalSubject, StrategySpec};
use crate::glm::Link;
use crate::survival::{
    fit_weighted_aalen, fit_weighted_cox, CountingRow, CovariatePath, CoxOptions, HazardPolicy, SurvivalError,
    SurvivalFit,
};
use crate::weights::{compute_ipacw, fit_stabilized_iptw, fit_treatment_models, TreatmentModelSpec, WeightError};

#[derive(Debug, Error)]
pub enum DevelopmentError {
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("strategy `{0}` is not covered by this model")]
    UnknownStrategy(String),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("measurement error standard deviation must be positive and finite")]
    InvalidErrorSd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardFamily {
    Additive,
    Cox,
}

impl std::str::FromStr for HazardFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "additive" | "aalen" => Ok(Self::Additive),
            "cox" => Ok(Self::Cox),
            other => Err(format!("unknown hazard family `{other}` (expected additive or cox)")),
        }
    }
}

/// Treatment-history term of the hazard model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentHistory {
    /// `β_A · a_{⌊t⌋}`.
    #[default]
    Current,
    /// Current treatment plus the number of treated visits so far.
    CurrentAndDuration,
}

impl TreatmentHistory {
    fn names(self) -> &'static [&'static str] {
        match self {
            TreatmentHistory::Current => &["A"],
            TreatmentHistory::CurrentAndDuration => &["A", "A_duration"],
        }
    }

    fn terms(self, path: &[bool], visit: usize) -> Vec<f64> {
        let a = f64::from(u8::from(path[visit]));
        match self {
            TreatmentHistory::Current => vec![a],
            TreatmentHistory::CurrentAndDuration => {
                vec![a, path[..=visit].iter().filter(|&&x| x).count() as f64]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevelopmentMethod {
    Msm,
    CloneCensorWeight,
}

/// Settings shared by both development methods. Treatment-model formulas use
/// the syntax of [`TreatmentModelSpec::parse`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevelopmentConfig {
    pub family: HazardFamily,
    #[serde(default)]
    pub history: TreatmentHistory,
    /// Numerator model of the stabilized weights (MSM only).
    pub numerator: String,
    /// Denominator model (MSM) or artificial-censoring model (cloning).
    pub denominator: String,
    pub link: Link,
    #[serde(default)]
    pub hazard_policy: HazardPolicy,
}

impl DevelopmentConfig {
    pub fn new(family: HazardFamily) -> Self {
        Self {
            family,
            history: TreatmentHistory::Current,
            numerator: "1 + first(L)".into(),
            denominator: "1 + L".into(),
            link: Link::Logit,
            hazard_policy: HazardPolicy::RunningMax,
        }
    }
}

/// A fitted model that predicts risk under a static strategy from baseline
/// predictors `X` (the visit-0 time-varying covariates followed by time-fixed
/// predictors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionalModel {
    pub method: DevelopmentMethod,
    pub family: HazardFamily,
    pub history: TreatmentHistory,
    pub predictors: Vec<String>,
    /// Strata of a cloning model, in stratum order.
    pub strategies: Vec<StrategySpec>,
    pub hazard_policy: HazardPolicy,
    pub fit: SurvivalFit,
}

/// Baseline predictors `X` of a subject.
pub fn baseline_predictors(subject: &LongitudinalSubject) -> Vec<f64> {
    subject.covariates[0].iter().chain(&subject.baseline).copied().collect()
}

fn predictor_names(dataset: &Dataset) -> Vec<String> {
    dataset
        .covariate_names
        .iter()
        .map(|c| format!("{c}0"))
        .chain(dataset.baseline_names.iter().cloned())
        .collect()
}

fn fit_rows(
    family: HazardFamily,
    rows: &[CountingRow],
    names: &[String],
    strata: &[String],
) -> Result<SurvivalFit, SurvivalError> {
    Ok(match family {
        HazardFamily::Additive => SurvivalFit::Aalen(fit_weighted_aalen(rows, names, strata)?),
        HazardFamily::Cox => SurvivalFit::Cox(fit_weighted_cox(rows, names, strata, CoxOptions::default())?),
    })
}

/// Marginal structural model for the hazard given `X` and treatment history,
/// fitted with time-updated stabilized treatment weights.
pub fn develop_msm(dev: &Dataset, config: &DevelopmentConfig) -> Result<InterventionalModel, DevelopmentError> {
    let numerator = TreatmentModelSpec::parse(&config.numerator, dev, config.link)?;
    let denominator = TreatmentModelSpec::parse(&config.denominator, dev, config.link)?;
    let sw = fit_stabilized_iptw(dev, &numerator, &denominator)?;

    let mut rows = Vec::new();
    for (s, w) in dev.subjects.iter().zip(&sw.weights.trajectories) {
        let x = baseline_predictors(s);
        for k in 0..s.visits() {
            let stop = (k as f64 + 1.0).min(s.event_time);
            let mut covariates = x.clone();
            covariates.extend(config.history.terms(&s.treatment, k));
            rows.push(CountingRow {
                start: k as f64,
                stop,
                event: s.event && stop == s.event_time,
                covariates,
                weight: w.on_piece(k),
                stratum: 0,
            });
        }
    }
    let predictors = predictor_names(dev);
    let mut names = predictors.clone();
    names.extend(config.history.names().iter().map(|s| s.to_string()));
    let fit = fit_rows(config.family, &rows, &names, &["all".into()])?;
    Ok(InterventionalModel {
        method: DevelopmentMethod::Msm,
        family: config.family,
        history: config.history,
        predictors,
        strategies: Vec::new(),
        hazard_policy: config.hazard_policy,
        fit,
    })
}

/// Clone-censor-weight development: one artificially censored, IPACW-weighted
/// copy of the data per strategy, fitted jointly as strata.
pub fn develop_ccw(
    dev: &Dataset,
    strategies: &[StrategySpec],
    config: &DevelopmentConfig,
) -> Result<InterventionalModel, DevelopmentError> {
    let spec = TreatmentModelSpec::parse(&config.denominator, dev, config.link)?;
    let treatment = fit_treatment_models(dev, &spec)?;
    let mut rows = Vec::new();
    for (stratum, strategy) in strategies.iter().enumerate() {
        let view = apply_artificial_censoring(dev, strategy)?;
        let ipacw = compute_ipacw(dev, &view, &treatment);
        for (r, w) in view.records.iter().zip(&ipacw.trajectories) {
            let x = baseline_predictors(&dev.subjects[r.subject]);
            let mut k = 0;
            while (k as f64) < r.time {
                let stop = (k as f64 + 1.0).min(r.time);
                rows.push(CountingRow {
                    start: k as f64,
                    stop,
                    event: r.is_event() && stop == r.time,
                    covariates: x.clone(),
                    weight: w.on_piece(k),
                    stratum,
                });
                k += 1;
            }
        }
    }
    let labels: Vec<String> = strategies.iter().map(|s| s.name.clone()).collect();
    let predictors = predictor_names(dev);
    let fit = fit_rows(config.family, &rows, &predictors, &labels)?;
    Ok(InterventionalModel {
        method: DevelopmentMethod::CloneCensorWeight,
        family: config.family,
        history: config.history,
        predictors,
        strategies: strategies.to_vec(),
        hazard_policy: config.hazard_policy,
        fit,
    })
}

impl InterventionalModel {
    /// Predicted risks at each horizon in `taus` for predictors `x` under `strategy`.
    pub fn predict(&self, x: &[f64], strategy: &StrategySpec, taus: &[f64]) -> Result<Vec<f64>, DevelopmentError> {
        let (path, stratum) = match self.method {
            DevelopmentMethod::Msm => {
                let pieces = (0..strategy.path.len())
                    .map(|k| {
                        let mut z = x.to_vec();
                        z.extend(self.history.terms(&strategy.path, k));
                        (k as f64, z)
                    })
                    .collect();
                (CovariatePath { pieces }, 0)
            }
            DevelopmentMethod::CloneCensorWeight => {
                let stratum = self
                    .strategies
                    .iter()
                    .position(|s| s.path == strategy.path)
                    .ok_or_else(|| DevelopmentError::UnknownStrategy(strategy.name.clone()))?;
                (CovariatePath::constant(x.to_vec()), stratum)
            }
        };
        Ok(self.fit.predict_risk(&path, stratum, taus, self.hazard_policy)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DevelopmentError> {
        crate::io::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DevelopmentError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Where baseline predictors come from at prediction time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictorSource {
    Baseline,
    /// Adds independent `N(0, sd²)` noise to every predictor, drawn from a
    /// per-subject stream of `seed`.
    MeasurementError { sd: f64, seed: u64 },
}

/// `risks[s][k][i]`: risk of subject `i` under `strategies[s]` at `taus[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPredictionSet {
    pub strategies: Vec<String>,
    pub taus: Vec<f64>,
    pub ids: Vec<String>,
    pub risks: Vec<Vec<Vec<f64>>>,
}

impl RiskPredictionSet {
    pub fn at(&self, strategy: usize, tau: f64) -> Option<&[f64]> {
        let k = self.taus.iter().position(|&t| t == tau)?;
        Some(&self.risks[strategy][k])
    }
}

/// Evaluates the model for every subject of `dataset` under each strategy.
pub fn predict_under_strategies(
    model: &InterventionalModel,
    dataset: &Dataset,
    strategies: &[StrategySpec],
    taus: &[f64],
    source: PredictorSource,
) -> Result<RiskPredictionSet, DevelopmentError> {
    let xs: Vec<Vec<f64>> = match source {
        PredictorSource::Baseline => dataset.subjects.iter().map(baseline_predictors).collect(),
        PredictorSource::MeasurementError { sd, seed } => {
            let noise = Normal::new(0.0, sd).map_err(|_| DevelopmentError::InvalidErrorSd)?;
            dataset
                .subjects
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    baseline_predictors(s).into_iter().map(|x| x + noise.sample(&mut rng)).collect()
                })
                .collect()
        }
    };
    predict_for_predictors(model, &xs, dataset.subjects.iter().map(|s| s.id.clone()).collect(), strategies, taus)
}

/// Like [`predict_under_strategies`] with explicit predictor rows.
pub fn predict_for_predictors(
    model: &InterventionalModel,
    xs: &[Vec<f64>],
    ids: Vec<String>,
    strategies: &[StrategySpec],
    taus: &[f64],
) -> Result<RiskPredictionSet, DevelopmentError> {
    let mut risks = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let mut by_tau = vec![Vec::with_capacity(xs.len()); taus.len()];
        for x in xs {
            for (k, r) in model.predict(x, strategy, taus)?.into_iter().enumerate() {
                by_tau[k].push(r);
            }
        }
        risks.push(by_tau);
    }
    Ok(RiskPredictionSet {
        strategies: strategies.iter().map(|s| s.name.clone()).collect(),
        taus: taus.to_vec(),
        ids,
        risks,
    })
}
