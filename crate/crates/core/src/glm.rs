//! Weighted binary regression for treatment and weight models.
//!
//! Logit models are fitted by iteratively reweighted least squares; cauchit
//! models by Fisher scoring with step halving, since their log-likelihood is
//! not concave.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fitted probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-8;

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const LOGLIK_REL_TOL: f64 = 1e-10;
// A stalled likelihood only counts as convergence once the score is this small.
const STALL_SCORE_TOL: f64 = 1e-7;
const SEPARATION_LIMIT: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("no rows with positive weight")]
    Empty,
    #[error("all outcomes are {0}; the model is not estimable")]
    DegenerateOutcome(u8),
    #[error("case weights must be finite and nonnegative")]
    InvalidWeight,
    #[error("term `{term}` is undefined for value {value}")]
    TermDomain { term: String, value: f64 },
    #[error("non-finite covariate in term `{0}`")]
    NonFinite(String),
    #[error("perfect separation: coefficient of `{term}` diverges ({standardized:.1} on the standardized scale)")]
    Separation { term: String, standardized: f64 },
    #[error("information matrix is singular (collinear terms?)")]
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logit,
    Cauchit,
}

impl Link {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            Link::Cauchit => 0.5 + eta.atan() / PI,
        }
    }

    fn apply(self, p: f64) -> f64 {
        match self {
            Link::Logit => (p / (1.0 - p)).ln(),
            Link::Cauchit => (PI * (p - 0.5)).tan(),
        }
    }

    /// dμ/dη
    fn derivative(self, eta: f64) -> f64 {
        match self {
            Link::Logit => {
                let p = self.inverse(eta);
                p * (1.0 - p)
            }
            Link::Cauchit => 1.0 / (PI * (1.0 + eta * eta)),
        }
    }
}

impl std::str::FromStr for Link {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logit" => Ok(Link::Logit),
            "cauchit" => Ok(Link::Cauchit),
            other => Err(format!("unknown link `{other}` (expected logit or cauchit)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Square,
    /// `ln(x + shift)`
    LogShift(f64),
}

/// One regression term: a transform of one column of the covariate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub column: usize,
    pub transform: Transform,
    pub label: String,
}

impl TermSpec {
    pub fn new(column: usize, transform: Transform, label: impl Into<String>) -> Self {
        Self {
            column,
            transform,
            label: label.into(),
        }
    }

    pub fn evaluate(&self, covariates: &[f64]) -> Result<f64, GlmError> {
        let x = covariates[self.column];
        if !x.is_finite() {
            return Err(GlmError::NonFinite(self.label.clone()));
        }
        match self.transform {
            Transform::Identity => Ok(x),
            Transform::Square => Ok(x * x),
            Transform::LogShift(c) => {
                if x + c > 0.0 {
                    Ok((x + c).ln())
                } else {
                    Err(GlmError::TermDomain {
                        term: self.label.clone(),
                        value: x,
                    })
                }
            }
        }
    }
}

impl fmt::Display for TermSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryRow {
    pub outcome: bool,
    pub covariates: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedBinaryModel {
    pub link: Link,
    pub terms: Vec<TermSpec>,
    /// Intercept first, then one coefficient per term.
    pub coefficients: Vec<f64>,
    /// Square roots of the diagonal of the inverse information at the optimum.
    pub std_errors: Vec<f64>,
    pub iterations: usize,
    /// Max-norm of the score at the returned coefficients.
    pub gradient_norm: f64,
    pub converged: bool,
}

impl FittedBinaryModel {
    pub fn linear_predictor(&self, covariates: &[f64]) -> f64 {
        self.terms
            .iter()
            .zip(&self.coefficients[1..])
            .fold(self.coefficients[0], |acc, (t, b)| {
                // terms were validated on the fitting data; out-of-domain values
                // at prediction time propagate as NaN and are caught by callers
                acc + b * t.evaluate(covariates).unwrap_or(f64::NAN)
            })
    }

    /// Unclamped `P(outcome = 1)`.
    pub fn raw_probability(&self, covariates: &[f64]) -> f64 {
        self.link.inverse(self.linear_predictor(covariates))
    }

    /// `P(outcome = 1)` clamped to `[1e-8, 1 - 1e-8]`.
    pub fn predict_probability(&self, covariates: &[f64]) -> f64 {
        self.raw_probability(covariates)
            .clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }
}

struct Design {
    x: DMatrix<f64>,
    y: DVector<f64>,
    w: DVector<f64>,
}

fn build_design(rows: &[BinaryRow], terms: &[TermSpec]) -> Result<Design, GlmError> {
    let p = terms.len() + 1;
    let rows: Vec<&BinaryRow> = rows.iter().filter(|r| r.weight != 0.0).collect();
    if rows.is_empty() {
        return Err(GlmError::Empty);
    }
    let mut x = DMatrix::zeros(rows.len(), p);
    let mut y = DVector::zeros(rows.len());
    let mut w = DVector::zeros(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if !(r.weight.is_finite() && r.weight > 0.0) {
            return Err(GlmError::InvalidWeight);
        }
        x[(i, 0)] = 1.0;
        for (j, t) in terms.iter().enumerate() {
            x[(i, j + 1)] = t.evaluate(&r.covariates)?;
        }
        y[i] = if r.outcome { 1.0 } else { 0.0 };
        w[i] = r.weight;
    }
    Ok(Design { x, y, w })
}

struct Evaluation {
    loglik: f64,
    score: DVector<f64>,
    information: DMatrix<f64>,
}

fn evaluate(design: &Design, link: Link, beta: &DVector<f64>) -> Evaluation {
    let eta = &design.x * beta;
    let p = beta.len();
    let mut loglik = 0.0;
    let mut score = DVector::zeros(p);
    let mut information = DMatrix::zeros(p, p);
    for i in 0..design.x.nrows() {
        let mu = link.inverse(eta[i]).clamp(1e-15, 1.0 - 1e-15);
        let w = design.w[i];
        let y = design.y[i];
        loglik += w * (y * mu.ln() + (1.0 - y) * (1.0 - mu).ln());
        let d = link.derivative(eta[i]);
        let v = mu * (1.0 - mu);
        // score factor and Fisher weight; for logit these reduce to y - mu and mu(1 - mu)
        let s = w * (y - mu) * d / v;
        let f = w * d * d / v;
        let row = design.x.row(i);
        for a in 0..p {
            score[a] += s * row[a];
            for b in 0..=a {
                information[(a, b)] += f * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            information[(b, a)] = information[(a, b)];
        }
    }
    Evaluation {
        loglik,
        score,
        information,
    }
}

fn weighted_sd(x: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sw, mut sx, mut sxx) = (0.0, 0.0, 0.0);
    for (v, w) in x {
        sw += w;
        sx += w * v;
        sxx += w * v * v;
    }
    let mean = sx / sw;
    (sxx / sw - mean * mean).max(0.0).sqrt()
}

/// Maximizes the weighted binomial log-likelihood of `rows` under `link`.
///
/// Converges when the max-norm of the score drops below 1e-8 or the relative
/// change in log-likelihood below 1e-10, with at most 100 iterations.
pub fn fit_binary_model(
    rows: &[BinaryRow],
    terms: &[TermSpec],
    link: Link,
) -> Result<FittedBinaryModel, GlmError> {
    let design = build_design(rows, terms)?;
    let total_w = design.w.sum();
    let ybar = design.y.dot(&design.w) / total_w;
    if ybar <= 0.0 {
        return Err(GlmError::DegenerateOutcome(0));
    }
    if ybar >= 1.0 {
        return Err(GlmError::DegenerateOutcome(1));
    }

    let p = terms.len() + 1;
    let mut beta = DVector::zeros(p);
    beta[0] = link.apply(ybar);
    let mut current = evaluate(&design, link, &beta);
    let mut iterations = 0;
    let mut converged = false;
    let mut singular = false;

    while iterations < MAX_ITER {
        if current.score.amax() < SCORE_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(chol) = current.information.clone().cholesky() else {
            singular = true;
            break;
        };
        let step = chol.solve(&current.score);
        let mut scale = 1.0;
        let mut next;
        loop {
            let candidate = &beta + &step * scale;
            next = evaluate(&design, link, &candidate);
            if next.loglik >= current.loglik - 1e-12 * current.loglik.abs() || scale < 1e-10 {
                beta = candidate;
                break;
            }
            scale *= 0.5;
        }
        let change = (next.loglik - current.loglik).abs() / (current.loglik.abs() + 1e-300);
        current = next;
        if change < LOGLIK_REL_TOL && current.score.amax() < STALL_SCORE_TOL {
            converged = true;
            break;
        }
        if beta.iter().any(|b| !b.is_finite()) {
            break;
        }
    }

    for (j, t) in terms.iter().enumerate() {
        let sd = weighted_sd(
            design
                .x
                .column(j + 1)
                .iter()
                .copied()
                .zip(design.w.iter().copied()),
        );
        let standardized = beta[j + 1] * sd;
        if !standardized.is_finite() || standardized.abs() > SEPARATION_LIMIT {
            return Err(GlmError::Separation {
                term: t.label.clone(),
                standardized,
            });
        }
    }
    if !beta[0].is_finite() || beta[0].abs() > SEPARATION_LIMIT * 10.0 {
        return Err(GlmError::Separation {
            term: "(intercept)".into(),
            standardized: beta[0],
        });
    }

    if singular {
        return Err(GlmError::Singular);
    }

    let std_errors = current
        .information
        .clone()
        .try_inverse()
        .map(|inv| (0..p).map(|j| inv[(j, j)].max(0.0).sqrt()).collect())
        .unwrap_or_else(|| vec![f64::NAN; p]);

    Ok(FittedBinaryModel {
        link,
        terms: terms.to_vec(),
        coefficients: beta.iter().copied().collect(),
        std_errors,
        iterations,
        gradient_norm: current.score.amax(),
        converged,
    })
}

/// Weighted score `Σ w (y - p) x` of a logit model, evaluated independently of
/// the fitting loop.
pub fn logit_score_residual(model: &FittedBinaryModel, rows: &[BinaryRow]) -> Vec<f64> {
    let mut score = vec![0.0; model.coefficients.len()];
    for r in rows {
        let p = model.link.inverse(model.linear_predictor(&r.covariates));
        let resid = r.weight * ((r.outcome as u8 as f64) - p);
        score[0] += resid;
        for (j, t) in model.terms.iter().enumerate() {
            score[j + 1] += resid * t.evaluate(&r.covariates).unwrap_or(f64::NAN);
        }
    }
    score
}
