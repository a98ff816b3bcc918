use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_rows, CountingRow, StepFunction, SurvivalError};

/// Standardized coefficient beyond which the likelihood is taken to be monotone.
const DIVERGENCE_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    pub max_iter: usize,
    pub loglik_tol: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            loglik_tol: 1e-9,
        }
    }
}

/// Weighted Cox model with Breslow ties and a Breslow baseline per stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub covariate_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub strata: Vec<String>,
    /// Cumulative baseline hazard `Ĥ_0` per stratum, at covariates zero.
    pub baseline: Vec<StepFunction>,
    pub loglik: f64,
    pub iterations: usize,
    pub score_norm: f64,
    /// Set when a coefficient diverged while the likelihood kept increasing.
    pub monotone_likelihood: bool,
    pub max_time: f64,
}

struct Pass {
    loglik: f64,
    score: DVector<f64>,
    information: DMatrix<f64>,
}

struct Stratum {
    by_stop: Vec<usize>,
    by_start: Vec<usize>,
    times: Vec<f64>,
}

fn prepare(rows: &[CountingRow], n_strata: usize) -> Vec<Stratum> {
    (0..n_strata)
        .map(|s| {
            let members: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].stratum == s).collect();
            let mut by_stop = members.clone();
            by_stop.sort_by(|&a, &b| rows[b].stop.total_cmp(&rows[a].stop));
            let mut by_start = members;
            by_start.sort_by(|&a, &b| rows[b].start.total_cmp(&rows[a].start));
            let mut times: Vec<f64> = by_stop
                .iter()
                .filter(|&&i| rows[i].event && rows[i].weight > 0.0)
                .map(|&i| rows[i].stop)
                .collect();
            times.dedup();
            Stratum { by_stop, by_start, times }
        })
        .collect()
}

/// Runs `visit(t, d_w, Σ w z over events, S0, S1, S2)` at every event time of a
/// stratum in descending order, with centered covariates.
#[allow(clippy::type_complexity)]
fn sweep(
    rows: &[CountingRow],
    stratum: &Stratum,
    beta: &DVector<f64>,
    center: &DVector<f64>,
    mut visit: impl FnMut(f64, f64, &DVector<f64>, f64, &DVector<f64>, &DMatrix<f64>),
) {
    let p = beta.len();
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let (mut a, mut r) = (0, 0);
    let z_of = |i: usize| DVector::from_column_slice(&rows[i].covariates) - center;
    for &t in &stratum.times {
        let first_new = a;
        while a < stratum.by_stop.len() && rows[stratum.by_stop[a]].stop >= t {
            let i = stratum.by_stop[a];
            let z = z_of(i);
            let wr = rows[i].weight * beta.dot(&z).exp();
            s0 += wr;
            s1.axpy(wr, &z, 1.0);
            s2.ger(wr, &z, &z, 1.0);
            a += 1;
        }
        while r < stratum.by_start.len() && rows[stratum.by_start[r]].start >= t {
            let i = stratum.by_start[r];
            // Rows entering after `t` were never added.
            if rows[i].stop >= t {
                let z = z_of(i);
                let wr = rows[i].weight * beta.dot(&z).exp();
                s0 -= wr;
                s1.axpy(-wr, &z, 1.0);
                s2.ger(-wr, &z, &z, 1.0);
            }
            r += 1;
        }
        let mut d = 0.0;
        let mut zsum = DVector::zeros(p);
        // Rows stopping exactly at `t` were all added in this step.
        for &i in stratum.by_stop[first_new..a].iter().rev() {
            if rows[i].stop > t {
                break;
            }
            if rows[i].event {
                d += rows[i].weight;
                zsum.axpy(rows[i].weight, &z_of(i), 1.0);
            }
        }
        visit(t, d, &zsum, s0, &s1, &s2);
    }
}

fn evaluate(rows: &[CountingRow], strata: &[Stratum], beta: &DVector<f64>, center: &DVector<f64>) -> Pass {
    let p = beta.len();
    let mut pass = Pass {
        loglik: 0.0,
        score: DVector::zeros(p),
        information: DMatrix::zeros(p, p),
    };
    for st in strata {
        sweep(rows, st, beta, center, |_, d, zsum, s0, s1, s2| {
            if d == 0.0 {
                return;
            }
            let mean = s1 / s0;
            pass.loglik += beta.dot(zsum) - d * s0.ln();
            pass.score += zsum - &mean * d;
            pass.information += (s2 / s0 - &mean * mean.transpose()) * d;
        });
    }
    pass
}

/// Maximizes the weighted Breslow partial likelihood by Newton–Raphson.
///
/// `strata` names every stratum index used by the rows.
pub fn fit_weighted_cox(
    rows: &[CountingRow],
    covariate_names: &[String],
    strata: &[String],
    options: CoxOptions,
) -> Result<CoxFit, SurvivalError> {
    let p = covariate_names.len();
    check_rows(rows, p)?;
    if let Some(i) = rows.iter().position(|r| r.stratum >= strata.len()) {
        return Err(SurvivalError::InvalidRow {
            row: i,
            message: format!("stratum index {} out of range", rows[i].stratum),
        });
    }
    let prepared = prepare(rows, strata.len());
    if prepared.iter().all(|s| s.times.is_empty()) {
        return Err(SurvivalError::NoEvents);
    }
    if let Some(s) = prepared.iter().position(|s| s.times.is_empty()) {
        return Err(SurvivalError::EmptyStratum(strata[s].clone()));
    }

    let total_w: f64 = rows.iter().map(|r| r.weight).sum();
    let center = DVector::from_fn(p, |j, _| rows.iter().map(|r| r.weight * r.covariates[j]).sum::<f64>() / total_w);
    let sd: Vec<f64> = (0..p)
        .map(|j| {
            let var = rows.iter().map(|r| r.weight * (r.covariates[j] - center[j]).powi(2)).sum::<f64>() / total_w;
            var.sqrt()
        })
        .collect();

    let mut beta = DVector::zeros(p);
    let mut current = evaluate(rows, &prepared, &beta, &center);
    let mut iterations = 0;
    let mut monotone = false;
    let mut converged = p == 0;
    let mut change = f64::INFINITY;
    while !converged && iterations < options.max_iter {
        iterations += 1;
        let Some(chol) = current.information.clone().cholesky() else {
            if beta.iter().zip(&sd).any(|(b, s)| (b * s).abs() > DIVERGENCE_LIMIT) {
                monotone = true;
                break;
            }
            return Err(SurvivalError::Singular);
        };
        let step = chol.solve(&current.score);
        let mut scale = 1.0;
        let next = loop {
            let candidate = &beta + &step * scale;
            let next = evaluate(rows, &prepared, &candidate, &center);
            if next.loglik.is_finite() && next.loglik >= current.loglik - 1e-12 * current.loglik.abs() || scale < 1e-8 {
                beta = candidate;
                break next;
            }
            scale *= 0.5;
        };
        change = (next.loglik - current.loglik).abs();
        current = next;
        converged = change < options.loglik_tol;
    }
    let diverged = beta.iter().zip(&sd).any(|(b, s)| (b * s).abs() > DIVERGENCE_LIMIT);
    monotone |= diverged;
    if !converged && !monotone {
        return Err(SurvivalError::NotConverged { iterations, change });
    }

    let shift = (-beta.dot(&center)).exp();
    let baseline = prepared
        .iter()
        .map(|st| {
            let mut jumps: Vec<(f64, f64)> = Vec::with_capacity(st.times.len());
            sweep(rows, st, &beta, &center, |t, d, _, s0, _, _| {
                jumps.push((t, d / s0 * shift));
            });
            jumps.reverse();
            let mut cumulative = 0.0;
            let mut f = StepFunction::default();
            for (t, dh) in jumps {
                cumulative += dh;
                f.times.push(t);
                f.values.push(cumulative);
            }
            f
        })
        .collect();

    let std_errors = current
        .information
        .clone()
        .try_inverse()
        .map(|inv| (0..p).map(|j| inv[(j, j)].max(0.0).sqrt()).collect())
        .unwrap_or_else(|| vec![f64::NAN; p]);

    Ok(CoxFit {
        covariate_names: covariate_names.to_vec(),
        coefficients: beta.iter().copied().collect(),
        std_errors,
        strata: strata.to_vec(),
        baseline,
        loglik: current.loglik,
        iterations,
        score_norm: current.score.amax(),
        monotone_likelihood: monotone,
        max_time: rows.iter().map(|r| r.stop).fold(0.0, f64::max),
    })
}
