use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_rows, CountingRow, SurvivalError};

/// Least-squares increments of one stratum. Column 0 is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AalenStratum {
    pub label: String,
    pub times: Vec<f64>,
    pub increments: Vec<Vec<f64>>,
    /// Event times whose risk-set design was singular.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AalenFit {
    pub covariate_names: Vec<String>,
    pub strata: Vec<AalenStratum>,
    pub max_time: f64,
}

impl AalenFit {
    /// `B̂_j(t)` for stratum `s`; `j = 0` is the intercept.
    pub fn cumulative(&self, s: usize, j: usize, t: f64) -> f64 {
        let st = &self.strata[s];
        let end = st.times.partition_point(|&u| u <= t);
        st.increments[..end].iter().map(|d| d[j]).sum()
    }
}

fn design(row: &CountingRow) -> DVector<f64> {
    DVector::from_iterator(
        row.covariates.len() + 1,
        std::iter::once(1.0).chain(row.covariates.iter().copied()),
    )
}

fn fit_stratum(rows: &[CountingRow], members: Vec<usize>, label: &str, p: usize) -> AalenStratum {
    let mut by_start = members.clone();
    by_start.sort_by(|&a, &b| rows[a].start.total_cmp(&rows[b].start));
    let mut by_stop = members;
    by_stop.sort_by(|&a, &b| rows[a].stop.total_cmp(&rows[b].stop));
    let mut times: Vec<f64> = by_stop
        .iter()
        .filter(|&&i| rows[i].event && rows[i].weight > 0.0)
        .map(|&i| rows[i].stop)
        .collect();
    times.dedup();

    let mut out = AalenStratum {
        label: label.to_string(),
        times: Vec::with_capacity(times.len()),
        increments: Vec::with_capacity(times.len()),
        skipped: 0,
    };
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut active = vec![false; rows.len()];
    let mut active_list: Vec<usize> = Vec::new();
    let (mut removed_since_rebuild, mut size_at_rebuild) = (0usize, 0usize);
    let (mut a, mut r) = (0, 0);
    for &t in &times {
        while a < by_start.len() && rows[by_start[a]].start < t {
            let i = by_start[a];
            if rows[i].stop >= t {
                let z = design(&rows[i]);
                gram.ger(rows[i].weight, &z, &z, 1.0);
                active[i] = true;
                active_list.push(i);
            }
            a += 1;
        }
        while r < by_stop.len() && rows[by_stop[r]].stop < t {
            let i = by_stop[r];
            if active[i] {
                let z = design(&rows[i]);
                gram.ger(-rows[i].weight, &z, &z, 1.0);
                active[i] = false;
                removed_since_rebuild += 1;
            }
            r += 1;
        }
        // Re-sum the Gram matrix once half of the risk set has left, to keep
        // cancellation error bounded.
        if 2 * removed_since_rebuild > size_at_rebuild {
            active_list.retain(|&i| active[i]);
            gram.fill(0.0);
            for &i in &active_list {
                let z = design(&rows[i]);
                gram.ger(rows[i].weight, &z, &z, 1.0);
            }
            size_at_rebuild = active_list.len();
            removed_since_rebuild = 0;
        }

        let mut rhs = DVector::<f64>::zeros(p);
        for &i in by_stop[r..].iter().take_while(|&&i| rows[i].stop == t) {
            if rows[i].event && active[i] {
                rhs.axpy(rows[i].weight, &design(&rows[i]), 1.0);
            }
        }
        let scale = gram.diagonal().max();
        let solved = gram.clone().cholesky().and_then(|c| {
            let min_pivot = c.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
            (min_pivot > 1e-10 * scale).then(|| c.solve(&rhs))
        });
        match solved {
            Some(inc) => {
                out.times.push(t);
                out.increments.push(inc.iter().copied().collect());
            }
            None => out.skipped += 1,
        }
    }
    if out.skipped > 0 {
        warn!("Aalen stratum `{label}`: {} event times skipped with singular risk-set design", out.skipped);
    }
    out
}

/// Weighted Aalen least-squares fit with an intercept column prepended to the
/// covariates; one independent fit per stratum.
pub fn fit_weighted_aalen(
    rows: &[CountingRow],
    covariate_names: &[String],
    strata: &[String],
) -> Result<AalenFit, SurvivalError> {
    check_rows(rows, covariate_names.len())?;
    if let Some(i) = rows.iter().position(|r| r.stratum >= strata.len()) {
        return Err(SurvivalError::InvalidRow {
            row: i,
            message: format!("stratum index {} out of range", rows[i].stratum),
        });
    }
    if super::event_times(rows).is_empty() {
        return Err(SurvivalError::NoEvents);
    }
    let p = covariate_names.len() + 1;
    let mut fitted = Vec::with_capacity(strata.len());
    for (s, label) in strata.iter().enumerate() {
        let members: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].stratum == s).collect();
        if !members.iter().any(|&i| rows[i].event && rows[i].weight > 0.0) {
            return Err(SurvivalError::EmptyStratum(label.clone()));
        }
        fitted.push(fit_stratum(rows, members, label, p));
    }
    Ok(AalenFit {
        covariate_names: covariate_names.to_vec(),
        strata: fitted,
        max_time: rows.iter().map(|r| r.stop).fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(stop: f64, event: bool, z: Vec<f64>, weight: f64) -> CountingRow {
        CountingRow {
            start: 0.0,
            stop,
            event,
            covariates: z,
            weight,
            stratum: 0,
        }
    }

    fn all() -> Vec<String> {
        vec!["all".into()]
    }

    #[test]
    fn intercept_only_is_nelson_aalen() {
        let rows = vec![
            row(1.0, true, vec![], 1.0),
            row(2.0, false, vec![], 1.0),
            row(3.0, true, vec![], 1.0),
            row(3.0, true, vec![], 1.0),
            row(4.0, false, vec![], 1.0),
        ];
        let fit = fit_weighted_aalen(&rows, &[], &all()).unwrap();
        let expected = 1.0 / 5.0 + 2.0 / 3.0;
        assert!((fit.cumulative(0, 0, 3.5) - expected).abs() < 1e-14);
        assert_eq!(fit.cumulative(0, 0, 0.5), 0.0);
    }

    #[test]
    fn weight_doubling_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<CountingRow> = (0..200)
            .map(|_| row(rng.random::<f64>() * 5.0, rng.random::<bool>(), vec![rng.random::<f64>()], 0.5 + rng.random::<f64>()))
            .collect();
        let doubled: Vec<CountingRow> = rows.iter().map(|r| CountingRow { weight: 2.0 * r.weight, ..r.clone() }).collect();
        let names = vec!["x".to_string()];
        let a = fit_weighted_aalen(&rows, &names, &all()).unwrap();
        let b = fit_weighted_aalen(&doubled, &names, &all()).unwrap();
        for j in 0..2 {
            assert!((a.cumulative(0, j, 2.0) - b.cumulative(0, j, 2.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn recovers_constant_group_hazards() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<CountingRow> = (0..40_000)
            .map(|i| {
                let x = (i % 2) as f64;
                let h = 0.2 + 0.1 * x;
                let t = -rng.random::<f64>().ln() / h;
                row(t.min(2.0), t < 2.0, vec![x], 1.0)
            })
            .collect();
        let fit = fit_weighted_aalen(&rows, &["x".into()], &all()).unwrap();
        let b0 = fit.cumulative(0, 0, 2.0) / 2.0;
        let b1 = fit.cumulative(0, 1, 2.0) / 2.0;
        assert!((b0 - 0.2).abs() < 0.01, "{b0}");
        assert!((b1 - 0.1).abs() < 0.015, "{b1}");
    }

    #[test]
    fn singular_design_is_skipped() {
        // The last event's risk set has a single covariate value.
        let rows = vec![
            row(1.0, true, vec![0.0], 1.0),
            row(1.5, true, vec![1.0], 1.0),
            row(2.0, true, vec![1.0], 1.0),
        ];
        let fit = fit_weighted_aalen(&rows, &["x".into()], &all()).unwrap();
        assert_eq!(fit.strata[0].skipped, 2);
        assert_eq!(fit.strata[0].times, vec![1.0]);
    }
}
