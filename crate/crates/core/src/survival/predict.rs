use serde::{Deserialize, Serialize};

use super::{AalenFit, CoxFit, SurvivalError};

/// Piecewise-constant covariates: `pieces[k] = (start_k, z_k)` applies on
/// `(start_k, start_{k+1}]`. Starts must be increasing with the first at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePath {
    pub pieces: Vec<(f64, Vec<f64>)>,
}

impl CovariatePath {
    pub fn constant(z: Vec<f64>) -> Self {
        Self { pieces: vec![(0.0, z)] }
    }

    /// Index of the piece in force just before `t`.
    fn piece_index(&self, t: f64) -> usize {
        self.pieces.partition_point(|(s, _)| *s < t).saturating_sub(1)
    }

    fn dimension(&self) -> usize {
        self.pieces.first().map_or(0, |p| p.1.len())
    }
}

/// How accumulated hazard is turned into risk.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardPolicy {
    /// Use the running maximum of the accumulated hazard, so risk never
    /// decreases with the horizon.
    #[default]
    RunningMax,
    /// Use the accumulated hazard as is; risk is still clamped to `[0, 1]`.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SurvivalFit {
    Cox(CoxFit),
    Aalen(AalenFit),
}

impl SurvivalFit {
    pub fn max_time(&self) -> f64 {
        match self {
            SurvivalFit::Cox(f) => f.max_time,
            SurvivalFit::Aalen(f) => f.max_time,
        }
    }

    pub fn covariate_names(&self) -> &[String] {
        match self {
            SurvivalFit::Cox(f) => &f.covariate_names,
            SurvivalFit::Aalen(f) => &f.covariate_names,
        }
    }

    /// `1 - exp(-Ĥ(τ | path))` for each horizon in `taus`.
    pub fn predict_risk(
        &self,
        path: &CovariatePath,
        stratum: usize,
        taus: &[f64],
        policy: HazardPolicy,
    ) -> Result<Vec<f64>, SurvivalError> {
        let expected = self.covariate_names().len();
        if path.dimension() != expected {
            return Err(SurvivalError::Dimension {
                got: path.dimension(),
                expected,
            });
        }
        let max_time = self.max_time();
        if let Some(&tau) = taus.iter().find(|&&t| t > max_time) {
            return Err(SurvivalError::HorizonBeyondFit { tau, max_time });
        }
        let mut order: Vec<usize> = (0..taus.len()).collect();
        order.sort_by(|&a, &b| taus[a].total_cmp(&taus[b]));
        let mut hazards = vec![0.0; taus.len()];

        match self {
            SurvivalFit::Cox(fit) => {
                let base = fit.baseline.get(stratum).ok_or(SurvivalError::UnknownStratum(stratum))?;
                let scores: Vec<f64> = path
                    .pieces
                    .iter()
                    .map(|(_, z)| z.iter().zip(&fit.coefficients).map(|(x, b)| x * b).sum::<f64>().exp())
                    .collect();
                let mut h = 0.0;
                let mut prev = 0.0;
                let mut j = 0;
                for &o in &order {
                    while j < base.times.len() && base.times[j] <= taus[o] {
                        let t = base.times[j];
                        h += (base.values[j] - prev) * scores[path.piece_index(t)];
                        prev = base.values[j];
                        j += 1;
                    }
                    hazards[o] = h;
                }
            }
            SurvivalFit::Aalen(fit) => {
                let st = fit.strata.get(stratum).ok_or(SurvivalError::UnknownStratum(stratum))?;
                let (mut h, mut peak) = (0.0f64, 0.0f64);
                let mut j = 0;
                for &o in &order {
                    while j < st.times.len() && st.times[j] <= taus[o] {
                        let z = &path.pieces[path.piece_index(st.times[j])].1;
                        let inc = &st.increments[j];
                        h += inc[0] + z.iter().zip(&inc[1..]).map(|(x, b)| x * b).sum::<f64>();
                        peak = peak.max(h);
                        j += 1;
                    }
                    hazards[o] = match policy {
                        HazardPolicy::RunningMax => peak,
                        HazardPolicy::Raw => h,
                    };
                }
            }
        }
        Ok(hazards
            .into_iter()
            .zip(taus)
            .map(|(h, &tau)| if tau <= 0.0 { 0.0 } else { (1.0 - (-h).exp()).clamp(0.0, 1.0) })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::{AalenStratum, StepFunction};

    fn aalen(times: Vec<f64>, increments: Vec<Vec<f64>>, names: Vec<String>) -> SurvivalFit {
        SurvivalFit::Aalen(AalenFit {
            covariate_names: names,
            strata: vec![AalenStratum {
                label: "all".into(),
                times,
                increments,
                skipped: 0,
            }],
            max_time: 5.0,
        })
    }

    #[test]
    fn intercept_only_risk() {
        let fit = aalen(vec![1.0, 2.0], vec![vec![0.2], vec![0.3]], vec![]);
        let r = fit.predict_risk(&CovariatePath::constant(vec![]), 0, &[3.0, 0.0, 1.5], HazardPolicy::RunningMax).unwrap();
        assert!((r[0] - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        assert!((r[0] - 0.3935).abs() < 1e-4);
        assert_eq!(r[1], 0.0);
        assert!((r[2] - (1.0 - (-0.2f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn running_max_floors_dips() {
        let fit = aalen(vec![1.0, 2.0, 3.0], vec![vec![0.4], vec![-0.3], vec![0.1]], vec![]);
        let path = CovariatePath::constant(vec![]);
        let capped = fit.predict_risk(&path, 0, &[2.5, 3.5], HazardPolicy::RunningMax).unwrap();
        let raw = fit.predict_risk(&path, 0, &[2.5, 3.5], HazardPolicy::Raw).unwrap();
        assert_eq!(capped[0], 1.0 - (-0.4f64).exp());
        assert_eq!(capped[1], 1.0 - (-0.4f64).exp());
        assert!((raw[0] - (1.0 - (-0.1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn path_switches_treatment_after_visit() {
        let fit = aalen(vec![0.5, 1.5], vec![vec![0.1, 0.2], vec![0.1, 0.2]], vec!["a".into()]);
        let path = CovariatePath {
            pieces: vec![(0.0, vec![0.0]), (1.0, vec![1.0])],
        };
        let r = fit.predict_risk(&path, 0, &[2.0], HazardPolicy::RunningMax).unwrap();
        assert!((r[0] - (1.0 - (-0.4f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn null_cox_is_independent_of_covariates() {
        let fit = SurvivalFit::Cox(CoxFit {
            covariate_names: vec!["x".into()],
            coefficients: vec![0.0],
            std_errors: vec![0.0],
            strata: vec!["all".into()],
            baseline: vec![StepFunction {
                times: vec![1.0, 2.0],
                values: vec![0.1, 0.25],
            }],
            loglik: 0.0,
            iterations: 0,
            score_norm: 0.0,
            monotone_likelihood: false,
            max_time: 5.0,
        });
        for x in [-3.0, 0.0, 7.0] {
            let r = fit.predict_risk(&CovariatePath::constant(vec![x]), 0, &[4.0], HazardPolicy::RunningMax).unwrap();
            assert_eq!(r[0], 1.0 - (-0.25f64).exp());
        }
    }

    #[test]
    fn horizon_beyond_fit_is_an_error() {
        let fit = aalen(vec![1.0], vec![vec![0.1]], vec![]);
        let err = fit.predict_risk(&CovariatePath::constant(vec![]), 0, &[6.0], HazardPolicy::RunningMax);
        assert!(matches!(err, Err(SurvivalError::HorizonBeyondFit { .. })));
    }
}
