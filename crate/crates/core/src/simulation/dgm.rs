use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng::{Purpose, StreamKey};
use crate::data::{Dataset, LongitudinalSubject};
use crate::development::HazardFamily;
use crate::weights::TreatmentProbability;

/// `logit P(A = 1) = intercept + linear·L + quadratic·L²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitCoefs {
    pub intercept: f64,
    pub linear: f64,
    #[serde(default)]
    pub quadratic: f64,
}

impl LogitCoefs {
    pub const fn new(intercept: f64, linear: f64) -> Self {
        Self {
            intercept,
            linear,
            quadratic: 0.0,
        }
    }

    pub fn probability(&self, l: f64) -> f64 {
        let eta = self.intercept + self.linear * l + self.quadratic * l * l;
        1.0 / (1.0 + (-eta).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardParams {
    pub alpha0: f64,
    pub alpha_a: f64,
    pub alpha_l: f64,
    pub alpha_u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgmParams {
    pub family: HazardFamily,
    pub u_sd: f64,
    /// `L_0 ~ N(l0_mean + U, l0_sd²)`.
    pub l0_mean: f64,
    pub l0_sd: f64,
    pub l_autoregression: f64,
    pub l_treatment: f64,
    pub l_trend: f64,
    pub l_noise_sd: f64,
    /// Treatment model at visit 0.
    pub initial_treatment: LogitCoefs,
    /// Initiation model at later visits among the untreated.
    pub later_treatment: LogitCoefs,
    pub hazard: HazardParams,
    pub measurement_error_sd: f64,
    pub visits: usize,
    pub admin_time: f64,
}

impl DgmParams {
    pub fn additive() -> Self {
        Self {
            family: HazardFamily::Additive,
            u_sd: 2.0,
            l0_mean: 10.0,
            l0_sd: 4.0,
            l_autoregression: 0.8,
            l_treatment: -1.0,
            l_trend: 0.1,
            l_noise_sd: 4.0,
            initial_treatment: LogitCoefs::new(-2.0, 0.1),
            later_treatment: LogitCoefs::new(-2.0, 0.1),
            hazard: HazardParams {
                alpha0: 0.2,
                alpha_a: -0.04,
                alpha_l: 0.01,
                alpha_u: 0.01,
            },
            measurement_error_sd: 4.0,
            visits: 5,
            admin_time: 5.0,
        }
    }

    pub fn cox() -> Self {
        Self {
            family: HazardFamily::Cox,
            u_sd: 0.1,
            l0_mean: 0.0,
            l0_sd: 1.0,
            l_autoregression: 0.8,
            l_treatment: -1.0,
            l_trend: 0.1,
            l_noise_sd: 1.0,
            initial_treatment: LogitCoefs::new(-1.0, 0.5),
            later_treatment: LogitCoefs::new(-1.0, 0.5),
            hazard: HazardParams {
                alpha0: -2.0,
                alpha_a: -0.5,
                alpha_l: 0.5,
                alpha_u: 0.5,
            },
            measurement_error_sd: 1.0,
            visits: 5,
            admin_time: 5.0,
        }
    }

    pub fn for_family(family: HazardFamily) -> Self {
        match family {
            HazardFamily::Additive => Self::additive(),
            HazardFamily::Cox => Self::cox(),
        }
    }

    fn treatment_model(&self, visit: usize) -> &LogitCoefs {
        if visit == 0 {
            &self.initial_treatment
        } else {
            &self.later_treatment
        }
    }

    /// Hazard on `[k, k+1)`. For the additive family the `L` effect decays as
    /// `1 - 0.2(j - 1)` over intervals numbered `j = 1, 2, ...`, so interval
    /// `[k, k+1)` has `j = k + 1`.
    fn hazard(&self, k: usize, a: bool, l: f64, u: f64) -> f64 {
        let h = &self.hazard;
        let a = f64::from(u8::from(a));
        match self.family {
            HazardFamily::Additive => {
                let decay = 1.0 - 0.2 * k as f64;
                h.alpha0 + h.alpha_a * a + h.alpha_l * decay * l + h.alpha_u * u
            }
            HazardFamily::Cox => (h.alpha0 + h.alpha_a * a + h.alpha_l * l + h.alpha_u * u).exp(),
        }
    }
}

/// Event time from unit-width interval hazards and a unit exponential draw:
/// the event happens where the cumulative hazard first exceeds `e`, otherwise
/// follow-up is censored at the end of the last interval.
pub fn simulate_event_time(hazards: &[f64], e: f64) -> (f64, bool) {
    let mut cumulative = 0.0;
    for (k, &h) in hazards.iter().enumerate() {
        if h > 0.0 && cumulative + h > e {
            return (k as f64 + (e - cumulative) / h, true);
        }
        cumulative += h;
    }
    (hazards.len() as f64, false)
}

/// A generated dataset together with its latent variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub latent_u: Vec<f64>,
    /// Intervals whose additive hazard was negative and floored at zero.
    pub negative_hazards: usize,
    pub key: StreamKey,
    pub params: DgmParams,
}

enum Treatment<'a> {
    Observational,
    Forced(&'a [bool]),
}

struct Generated {
    subject: LongitudinalSubject,
    u: f64,
    negative: usize,
}

fn generate_subject(params: &DgmParams, key: &StreamKey, i: usize, treatment: &Treatment<'_>) -> Generated {
    let mut base = key.rng(i, Purpose::Baseline);
    let mut noise = key.rng(i, Purpose::CovariateNoise);
    let mut treat = key.rng(i, Purpose::Treatment);
    let mut event = key.rng(i, Purpose::Event);

    let z_u: f64 = base.sample(StandardNormal);
    let z_l: f64 = base.sample(StandardNormal);
    let u = params.u_sd * z_u;
    let mut l = params.l0_mean + u + params.l0_sd * z_l;

    let k_max = params.visits;
    let mut covariates = Vec::with_capacity(k_max);
    let mut path = Vec::with_capacity(k_max);
    let mut hazards = Vec::with_capacity(k_max);
    let mut negative = 0;
    let mut previous = false;
    for k in 0..k_max {
        if k > 0 {
            let z: f64 = noise.sample(StandardNormal);
            let a_prev = f64::from(u8::from(previous));
            l = params.l_autoregression * l + params.l_treatment * a_prev + params.l_trend * k as f64 + u + params.l_noise_sd * z;
        }
        let a = match treatment {
            Treatment::Observational => {
                let draw: f64 = treat.random();
                previous || draw < params.treatment_model(k).probability(l)
            }
            Treatment::Forced(p) => p[k],
        };
        let mut h = params.hazard(k, a, l, u);
        if h < 0.0 {
            h = 0.0;
            negative += 1;
        }
        covariates.push(vec![l]);
        path.push(a);
        hazards.push(h);
        previous = a;
    }

    let e: f64 = event.sample(Exp1);
    let (mut time, mut happened) = simulate_event_time(&hazards, e);
    if time >= params.admin_time {
        time = params.admin_time;
        happened = false;
    }
    let attended = (0..k_max).filter(|&k| (k as f64) < time).count();
    covariates.truncate(attended);
    path.truncate(attended);
    Generated {
        subject: LongitudinalSubject {
            id: format!("{}", i + 1),
            covariates,
            treatment: path,
            baseline: Vec::new(),
            event_time: time,
            event: happened,
        },
        u,
        negative,
    }
}

fn assemble(params: &DgmParams, key: StreamKey, n: usize, treatment: Treatment<'_>) -> SimulatedData {
    let mut subjects = Vec::with_capacity(n);
    let mut latent_u = Vec::with_capacity(n);
    let mut negative_hazards = 0;
    for i in 0..n {
        let g = generate_subject(params, &key, i, &treatment);
        subjects.push(g.subject);
        latent_u.push(g.u);
        negative_hazards += g.negative;
    }
    SimulatedData {
        dataset: Dataset {
            covariate_names: vec!["L".into()],
            baseline_names: Vec::new(),
            subjects,
        },
        latent_u,
        negative_hazards,
        key,
        params: *params,
    }
}

/// Observational data: treatment follows the data-generating treatment model
/// and is absorbing once started.
pub fn generate_observational(params: &DgmParams, n: usize, key: StreamKey) -> SimulatedData {
    assemble(params, key, n, Treatment::Observational)
}

/// Counterfactual data in which every subject of `source` follows `path`.
/// Baseline draws, covariate noise and event draws are replayed from the
/// source's streams, so `U` and `L_0` are shared exactly.
pub fn generate_perfect(source: &SimulatedData, path: &[bool]) -> SimulatedData {
    assemble(&source.params, source.key, source.dataset.len(), Treatment::Forced(path))
}

/// The data-generating treatment model, for validation with known weights.
#[derive(Debug, Clone, Copy)]
pub struct OracleTreatment(pub DgmParams);

impl TreatmentProbability for OracleTreatment {
    fn prob_treated(&self, subject: &LongitudinalSubject, visit: usize) -> f64 {
        if visit > 0 && subject.treatment[visit - 1] {
            return 1.0;
        }
        self.0.treatment_model(visit).probability(subject.covariates[visit][0])
    }
}
