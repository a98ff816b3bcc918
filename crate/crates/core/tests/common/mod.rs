//! Property checks shared by the property tests and the acceptance run. Each
//! check returns a short summary on success and a description of the first
//! counterexample otherwise.

#![allow(dead_code)]

use counterval::data::{apply_artificial_censoring, Dataset, EndOfFollowUp, StrategySpec, ViewRecord};
use counterval::development::HazardFamily;
use counterval::glm::{FittedBinaryModel, Link};
use counterval::metrics::{auc_cd, brier, cindex, MetricInputs};
use counterval::metrics::PerformanceReport;
use counterval::report::ValidationReport;
use counterval::simulation::{
    generate_observational, run_replication, run_scenario, write_metrics_csv, Estimator, MetricRow,
    OracleTreatment, Role, ScenarioId, SimulationConfig, StreamKey,
};
use counterval::survival::{weighted_kaplan_meier, KmObservation, UnitWeights};
use counterval::weights::{
    compute_ipacw, fit_stabilized_iptw, fit_treatment_models, CensoringSurvival, CombinedWeights, Pooling,
    TreatmentModelSpec, WeightTrajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

/// A small random evaluation set with tied times, tied predictions and all
/// three kinds of end of follow-up.
pub struct RandomCase {
    pub records: Vec<ViewRecord>,
    pub predictions: Vec<f64>,
    pub trajectories: Vec<WeightTrajectory>,
    /// `(time, censored)` used for the censoring survival.
    pub follow_up: Vec<(f64, bool)>,
}

pub fn random_case(rng: &mut ChaCha8Rng, max_n: usize) -> RandomCase {
    let n = rng.random_range(2..=max_n);
    let mut records = Vec::with_capacity(n);
    let mut predictions = Vec::with_capacity(n);
    let mut trajectories = Vec::with_capacity(n);
    for i in 0..n {
        let time = if rng.random_bool(0.5) {
            f64::from(rng.random_range(1..=12u32)) * 0.5
        } else {
            rng.random_range(0.0..6.0)
        };
        let end = match rng.random_range(0..10) {
            0..=4 => EndOfFollowUp::Event,
            5..=7 => EndOfFollowUp::Censored,
            _ => EndOfFollowUp::Deviated,
        };
        records.push(ViewRecord {
            subject: i,
            deviation: None,
            time,
            end,
        });
        predictions.push(if rng.random_bool(0.3) {
            f64::from(rng.random_range(0..5u32)) / 5.0
        } else {
            rng.random::<f64>()
        });
        let pieces = rng.random_range(0..=7);
        let mut w = 1.0;
        let values = (0..pieces)
            .map(|_| {
                w *= 1.0 + rng.random::<f64>() * 2.0;
                w
            })
            .collect();
        trajectories.push(WeightTrajectory::from_values(values));
    }
    let follow_up = records
        .iter()
        .map(|r| (r.time, r.end == EndOfFollowUp::Censored))
        .collect();
    RandomCase {
        records,
        predictions,
        trajectories,
        follow_up,
    }
}

fn is_event(r: &ViewRecord) -> bool {
    r.end == EndOfFollowUp::Event
}

fn event_free_through(r: &ViewRecord, t: f64) -> bool {
    r.time > t || (r.time == t && r.end == EndOfFollowUp::Censored)
}

/// Product-limit survival of the censoring times, written out directly.
struct NaiveCensoring<'a>(&'a [(f64, bool)]);

impl NaiveCensoring<'_> {
    fn value(&self, t: f64, strict: bool) -> f64 {
        let mut times: Vec<f64> = self
            .0
            .iter()
            .filter(|(s, c)| *c && if strict { *s < t } else { *s <= t })
            .map(|(s, _)| *s)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times.iter().fold(1.0, |g, &s| {
            let at_risk = self.0.iter().filter(|(u, _)| *u >= s).count() as f64;
            let censored = self.0.iter().filter(|(u, c)| *c && *u == s).count() as f64;
            g * (1.0 - censored / at_risk)
        })
    }
}

/// Weight on piece `p`, holding the last value and using 1 before any visit.
fn piece_value(values: &[f64], p: usize) -> f64 {
    if values.is_empty() {
        1.0
    } else {
        values[p.min(values.len() - 1)]
    }
}

fn left_piece_value(values: &[f64], t: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else {
        piece_value(values, t.ceil() as usize - 1)
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn same_option(a: Option<f64>, b: Option<f64>, exact: bool) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => {
            if exact {
                x == y
            } else {
                close(x, y)
            }
        }
        _ => false,
    }
}

/// Unit weights: weighted estimators against plain textbook versions.
pub fn unit_weight_reductions(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let c = random_case(&mut rng, 30);
        let n = c.records.len();
        let weights = CombinedWeights::censoring_only(n, CensoringSurvival::none());
        let inputs = MetricInputs::new(&c.records, &weights, &c.predictions);

        let obs: Vec<KmObservation> = c
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| KmObservation {
                subject: i,
                time: r.time,
                event: is_event(r),
            })
            .collect();
        let km = weighted_kaplan_meier(&obs, &UnitWeights);
        let mut event_times: Vec<f64> = c.records.iter().filter(|r| is_event(r)).map(|r| r.time).collect();
        event_times.sort_by(f64::total_cmp);
        event_times.dedup();
        let mut s = 1.0;
        for &t in &event_times {
            let at_risk = c.records.iter().filter(|r| r.time >= t).count() as f64;
            let deaths = c.records.iter().filter(|r| is_event(r) && r.time == t).count() as f64;
            s *= 1.0 - deaths / at_risk;
            if km.survival_at(t) != Some(s) {
                return Err(format!("case {case}: KM at {t} is {:?}, expected {s}", km.survival_at(t)));
            }
        }

        let tau = rng.random_range(1.0..6.0);
        let (mut conc, mut pairs) = (0.0, 0u64);
        for (i, ri) in c.records.iter().enumerate() {
            if !is_event(ri) || ri.time > tau {
                continue;
            }
            for (j, rj) in c.records.iter().enumerate() {
                if rj.time > ri.time {
                    pairs += 1;
                    if c.predictions[i] > c.predictions[j] {
                        conc += 1.0;
                    }
                }
            }
        }
        let expected = (pairs > 0).then(|| conc / pairs as f64);
        let got = cindex(&inputs, tau).value;
        if !same_option(got, expected, true) {
            return Err(format!("case {case}: c-index {got:?}, expected {expected:?}"));
        }

        let cases_at: Vec<usize> = (0..n).filter(|&i| is_event(&c.records[i]) && c.records[i].time <= tau).collect();
        let controls: Vec<usize> = (0..n).filter(|&i| event_free_through(&c.records[i], tau)).collect();
        let mut conc = 0.0;
        for &i in &cases_at {
            for &j in &controls {
                if c.predictions[i] > c.predictions[j] {
                    conc += 1.0;
                }
            }
        }
        let total = (cases_at.len() * controls.len()) as f64;
        let expected = (total > 0.0).then(|| conc / total);
        let got = auc_cd(&inputs, tau).value;
        if !same_option(got, expected, true) {
            return Err(format!("case {case}: AUC {got:?}, expected {expected:?}"));
        }

        let known: Vec<(f64, f64)> = (0..n)
            .filter_map(|i| {
                let r = &c.records[i];
                if is_event(r) && r.time <= tau {
                    Some((1.0, c.predictions[i]))
                } else if event_free_through(r, tau) {
                    Some((0.0, c.predictions[i]))
                } else {
                    None
                }
            })
            .collect();
        let nf = n as f64;
        let bs = known.iter().map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / nf;
        let b = brier(&inputs, tau);
        if b.brier != Some(bs) {
            return Err(format!("case {case}: Brier {:?}, expected {bs}", b.brier));
        }
        if !known.is_empty() {
            let p0 = known.iter().map(|k| k.0).sum::<f64>() / known.len() as f64;
            let bs0 = known.iter().map(|(y, _)| (y - p0) * (y - p0)).sum::<f64>() / nf;
            let scaled = (bs0 > 0.0).then(|| 1.0 - bs / bs0);
            if !same_option(b.scaled, scaled, true) {
                return Err(format!("case {case}: scaled Brier {:?}, expected {scaled:?}", b.scaled));
            }
        }
    }
    Ok(format!("{cases} random datasets"))
}

/// Weighted c-index and AUC against explicit enumeration of every pair.
pub fn pair_enumeration(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs_seen = 0u64;
    for case in 0..cases {
        let c = random_case(&mut rng, 200);
        let n = c.records.len();
        let g = NaiveCensoring(&c.follow_up);
        let weights = CombinedWeights {
            ipacw: c.trajectories.clone(),
            censoring: CensoringSurvival::from_follow_up(c.follow_up.iter().copied()),
        };
        let inputs = MetricInputs::new(&c.records, &weights, &c.predictions);
        let tau = rng.random_range(1.0..6.0);

        let (mut conc, mut total, mut pairs) = (0.0, 0.0, 0u64);
        for i in 0..n {
            let ri = &c.records[i];
            if !is_event(ri) || ri.time > tau {
                continue;
            }
            let (g_at, g_before) = (g.value(ri.time, false), g.value(ri.time, true));
            if g_at <= 0.0 || g_before <= 0.0 {
                continue;
            }
            let wi = left_piece_value(c.trajectories[i].values(), ri.time) / g_before;
            for j in 0..n {
                if c.records[j].time <= ri.time {
                    continue;
                }
                let wj = piece_value(c.trajectories[j].values(), ri.time.floor() as usize) / g_at;
                pairs += 1;
                total += wi * wj;
                if c.predictions[i] > c.predictions[j] {
                    conc += wi * wj;
                }
            }
        }
        let got = cindex(&inputs, tau);
        let expected = (pairs > 0 && total > 0.0).then(|| conc / total);
        if got.comparable_pairs != pairs || !same_option(got.value, expected, false) {
            return Err(format!(
                "case {case}: c-index {:?} over {} pairs, expected {expected:?} over {pairs}",
                got.value, got.comparable_pairs
            ));
        }
        pairs_seen += pairs;

        let g_tau = g.value(tau, true);
        let mut case_w = Vec::new();
        let mut control_w = Vec::new();
        for i in 0..n {
            let r = &c.records[i];
            if is_event(r) && r.time <= tau {
                let gb = g.value(r.time, true);
                if gb > 0.0 {
                    case_w.push((i, left_piece_value(c.trajectories[i].values(), r.time) / gb));
                }
            } else if event_free_through(r, tau) && g_tau > 0.0 {
                control_w.push((i, piece_value(c.trajectories[i].values(), tau.floor() as usize) / g_tau));
            }
        }
        let (mut conc, mut total) = (0.0, 0.0);
        for &(i, wi) in &case_w {
            for &(j, wj) in &control_w {
                total += wi * wj;
                if c.predictions[i] > c.predictions[j] {
                    conc += wi * wj;
                }
            }
        }
        let expected = (!case_w.is_empty() && !control_w.is_empty() && total > 0.0).then(|| conc / total);
        let got = auc_cd(&inputs, tau).value;
        if !same_option(got, expected, false) {
            return Err(format!("case {case}: AUC {got:?}, expected {expected:?}"));
        }
    }
    Ok(format!("{cases} datasets, {pairs_seen} comparable pairs"))
}

/// Strictly increasing transforms of the predictions leave c-index and AUC unchanged.
pub fn monotone_invariance(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transforms: [(&str, fn(f64) -> f64); 3] = [
        ("exp", |x| (3.0 * x).exp()),
        ("cube", |x| x * x * x - 0.5),
        ("logit", |x| (x.clamp(1e-9, 1.0 - 1e-9) / (1.0 - x.clamp(1e-9, 1.0 - 1e-9))).ln()),
    ];
    for case in 0..cases {
        let c = random_case(&mut rng, 100);
        let weights = CombinedWeights {
            ipacw: c.trajectories.clone(),
            censoring: CensoringSurvival::from_follow_up(c.follow_up.iter().copied()),
        };
        let tau = rng.random_range(1.0..6.0);
        let base = MetricInputs::new(&c.records, &weights, &c.predictions);
        let (c0, a0) = (cindex(&base, tau).value, auc_cd(&base, tau).value);
        for (name, f) in transforms {
            let moved: Vec<f64> = c.predictions.iter().map(|&p| f(p)).collect();
            let inputs = MetricInputs::new(&c.records, &weights, &moved);
            let (c1, a1) = (cindex(&inputs, tau).value, auc_cd(&inputs, tau).value);
            if c1 != c0 || a1 != a0 {
                return Err(format!("case {case}, {name}: ({c0:?}, {a0:?}) became ({c1:?}, {a1:?})"));
            }
        }
    }
    Ok(format!("{cases} datasets, 3 transforms"))
}

fn serialized_run(config: &SimulationConfig, threads: usize) -> Result<(String, Vec<u8>), String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    let run = pool.install(|| run_scenario(config)).map_err(|e| e.to_string())?;
    let json = serde_json::to_string(&run.report).map_err(|e| e.to_string())?;
    let mut csv = Vec::new();
    write_metrics_csv(&run.replications, &mut csv).map_err(|e| e.to_string())?;
    Ok((json, csv))
}

/// Two runs with the same seed serialize to the same bytes, whatever the
/// number of worker threads.
pub fn seed_determinism() -> Check {
    let mut compared = 0;
    for (scenario, family) in [
        (ScenarioId::S1, HazardFamily::Additive),
        (ScenarioId::S3, HazardFamily::Additive),
        (ScenarioId::S6a, HazardFamily::Cox),
    ] {
        let mut config = SimulationConfig::new(scenario, family);
        config.n = 400;
        config.reps = 4;
        config.seed = 11;
        let first = serialized_run(&config, 1)?;
        let second = serialized_run(&config, 3)?;
        if first != second {
            return Err(format!("scenario {scenario} ({family:?}) differs between runs"));
        }
        config.seed = 12;
        if serialized_run(&config, 1)? == first {
            return Err(format!("scenario {scenario} ({family:?}) ignores the seed"));
        }
        compared += 1;
    }
    Ok(format!("{compared} scenarios, 1 vs 3 threads"))
}

/// Validation datasets for every scenario of both families.
pub fn scenario_datasets(n: usize, seed: u64) -> Vec<(String, Dataset, TreatmentModelSpec)> {
    let mut out = Vec::new();
    for family in [HazardFamily::Additive, HazardFamily::Cox] {
        for id in ScenarioId::ALL {
            let config = SimulationConfig::new(id, family);
            let scenario = config.scenario();
            let sim = generate_observational(&scenario.validation, n, StreamKey::new(seed, 0, Role::Validation));
            let spec = TreatmentModelSpec::parse(&scenario.weight_formula, &sim.dataset, scenario.weight_link)
                .expect("scenario weight formula");
            out.push((format!("{id} {family:?}"), sim.dataset, spec));
        }
    }
    out
}

fn check_trajectories(label: &str, trajectories: &[WeightTrajectory]) -> Result<usize, String> {
    for (i, t) in trajectories.iter().enumerate() {
        let v = t.values();
        if v.iter().any(|&w| !(w >= 1.0)) {
            return Err(format!("{label}: subject {i} has a weight below 1: {v:?}"));
        }
        if v.windows(2).any(|p| p[1] < p[0]) {
            return Err(format!("{label}: subject {i} has decreasing weights: {v:?}"));
        }
    }
    Ok(trajectories.len())
}

/// Artificial-censoring weights are at least 1 and never decrease.
pub fn ipacw_monotone(n: usize, seed: u64) -> Check {
    let mut subjects = 0;
    for (label, dataset, spec) in scenario_datasets(n, seed) {
        let fitted = fit_treatment_models(&dataset, &spec).map_err(|e| format!("{label}: {e}"))?;
        let config = SimulationConfig::new(ScenarioId::S1, HazardFamily::Additive);
        let oracle = OracleTreatment(config.scenario().validation);
        for strategy in [
            StrategySpec::never_treated(dataset.max_visits()),
            StrategySpec::always_treated(dataset.max_visits()),
        ] {
            let view = apply_artificial_censoring(&dataset, &strategy).map_err(|e| e.to_string())?;
            subjects += check_trajectories(&label, &compute_ipacw(&dataset, &view, &fitted).trajectories)?;
            subjects += check_trajectories(&label, &compute_ipacw(&dataset, &view, &oracle).trajectories)?;
        }
    }
    Ok(format!("{subjects} weight trajectories"))
}

/// Derivative of the inverse link.
fn inverse_link_slope(link: Link, eta: f64) -> f64 {
    match link {
        Link::Logit => {
            let p = 1.0 / (1.0 + (-eta).exp());
            p * (1.0 - p)
        }
        Link::Cauchit => 1.0 / (std::f64::consts::PI * (1.0 + eta * eta)),
    }
}

/// Bernoulli log-likelihood score of `model` on `rows` of `(outcome, covariates)`.
fn score(model: &FittedBinaryModel, rows: &[(bool, Vec<f64>)]) -> Vec<f64> {
    let mut s = vec![0.0; model.coefficients.len()];
    for (y, x) in rows {
        let eta = model.linear_predictor(x);
        let p = model.link.inverse(eta);
        let r = (f64::from(u8::from(*y)) - p) * inverse_link_slope(model.link, eta) / (p * (1.0 - p));
        s[0] += r;
        for (j, t) in model.terms.iter().enumerate() {
            s[j + 1] += r * t.evaluate(x).expect("defined term");
        }
    }
    s
}

/// Treatment-initiation rows per model: the decision at visit `k` among those
/// untreated before `k`, with current covariates, then first-visit
/// covariates, then baseline predictors.
fn initiation_rows(dataset: &Dataset, model: &FittedBinaryModel, visits: impl Fn(usize) -> bool) -> Vec<(bool, Vec<f64>)> {
    let mut rows = Vec::new();
    for s in &dataset.subjects {
        for k in 0..s.visits() {
            if (k > 0 && s.treatment[k - 1]) || !visits(k) {
                continue;
            }
            let mut x = s.covariates[k].clone();
            x.extend_from_slice(&s.covariates[0]);
            x.extend_from_slice(&s.baseline);
            if model.terms.iter().all(|t| t.evaluate(&x).is_ok()) {
                rows.push((s.treatment[k], x));
            }
        }
    }
    rows
}

/// Every fitted treatment model solves its score equations.
pub fn irls_score(n: usize, seed: u64) -> Check {
    let mut models = 0;
    let mut refused = 0;
    let mut worst: f64 = 0.0;
    let mut check = |label: &str, dataset: &Dataset, model: &FittedBinaryModel, visits: &dyn Fn(usize) -> bool| {
        let rows = initiation_rows(dataset, model, visits);
        let m = score(model, &rows).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        worst = worst.max(m);
        models += 1;
        if m < 1e-6 {
            Ok(())
        } else {
            Err(format!("{label}: score residual {m:e}"))
        }
    };
    for (label, dataset, spec) in scenario_datasets(n, seed) {
        for pooling in [Pooling::All, Pooling::BaselineSeparate, Pooling::PerVisit] {
            let mut spec = spec.clone();
            spec.pooling = pooling;
            // Separate late-visit models can meet perfect separation on small
            // data; the fitter refuses those, which is not a score failure.
            let fitted = match fit_treatment_models(&dataset, &spec) {
                Ok(f) => f,
                Err(_) if pooling == Pooling::PerVisit => {
                    refused += 1;
                    continue;
                }
                Err(e) => return Err(format!("{label}: {e}")),
            };
            let parts = fitted.initiation.models();
            for (g, model) in parts.iter().enumerate() {
                let last = g + 1 == parts.len();
                let in_group = move |k: usize| match pooling {
                    Pooling::All => true,
                    _ => k == g || (last && k > g),
                };
                check(&format!("{label} {pooling:?} model {g}"), &dataset, model, &in_group)?;
            }
        }
        let numerator = TreatmentModelSpec::parse("1", &dataset, Link::Logit).map_err(|e| e.to_string())?;
        let stabilized = fit_stabilized_iptw(&dataset, &numerator, &spec).map_err(|e| format!("{label}: {e}"))?;
        for fitted in [&stabilized.numerator, &stabilized.denominator] {
            let parts = fitted.initiation.models();
            for (g, model) in parts.iter().enumerate() {
                let last = g + 1 == parts.len();
                let in_group = move |k: usize| k == g || (last && k > g);
                check(&format!("{label} stabilized model {g}"), &dataset, model, &in_group)?;
            }
        }
    }
    Ok(format!("{models} models, largest |score| {worst:.1e}, {refused} separated per-visit fits"))
}

pub fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_counterval")
}

pub fn counterval(args: &[&str]) -> std::process::Output {
    std::process::Command::new(binary())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run counterval")
}

fn row_values(r: &MetricRow) -> [Option<f64>; 7] {
    [r.oe, r.observed, r.expected, r.cindex, r.auc, r.brier, r.scaled_brier]
}

fn report_values(p: &PerformanceReport) -> [Option<f64>; 7] {
    [
        p.oe(),
        p.calibration.observed,
        Some(p.calibration.mean_predicted),
        p.cindex(),
        p.auc(),
        p.brier.brier,
        p.scaled_brier(),
    ]
}

/// Simulated data and predictions exported to CSV and validated through the
/// command line give the in-process metrics of the same replication.
pub fn pipeline_equivalence() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for (scenario, family, terms) in [
        (ScenarioId::S1, HazardFamily::Additive, "1 + L"),
        (ScenarioId::S6b, HazardFamily::Cox, "1 + L^2"),
    ] {
        let mut config = SimulationConfig::new(scenario, family);
        config.n = 600;
        config.reps = 1;
        config.seed = 21;
        let sim_dir = dir.path().join(format!("sim-{scenario}-{family:?}"));
        let sim_dir_s = sim_dir.to_string_lossy().to_string();
        let out = counterval(&[
            "simulate",
            "--scenario",
            scenario.as_str(),
            "--family",
            &format!("{family:?}").to_lowercase(),
            "--n",
            "600",
            "--reps",
            "1",
            "--seed",
            "21",
            "--dump-data",
            "--out",
            &sim_dir_s,
        ]);
        if !out.status.success() {
            return Err(format!("simulate failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
        let in_process = run_replication(&config, 0).map_err(|e| e.to_string())?;
        for strategy in ["never_treated", "always_treated"] {
            let val_dir = dir.path().join(format!("val-{scenario}-{strategy}"));
            let out = counterval(&[
                "validate",
                "--data",
                &sim_dir.join("validation.csv").to_string_lossy(),
                "--predictions",
                &sim_dir.join("predictions.csv").to_string_lossy(),
                "--strategy",
                strategy,
                "--tau",
                "5",
                "--weight-terms",
                terms,
                "--out",
                &val_dir.to_string_lossy(),
            ]);
            if !out.status.success() {
                return Err(format!("validate failed: {}", String::from_utf8_lossy(&out.stderr)));
            }
            let text = std::fs::read_to_string(val_dir.join("report.json")).map_err(|e| e.to_string())?;
            let report: ValidationReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            let subset = report.subset.as_ref().ok_or("no subset estimate")?;
            for (estimator, cli) in [(Estimator::Counterfactual, &report.counterfactual), (Estimator::Subset, subset)] {
                let row = in_process
                    .metrics
                    .iter()
                    .find(|r| r.strategy == strategy && r.estimator == estimator)
                    .ok_or("missing in-process row")?;
                for (a, b) in row_values(row).iter().zip(report_values(cli)) {
                    match (a, b) {
                        (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
                        (None, None) => {}
                        _ => return Err(format!("{scenario} {strategy} {estimator:?}: {a:?} vs {b:?}")),
                    }
                    compared += 1;
                }
            }
        }
    }
    if worst <= 1e-12 {
        Ok(format!("{compared} values, largest difference {worst:e}"))
    } else {
        Err(format!("largest difference {worst:e} over {compared} values"))
    }
}
