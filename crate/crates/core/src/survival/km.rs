use crate::weights::WeightTrajectory;

/// Follow-up of one subject; `subject` indexes into the weight provider.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmObservation {
    pub subject: usize,
    pub time: f64,
    pub event: bool,
}

/// Case weights for risk sets. Weights may change over time, but must be
/// constant for all event times sharing the same `piece`.
pub trait RiskSetWeights {
    fn piece(&self, t: f64) -> i64;
    fn weight(&self, subject: usize, t: f64) -> f64;
}

pub struct UnitWeights;

impl RiskSetWeights for UnitWeights {
    fn piece(&self, _t: f64) -> i64 {
        0
    }
    fn weight(&self, _subject: usize, _t: f64) -> f64 {
        1.0
    }
}

/// Time-fixed weights.
pub struct FixedWeights<'a>(pub &'a [f64]);

impl RiskSetWeights for FixedWeights<'_> {
    fn piece(&self, _t: f64) -> i64 {
        0
    }
    fn weight(&self, subject: usize, _t: f64) -> f64 {
        self.0[subject]
    }
}

/// Visit-updated weights evaluated just before each event time, so an event in
/// `(k, k+1]` uses the weight accumulated through visit `k`.
pub struct LeftLimitTrajectories<'a>(pub &'a [WeightTrajectory]);

impl RiskSetWeights for LeftLimitTrajectories<'_> {
    fn piece(&self, t: f64) -> i64 {
        t.ceil() as i64 - 1
    }
    fn weight(&self, subject: usize, t: f64) -> f64 {
        self.0[subject].left_limit(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSurvivalCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    /// Kish effective sample size of the risk set at each jump.
    pub effective_n: Vec<f64>,
    /// First event time with a nonpositive weighted risk set; the curve is
    /// undefined from there on.
    pub inestimable_from: Option<f64>,
}

impl WeightedSurvivalCurve {
    /// `Ŝ(t)`, or `None` past the inestimable point.
    pub fn survival_at(&self, t: f64) -> Option<f64> {
        if self.inestimable_from.is_some_and(|s| t >= s) {
            return None;
        }
        let idx = self.times.partition_point(|&s| s <= t);
        Some(if idx == 0 { 1.0 } else { self.survival[idx - 1] })
    }

    /// `1 - Ŝ(t)`.
    pub fn risk_at(&self, t: f64) -> Option<f64> {
        self.survival_at(t).map(|s| 1.0 - s)
    }
}

/// Weighted Kaplan–Meier estimator. A subject is at risk at `t` when its
/// follow-up time is at least `t`.
pub fn weighted_kaplan_meier(obs: &[KmObservation], weights: &impl RiskSetWeights) -> WeightedSurvivalCurve {
    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.sort_by(|&a, &b| obs[b].time.total_cmp(&obs[a].time));

    // Descending sweep: risk sets only grow, and are re-summed whenever the
    // weight piece changes.
    let mut jumps: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut at_risk: Vec<usize> = Vec::with_capacity(obs.len());
    let (mut sum_w, mut sum_w2) = (0.0, 0.0);
    let mut piece: Option<i64> = None;
    let mut pos = 0;
    while pos < order.len() {
        let t = obs[order[pos]].time;
        let p = weights.piece(t);
        if piece != Some(p) {
            piece = Some(p);
            sum_w = 0.0;
            sum_w2 = 0.0;
            for &i in &at_risk {
                let w = weights.weight(obs[i].subject, t);
                sum_w += w;
                sum_w2 += w * w;
            }
        }
        let mut dead = 0.0;
        let mut any_event = false;
        while pos < order.len() && obs[order[pos]].time == t {
            let i = order[pos];
            let w = weights.weight(obs[i].subject, t);
            sum_w += w;
            sum_w2 += w * w;
            if obs[i].event {
                dead += w;
                any_event = true;
            }
            at_risk.push(i);
            pos += 1;
        }
        if any_event {
            jumps.push((t, dead, sum_w, sum_w2));
        }
    }

    let mut curve = WeightedSurvivalCurve {
        times: Vec::with_capacity(jumps.len()),
        survival: Vec::with_capacity(jumps.len()),
        effective_n: Vec::with_capacity(jumps.len()),
        inestimable_from: None,
    };
    let mut s = 1.0;
    for &(t, dead, risk, risk2) in jumps.iter().rev() {
        if risk <= 0.0 {
            curve.inestimable_from = Some(t);
            break;
        }
        s *= 1.0 - dead / risk;
        curve.times.push(t);
        curve.survival.push(s);
        curve.effective_n.push(risk * risk / risk2);
    }
    curve
}

/// Plain Kaplan–Meier with integer counts, used as a reference.
pub fn unweighted_kaplan_meier(times: &[f64], events: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut distinct: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut s = 1.0;
    let mut out = Vec::with_capacity(distinct.len());
    for &t in &distinct {
        let n = times.iter().filter(|&&x| x >= t).count();
        let d = times.iter().zip(events).filter(|(&x, &e)| e && x == t).count();
        s *= 1.0 - d as f64 / n as f64;
        out.push(s);
    }
    (distinct, out)
}
