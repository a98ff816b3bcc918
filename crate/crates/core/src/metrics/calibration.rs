use serde::{Deserialize, Serialize};

use super::MetricInputs;
use crate::survival::{weighted_kaplan_meier, FixedWeights, KmObservation, LeftLimitTrajectories};

/// How the weighted Kaplan–Meier curve behind observed risks is weighted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedWeighting {
    /// Weights updated at each visit along the curve.
    #[default]
    TimeUpdated,
    /// Every subject carries its weight at the horizon for the whole curve.
    FixedAtHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGroup {
    pub group: usize,
    pub size: usize,
    pub lower: f64,
    pub upper: f64,
    pub mean_predicted: f64,
    /// `None` when the group's weighted curve is inestimable at the horizon.
    pub observed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub tau: f64,
    pub mean_predicted: f64,
    pub observed: Option<f64>,
    pub oe: Option<f64>,
    pub groups: Vec<CalibrationGroup>,
}

/// `1 - Ŝ(τ)` from a weighted Kaplan–Meier curve over `members`.
pub fn observed_risk(inputs: &MetricInputs<'_>, members: &[usize], tau: f64, weighting: ObservedWeighting) -> Option<f64> {
    let obs: Vec<KmObservation> = members
        .iter()
        .map(|&i| KmObservation {
            subject: i,
            time: inputs.records[i].time,
            event: inputs.records[i].is_event(),
        })
        .collect();
    let ipacw = &inputs.weights.ipacw;
    let curve = match weighting {
        ObservedWeighting::TimeUpdated => weighted_kaplan_meier(&obs, &LeftLimitTrajectories(ipacw)),
        ObservedWeighting::FixedAtHorizon => {
            let fixed: Vec<f64> = ipacw.iter().map(|w| w.at(tau)).collect();
            weighted_kaplan_meier(&obs, &FixedWeights(&fixed))
        }
    };
    curve.risk_at(tau)
}

/// Mean-calibration and grouped calibration at `tau` with `groups` equal-sized
/// groups of predicted risk.
pub fn calibration(inputs: &MetricInputs<'_>, tau: f64, groups: usize, weighting: ObservedWeighting) -> CalibrationResult {
    let preds = inputs.predictions;
    let n = preds.len();
    let mean_predicted = preds.iter().sum::<f64>() / n as f64;
    let everyone: Vec<usize> = (0..n).collect();
    let observed = observed_risk(inputs, &everyone, tau, weighting);

    let mut order = everyone;
    order.sort_by(|&a, &b| preds[a].total_cmp(&preds[b]));
    let groups = groups.clamp(1, n.max(1));
    let grouped = (0..groups)
        .filter_map(|g| {
            let members = &order[g * n / groups..(g + 1) * n / groups];
            let (&first, &last) = (members.first()?, members.last()?);
            Some(CalibrationGroup {
                group: g + 1,
                size: members.len(),
                lower: preds[first],
                upper: preds[last],
                mean_predicted: members.iter().map(|&i| preds[i]).sum::<f64>() / members.len() as f64,
                observed: observed_risk(inputs, members, tau, weighting),
            })
        })
        .collect();

    CalibrationResult {
        tau,
        mean_predicted,
        observed,
        oe: observed.map(|o| o / mean_predicted),
        groups: grouped,
    }
}
