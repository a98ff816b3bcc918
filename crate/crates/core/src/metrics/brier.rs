use serde::{Deserialize, Serialize};

use super::MetricInputs;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BrierResult {
    pub brier: Option<f64>,
    pub null_brier: Option<f64>,
    /// `1 - BS / BS_0`, as a fraction.
    pub scaled: Option<f64>,
    /// Weighted event proportion used as the null model's risk.
    pub null_risk: Option<f64>,
}

/// Inverse-probability-weighted Brier score at `t`, averaged over all `n`
/// subjects including those who carry zero weight.
pub fn brier(inputs: &MetricInputs<'_>, t: f64) -> BrierResult {
    let n = inputs.records.len();
    if n == 0 {
        return BrierResult::default();
    }
    // (outcome indicator, prediction, weight) for every subject with a known status at t.
    let mut terms: Vec<(f64, f64, f64)> = Vec::with_capacity(n);
    for (i, r) in inputs.records.iter().enumerate() {
        let entry = if r.is_event() && r.time <= t {
            inputs.weights.left_limit(i, r.time).map(|w| (1.0, w))
        } else if r.event_free_through(t) {
            inputs.weights.event_free(i, t).map(|w| (0.0, w))
        } else {
            None
        };
        if let Some((y, w)) = entry {
            terms.push((y, inputs.predictions[i], w));
        }
    }
    let nf = n as f64;
    let bs = terms.iter().map(|&(y, r, w)| (y - r) * (y - r) * w).sum::<f64>() / nf;
    let total_w: f64 = terms.iter().map(|x| x.2).sum();
    if total_w <= 0.0 {
        return BrierResult {
            brier: Some(bs),
            ..Default::default()
        };
    }
    let p0 = terms.iter().map(|&(y, _, w)| y * w).sum::<f64>() / total_w;
    let bs0 = terms.iter().map(|&(y, _, w)| (y - p0) * (y - p0) * w).sum::<f64>() / nf;
    BrierResult {
        brier: Some(bs),
        null_brier: Some(bs0),
        scaled: (bs0 > 0.0).then(|| 1.0 - bs / bs0),
        null_risk: Some(p0),
    }
}
