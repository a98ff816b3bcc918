use serde::{Deserialize, Serialize};

use super::MetricInputs;

/// Binary indexed tree over prediction ranks.
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0.0; n + 1] }
    }

    fn add(&mut self, rank: usize, value: f64) {
        let mut i = rank + 1;
        while i < self.tree.len() {
            self.tree[i] += value;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over ranks `< rank`.
    fn prefix(&self, rank: usize) -> f64 {
        let mut i = rank;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Dense ranks of `values`; equal values share a rank.
fn dense_ranks(values: &[f64]) -> (Vec<usize>, usize) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0; values.len()];
    let mut next = 0;
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && values[i] != values[order[pos - 1]] {
            next += 1;
        }
        ranks[i] = next;
    }
    (ranks, if values.is_empty() { 0 } else { next + 1 })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    /// Weighted concordance, `None` without comparable pairs.
    pub value: Option<f64>,
    pub comparable_pairs: u64,
    pub concordant_weight: f64,
    pub total_weight: f64,
}

impl PairSummary {
    fn finish(concordant: f64, total: f64, pairs: u64) -> Self {
        Self {
            value: (pairs > 0 && total > 0.0).then(|| concordant / total),
            comparable_pairs: pairs,
            concordant_weight: concordant,
            total_weight: total,
        }
    }
}

/// Weighted c-index truncated at `tau`. A pair `(i, j)` is comparable when
/// `i` has an observed event at `T̃_i ≤ τ` and `T̃_j > T̃_i`; its weight is
/// `G^{-1}(T̃_i^- | L_i) · G^{-1}(T̃_i | L_j)`. Prediction ties score zero.
pub fn cindex(inputs: &MetricInputs<'_>, tau: f64) -> PairSummary {
    let records = inputs.records;
    let n = records.len();
    let (ranks, n_ranks) = dense_ranks(inputs.predictions);
    let pieces = records
        .iter()
        .filter(|r| r.is_event() && r.time <= tau)
        .map(|r| r.time.floor() as usize + 1)
        .max()
        .unwrap_or(0);
    if pieces == 0 {
        return PairSummary::default();
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));
    let mut trees: Vec<Fenwick> = (0..pieces).map(|_| Fenwick::new(n_ranks)).collect();
    let mut totals = vec![0.0; pieces];
    let mut inserted = 0u64;
    let (mut concordant, mut total, mut pairs) = (0.0, 0.0, 0u64);

    let mut pos = 0;
    while pos < n {
        let t = records[order[pos]].time;
        let end = pos + order[pos..].iter().take_while(|&&i| records[i].time == t).count();
        if t <= tau {
            for &i in &order[pos..end] {
                if !records[i].is_event() || inserted == 0 {
                    continue;
                }
                let (Some(wi), Some(gc)) = (inputs.weights.left_limit(i, t), inverse(inputs.weights.censoring.survival(t)))
                else {
                    continue;
                };
                let piece = t.floor() as usize;
                let factor = wi * gc;
                concordant += factor * trees[piece].prefix(ranks[i]);
                total += factor * totals[piece];
                pairs += inserted;
            }
        }
        for &j in &order[pos..end] {
            let traj = &inputs.weights.ipacw[j];
            for (p, tree) in trees.iter_mut().enumerate() {
                let v = traj.on_piece(p);
                tree.add(ranks[j], v);
                totals[p] += v;
            }
            inserted += 1;
        }
        pos = end;
    }
    PairSummary::finish(concordant, total, pairs)
}

fn inverse(g: f64) -> Option<f64> {
    (g > 0.0).then(|| 1.0 / g)
}

/// Weighted cumulative/dynamic AUC at `t`: cases have an observed event by `t`,
/// controls are observed event free through `t`.
pub fn auc_cd(inputs: &MetricInputs<'_>, t: f64) -> PairSummary {
    let preds = inputs.predictions;
    let mut controls: Vec<(f64, f64)> = Vec::new();
    let mut cases: Vec<(f64, f64)> = Vec::new();
    for (i, r) in inputs.records.iter().enumerate() {
        if r.is_event() && r.time <= t {
            if let Some(w) = inputs.weights.left_limit(i, r.time) {
                cases.push((preds[i], w));
            }
        } else if r.event_free_through(t) {
            if let Some(w) = inputs.weights.event_free(i, t) {
                controls.push((preds[i], w));
            }
        }
    }
    if cases.is_empty() || controls.is_empty() {
        return PairSummary::default();
    }
    controls.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut below = Vec::with_capacity(controls.len() + 1);
    below.push(0.0);
    for c in &controls {
        below.push(below.last().unwrap() + c.1);
    }
    let control_total = *below.last().unwrap();
    let mut concordant = 0.0;
    let mut case_total = 0.0;
    for &(r, w) in &cases {
        let k = controls.partition_point(|c| c.0 < r);
        concordant += w * below[k];
        case_total += w;
    }
    PairSummary::finish(
        concordant,
        case_total * control_total,
        (cases.len() * controls.len()) as u64,
    )
}

#[cfg(test)]
mod tests {
    use super::super::MetricInputs;
    use super::*;
    use crate::data::{EndOfFollowUp, ViewRecord};
    use crate::weights::{CensoringSurvival, CombinedWeights};

    fn records(times: &[f64]) -> Vec<ViewRecord> {
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| ViewRecord {
                subject: i,
                deviation: None,
                time: t,
                end: EndOfFollowUp::Event,
            })
            .collect()
    }

    #[test]
    fn three_subject_example() {
        let recs = records(&[1.0, 2.0, 3.0]);
        let w = CombinedWeights::censoring_only(3, CensoringSurvival::none());
        let preds = [0.9, 0.5, 0.7];
        let c = cindex(&MetricInputs::new(&recs, &w, &preds), 5.0);
        assert_eq!(c.value, Some(2.0 / 3.0));
        assert_eq!(c.comparable_pairs, 3);
    }

    #[test]
    fn four_subject_auc_example() {
        let recs = records(&[1.0, 1.5, 3.0, 4.0]);
        let w = CombinedWeights::censoring_only(4, CensoringSurvival::none());
        let preds = [0.8, 0.6, 0.7, 0.2];
        let a = auc_cd(&MetricInputs::new(&recs, &w, &preds), 2.0);
        assert_eq!(a.value, Some(0.75));
        assert_eq!(a.comparable_pairs, 4);
    }

    #[test]
    fn reversed_times_are_perfectly_concordant() {
        let times: Vec<f64> = (1..=20).map(|k| k as f64 / 5.0).collect();
        let preds: Vec<f64> = times.iter().map(|t| 10.0 - t).collect();
        let recs = records(&times);
        let w = CombinedWeights::censoring_only(20, CensoringSurvival::none());
        assert_eq!(cindex(&MetricInputs::new(&recs, &w, &preds), 5.0).value, Some(1.0));
    }

    #[test]
    fn prediction_ties_score_zero() {
        let recs = records(&[1.0, 2.0]);
        let w = CombinedWeights::censoring_only(2, CensoringSurvival::none());
        let c = cindex(&MetricInputs::new(&recs, &w, &[0.5, 0.5]), 5.0);
        assert_eq!(c.value, Some(0.0));
    }

    #[test]
    fn no_comparable_pairs_is_undefined() {
        let recs = records(&[1.0]);
        let w = CombinedWeights::censoring_only(1, CensoringSurvival::none());
        assert_eq!(cindex(&MetricInputs::new(&recs, &w, &[0.5]), 5.0).value, None);
        assert_eq!(auc_cd(&MetricInputs::new(&recs, &w, &[0.5]), 5.0).value, None);
    }
}
