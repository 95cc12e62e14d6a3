//! One-to-one matching of detections to ground truth and the resulting
//! confusion tables.

use serde::Serialize;
use thiserror::Error;

use super::synth::GroundTruthLabel;
use crate::model::{Millis, SpectrumEvent};

/// Matching tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tolerances {
    pub time_ms: Millis,
    pub freq_bins: usize,
    pub boundary_ms: Millis,
}

impl Tolerances {
    /// Two tick intervals in time, one bin in frequency.
    pub fn for_tick(tick_ms: Millis) -> Self {
        Self {
            time_ms: 2 * tick_ms,
            freq_bins: 1,
            boundary_ms: 2 * tick_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchedPair {
    pub detected: usize,
    pub truth: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_detected: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
    detected: Vec<GroundTruthLabel>,
    truth: Vec<GroundTruthLabel>,
}

impl Matching {
    pub fn detected_box(&self, i: usize) -> &GroundTruthLabel {
        &self.detected[i]
    }

    pub fn truth_box(&self, i: usize) -> &GroundTruthLabel {
        &self.truth[i]
    }

    pub fn truth_count(&self) -> usize {
        self.truth.len()
    }

    pub fn detected_count(&self) -> usize {
        self.detected.len()
    }
}

fn overlap(a0: i128, a1: i128, b0: i128, b1: i128) -> i128 {
    (a1.min(b1) - a0.max(b0) + 1).max(0)
}

pub fn event_box(e: &SpectrumEvent) -> GroundTruthLabel {
    GroundTruthLabel {
        t_start: e.t_start,
        t_stop: e.t_stop,
        f_start_bin: e.f_start_bin,
        f_stop_bin: e.f_stop_bin,
    }
}

/// Greedy one-to-one matching by descending time-frequency intersection.
///
/// A pair is a candidate when the detection overlaps the truth box dilated by
/// `tol_time_ms` in time and `tol_freq_bins` in frequency. Ties prefer the
/// earlier truth start.
pub fn match_events(
    detected: &[SpectrumEvent],
    truth: &[GroundTruthLabel],
    tol_time_ms: Millis,
    tol_freq_bins: usize,
) -> Matching {
    let det: Vec<GroundTruthLabel> = detected.iter().map(event_box).collect();
    match_boxes(det, truth.to_vec(), tol_time_ms, tol_freq_bins)
}

pub fn match_boxes(
    detected: Vec<GroundTruthLabel>,
    truth: Vec<GroundTruthLabel>,
    tol_time_ms: Millis,
    tol_freq_bins: usize,
) -> Matching {
    assert!(tol_time_ms >= 0, "tolerances must be non-negative");
    let tol_t = i128::from(tol_time_ms);
    let tol_f = tol_freq_bins as i128;
    let mut candidates: Vec<(i128, usize, usize)> = Vec::new();
    for (ti, t) in truth.iter().enumerate() {
        let (ts, te) = (i128::from(t.t_start), i128::from(t.t_stop));
        let (fs, fe) = (t.f_start_bin as i128, t.f_stop_bin as i128);
        for (di, d) in detected.iter().enumerate() {
            let (ds, de) = (i128::from(d.t_start), i128::from(d.t_stop));
            let (gs, ge) = (d.f_start_bin as i128, d.f_stop_bin as i128);
            if overlap(ds, de, ts - tol_t, te + tol_t) == 0
                || overlap(gs, ge, fs - tol_f, fe + tol_f) == 0
            {
                continue;
            }
            let area = overlap(ds, de, ts, te) * overlap(gs, ge, fs, fe);
            candidates.push((area, ti, di));
        }
    }
    candidates.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(truth[a.1].t_start.cmp(&truth[b.1].t_start))
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut truth_used = vec![false; truth.len()];
    let mut det_used = vec![false; detected.len()];
    let mut pairs = Vec::new();
    for (_, ti, di) in candidates {
        if !truth_used[ti] && !det_used[di] {
            truth_used[ti] = true;
            det_used[di] = true;
            pairs.push(MatchedPair {
                detected: di,
                truth: ti,
            });
        }
    }
    pairs.sort_by_key(|p| p.truth);
    Matching {
        pairs,
        unmatched_detected: (0..detected.len()).filter(|&i| !det_used[i]).collect(),
        unmatched_truth: (0..truth.len()).filter(|&i| !truth_used[i]).collect(),
        detected,
        truth,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("confusion rates need at least one ground-truth event")]
pub struct EmptyTruth;

/// Detected-vs-truth tallies. Every rate uses the truth count as denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConfusionMatrix {
    pub correctly_detected: usize,
    pub undetected: usize,
    pub falsely_detected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConfusionRates {
    pub correct: f64,
    pub missed: f64,
    pub false_detections: f64,
}

impl ConfusionMatrix {
    pub fn truth_count(&self) -> usize {
        self.correctly_detected + self.undetected
    }

    pub fn detected_count(&self) -> usize {
        self.correctly_detected + self.falsely_detected
    }

    pub fn rates(&self) -> Result<ConfusionRates, EmptyTruth> {
        let n = self.truth_count();
        if n == 0 {
            return Err(EmptyTruth);
        }
        let n = n as f64;
        Ok(ConfusionRates {
            correct: self.correctly_detected as f64 / n,
            missed: self.undetected as f64 / n,
            false_detections: self.falsely_detected as f64 / n,
        })
    }

    /// Rates as whole percentages.
    pub fn percentages(&self) -> Result<(u32, u32, u32), EmptyTruth> {
        let r = self.rates()?;
        let pct = |x: f64| (x * 100.0).round() as u32;
        Ok((pct(r.correct), pct(r.missed), pct(r.false_detections)))
    }
}

pub fn confusion(m: &Matching) -> ConfusionMatrix {
    ConfusionMatrix {
        correctly_detected: m.pairs.len(),
        undetected: m.unmatched_truth.len(),
        falsely_detected: m.unmatched_detected.len(),
    }
}

/// Boundary label confusion among matched events.
///
/// `counts[a][m]`: automatic label `a` scored against manual label `m`, with
/// index 0 = TxStart and 1 = TxStop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StartStopMatrix {
    pub counts: [[usize; 2]; 2],
    /// Boundaries outside tolerance that are still closer to their own kind.
    pub misplaced: [usize; 2],
    /// Boundaries of unmatched detections, by kind.
    pub false_boundaries: [usize; 2],
}

impl StartStopMatrix {
    pub fn diagonal(&self) -> usize {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn off_diagonal(&self) -> usize {
        self.counts[0][1] + self.counts[1][0]
    }
}

/// Scores each matched detection's start and stop against the truth boundaries.
///
/// Within `boundary_tol_ms` of the same-kind boundary counts on the diagonal;
/// strictly nearer to the opposite truth boundary counts off the diagonal.
pub fn start_stop_confusion(m: &Matching, boundary_tol_ms: Millis) -> StartStopMatrix {
    let mut out = StartStopMatrix::default();
    for p in &m.pairs {
        let d = m.detected_box(p.detected);
        let t = m.truth_box(p.truth);
        let truth_bounds = [t.t_start, t.t_stop];
        for (kind, &at) in [d.t_start, d.t_stop].iter().enumerate() {
            let own = (at - truth_bounds[kind]).abs();
            let other = (at - truth_bounds[1 - kind]).abs();
            if own <= boundary_tol_ms {
                out.counts[kind][kind] += 1;
            } else if other < own {
                out.counts[kind][1 - kind] += 1;
            } else {
                out.misplaced[kind] += 1;
            }
        }
    }
    out.false_boundaries = [m.unmatched_detected.len(); 2];
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BandPlan;

    fn label(ts: Millis, te: Millis, fs: usize, fe: usize) -> GroundTruthLabel {
        GroundTruthLabel { t_start: ts, t_stop: te, f_start_bin: fs, f_stop_bin: fe }
    }

    fn event(id: u64, l: GroundTruthLabel) -> SpectrumEvent {
        let plan = BandPlan::new(0.0, 1.0, 64).unwrap();
        SpectrumEvent::from_bins(id, l.t_start, l.t_stop, l.f_start_bin, l.f_stop_bin, -70.0, 1, &plan)
    }

    #[test]
    fn identity_matches_all() {
        let truth = vec![label(0, 900, 1, 3), label(2000, 2500, 10, 10), label(100, 400, 20, 25)];
        let det: Vec<_> = truth.iter().enumerate().map(|(i, &l)| event(i as u64, l)).collect();
        let m = match_events(&det, &truth, 0, 0);
        assert_eq!(m.pairs.len(), 3);
        assert!(m.unmatched_detected.is_empty() && m.unmatched_truth.is_empty());
        assert!(m.pairs.iter().all(|p| p.detected == p.truth));
        let s = start_stop_confusion(&m, 0);
        assert_eq!(s.diagonal(), 6);
        assert_eq!(s.off_diagonal(), 0);
    }

    #[test]
    fn detection_spanning_two_truths_takes_larger() {
        let truth = vec![label(0, 1000, 0, 1), label(0, 1000, 4, 9)];
        let det = vec![event(0, label(0, 1000, 1, 6))];
        let m = match_events(&det, &truth, 200, 1);
        assert_eq!(m.pairs, vec![MatchedPair { detected: 0, truth: 1 }]);
        assert_eq!(m.unmatched_truth, vec![0]);
    }

    #[test]
    fn disjoint_is_unmatched_both_ways() {
        let truth = vec![label(0, 100, 0, 1)];
        let det = vec![event(0, label(5000, 5100, 30, 31))];
        let m = match_events(&det, &truth, 200, 1);
        assert!(m.pairs.is_empty());
        let c = confusion(&m);
        assert_eq!((c.correctly_detected, c.undetected, c.falsely_detected), (0, 1, 1));
    }

    #[test]
    fn tolerance_admits_near_misses() {
        let truth = vec![label(1000, 2000, 5, 6)];
        let det = vec![event(0, label(2150, 2500, 8, 8))];
        assert!(match_events(&det, &truth, 100, 1).pairs.is_empty());
        assert_eq!(match_events(&det, &truth, 200, 2).pairs.len(), 1);
    }

    #[test]
    fn confusion_rates_and_errors() {
        let perfect = ConfusionMatrix { correctly_detected: 10, undetected: 0, falsely_detected: 0 };
        assert_eq!(perfect.percentages(), Ok((100, 0, 0)));
        let none = confusion(&match_events(&[], &[label(0, 1, 0, 0); 5], 0, 0));
        assert_eq!((none.correctly_detected, none.undetected, none.falsely_detected), (0, 5, 0));
        let empty = ConfusionMatrix { correctly_detected: 0, undetected: 0, falsely_detected: 3 };
        assert_eq!(empty.rates(), Err(EmptyTruth));
    }

    #[test]
    fn boundary_attribution() {
        let truth = vec![label(0, 1000, 0, 3)];
        // start lands near the truth stop, stop is far past everything
        let det = vec![event(0, label(900, 5000, 0, 3))];
        let m = match_events(&det, &truth, 0, 0);
        let s = start_stop_confusion(&m, 50);
        assert_eq!(s.counts[0][1], 1);
        assert_eq!(s.misplaced[1], 1);
        assert_eq!(s.false_boundaries, [0, 0]);
    }
}
