//! Frequency grouping of active bins, time grouping into events, and the
//! TxStart/TxStop notifications emitted on the wire.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{BinActivity, Detection};
use crate::model::{channel_index, dbm_to_mw, mw_to_dbm, BandPlan, Millis, SpectrumEvent};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupingError {
    #[error("verdict for bin {bin} has timestamp {found}, expected {expected}")]
    TimestampMismatch {
        bin: usize,
        expected: Millis,
        found: Millis,
    },
}

/// Active bins of one tick that belong together.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGroup {
    pub timestamp: Millis,
    pub start_bin: usize,
    /// Inclusive.
    pub stop_bin: usize,
    pub member_bins: Vec<usize>,
    /// Sum of member readings in milliwatts.
    pub power_mw: f64,
}

impl FrequencyGroup {
    pub fn mean_power_dbm(&self) -> f64 {
        mw_to_dbm(self.power_mw / self.member_bins.len() as f64)
    }

    /// Single-tick event record for the per-tick transmissions store.
    pub fn to_event(&self, id: u64, plan: &BandPlan) -> SpectrumEvent {
        SpectrumEvent::from_bins(
            id,
            self.timestamp,
            self.timestamp,
            self.start_bin,
            self.stop_bin,
            self.mean_power_dbm(),
            self.member_bins.len() as u64,
            plan,
        )
    }
}

/// Partitions the active verdicts of one tick into maximal runs whose
/// successive active bins are at most `f + 1` apart.
pub fn group_frequency(
    activities: &[BinActivity],
    f: usize,
) -> Result<Vec<FrequencyGroup>, GroupingError> {
    let Some(first) = activities.first() else {
        return Ok(Vec::new());
    };
    let t = first.timestamp;
    if let Some(bad) = activities.iter().find(|a| a.timestamp != t) {
        return Err(GroupingError::TimestampMismatch {
            bin: bad.bin_index,
            expected: t,
            found: bad.timestamp,
        });
    }
    let mut active: Vec<(usize, f64)> = activities
        .iter()
        .filter(|a| a.active)
        .map(|a| (a.bin_index, a.value_dbm))
        .collect();
    active.sort_by_key(|&(b, _)| b);
    Ok(group_active_bins(t, active, f))
}

/// Groups `(bin, value)` pairs that are already sorted by bin.
pub fn group_active_bins(
    t: Millis,
    active: impl IntoIterator<Item = (usize, f64)>,
    f: usize,
) -> Vec<FrequencyGroup> {
    let mut groups: Vec<FrequencyGroup> = Vec::new();
    for (bin, value) in active {
        match groups.last_mut() {
            Some(g) if bin - g.stop_bin <= f + 1 => {
                g.stop_bin = bin;
                g.member_bins.push(bin);
                g.power_mw += dbm_to_mw(value);
            }
            _ => groups.push(FrequencyGroup {
                timestamp: t,
                start_bin: bin,
                stop_bin: bin,
                member_bins: vec![bin],
                power_mw: dbm_to_mw(value),
            }),
        }
    }
    groups
}

/// An event that is still receiving groups.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenEvent {
    pub id: u64,
    pub t_start: Millis,
    pub last_seen: Millis,
    pub start_bin: usize,
    /// Inclusive; the running union of all supporting groups.
    pub stop_bin: usize,
    pub silent_ticks: usize,
    pub power_mw: f64,
    pub cell_count: u64,
}

impl OpenEvent {
    pub fn mean_power_dbm(&self) -> f64 {
        mw_to_dbm(self.power_mw / self.cell_count as f64)
    }

    fn absorb(&mut self, g: &FrequencyGroup) {
        self.last_seen = g.timestamp;
        self.start_bin = self.start_bin.min(g.start_bin);
        self.stop_bin = self.stop_bin.max(g.stop_bin);
        self.silent_ticks = 0;
        self.power_mw += g.power_mw;
        self.cell_count += g.member_bins.len() as u64;
    }

    /// Finalizes at `last_seen`.
    pub fn close(&self, plan: &BandPlan) -> SpectrumEvent {
        SpectrumEvent::from_bins(
            self.id,
            self.t_start,
            self.last_seen,
            self.start_bin,
            self.stop_bin,
            self.mean_power_dbm(),
            self.cell_count,
            plan,
        )
    }
}

/// What one tick of time grouping did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeStep {
    pub started: Vec<OpenEvent>,
    /// Ids of open events that absorbed a group this tick.
    pub continued: Vec<u64>,
    pub closed: Vec<SpectrumEvent>,
}

/// Links frequency groups across ticks into events.
///
/// A group continues an open event when it overlaps the event's bin range
/// dilated by `F` on each side. Matching is one-to-one, preferring the largest
/// overlap, then the lower group start bin. Events close after more than `T`
/// consecutive ticks without a supporting group.
#[derive(Debug, Clone)]
pub struct TimeGrouper {
    freq_gap: usize,
    time_gap: usize,
    open: Vec<OpenEvent>,
    next_id: u64,
    last_tick: Option<Millis>,
}

impl TimeGrouper {
    pub fn new(freq_gap: usize, time_gap: usize) -> Self {
        Self::with_first_id(freq_gap, time_gap, 0)
    }

    pub fn with_first_id(freq_gap: usize, time_gap: usize, first_id: u64) -> Self {
        Self {
            freq_gap,
            time_gap,
            open: Vec::new(),
            next_id: first_id,
            last_tick: None,
        }
    }

    pub fn open_events(&self) -> &[OpenEvent] {
        &self.open
    }

    /// Advances one tick. `groups` must all carry timestamp `t` and be ordered by start bin.
    pub fn step(&mut self, groups: &[FrequencyGroup], t: Millis, plan: &BandPlan) -> TimeStep {
        debug_assert!(self.last_tick.is_none_or(|last| t > last));
        debug_assert!(groups.iter().all(|g| g.timestamp == t));
        self.last_tick = Some(t);

        let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
        for (gi, g) in groups.iter().enumerate() {
            for (ei, e) in self.open.iter().enumerate() {
                let lo = e.start_bin.saturating_sub(self.freq_gap).max(g.start_bin);
                let hi = (e.stop_bin + self.freq_gap).min(g.stop_bin);
                if lo <= hi {
                    pairs.push((hi - lo + 1, gi, ei));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then(groups[a.1].start_bin.cmp(&groups[b.1].start_bin))
                .then(self.open[a.2].start_bin.cmp(&self.open[b.2].start_bin))
                .then(self.open[a.2].id.cmp(&self.open[b.2].id))
        });

        let mut group_taken = vec![false; groups.len()];
        let mut event_match: Vec<Option<usize>> = vec![None; self.open.len()];
        for &(_, gi, ei) in &pairs {
            if !group_taken[gi] && event_match[ei].is_none() {
                group_taken[gi] = true;
                event_match[ei] = Some(gi);
            }
        }

        let mut step = TimeStep::default();
        let mut still_open = Vec::with_capacity(self.open.len() + groups.len());
        for (mut e, m) in std::mem::take(&mut self.open).into_iter().zip(event_match) {
            match m {
                Some(gi) => {
                    e.absorb(&groups[gi]);
                    step.continued.push(e.id);
                    still_open.push(e);
                }
                None => {
                    e.silent_ticks += 1;
                    if e.silent_ticks > self.time_gap {
                        step.closed.push(e.close(plan));
                    } else {
                        still_open.push(e);
                    }
                }
            }
        }
        for (g, taken) in groups.iter().zip(group_taken) {
            if taken {
                continue;
            }
            let e = OpenEvent {
                id: self.next_id,
                t_start: t,
                last_seen: t,
                start_bin: g.start_bin,
                stop_bin: g.stop_bin,
                silent_ticks: 0,
                power_mw: g.power_mw,
                cell_count: g.member_bins.len() as u64,
            };
            self.next_id += 1;
            step.started.push(e.clone());
            still_open.push(e);
        }
        self.open = still_open;
        step
    }

    /// Closes every open event at its last supporting tick.
    pub fn flush(&mut self, plan: &BandPlan) -> Vec<SpectrumEvent> {
        std::mem::take(&mut self.open)
            .iter()
            .map(|e| e.close(plan))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NotificationKind {
    TxStart,
    TxStop,
}

/// One wire record announcing the start or the end of a transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventNotification {
    pub id: u64,
    pub kind: NotificationKind,
    pub description: String,
    #[serde(rename = "type")]
    pub class: String,
    pub time: Millis,
    pub t_start: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_stop: Option<Millis>,
    pub channel_hz: f64,
    pub lchannel_hz: f64,
    pub rchannel_hz: f64,
    pub f_start_bin: usize,
    pub f_stop_bin: usize,
    pub mean_power_dbm: f64,
    /// Active cells behind `mean_power_dbm`; TxStop only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_count: Option<u64>,
}

/// Builds a notification for the half-open bin range `[start_fq, stop_fq)`.
#[allow(clippy::too_many_arguments)]
pub fn gen_notification(
    id: u64,
    kind: NotificationKind,
    t_start: Millis,
    t_stop: Option<Millis>,
    start_fq: usize,
    stop_fq: usize,
    mean_power_dbm: f64,
    plan: &BandPlan,
) -> EventNotification {
    debug_assert!(stop_fq > start_fq);
    let (description, time) = match kind {
        NotificationKind::TxStart => ("Transmission started", t_start),
        NotificationKind::TxStop => ("Transmission stopped", t_stop.unwrap_or(t_start)),
    };
    EventNotification {
        id,
        kind,
        description: description.to_string(),
        class: "info".to_string(),
        time,
        t_start,
        t_stop,
        channel_hz: plan.frequency_of(channel_index(start_fq, stop_fq)),
        lchannel_hz: plan.frequency_of(start_fq),
        rchannel_hz: plan.frequency_of(stop_fq - 1),
        f_start_bin: start_fq,
        f_stop_bin: stop_fq - 1,
        mean_power_dbm,
        cell_count: None,
    }
}

impl EventNotification {
    pub fn start(e: &OpenEvent, plan: &BandPlan) -> Self {
        gen_notification(
            e.id,
            NotificationKind::TxStart,
            e.t_start,
            None,
            e.start_bin,
            e.stop_bin + 1,
            e.mean_power_dbm(),
            plan,
        )
    }

    pub fn stop(e: &SpectrumEvent, plan: &BandPlan) -> Self {
        let mut n = gen_notification(
            e.id,
            NotificationKind::TxStop,
            e.t_start,
            Some(e.t_stop),
            e.f_start_bin,
            e.f_stop_bin + 1,
            e.mean_power_dbm,
            plan,
        );
        n.cell_count = Some(e.cell_count);
        n
    }

    /// Reconstructs the completed event carried by a TxStop record.
    ///
    /// Without a cell count on the record the bounding box is used instead.
    pub fn to_event(&self, plan: &BandPlan, tick_ms: Option<Millis>) -> Option<SpectrumEvent> {
        let t_stop = self.t_stop?;
        if self.kind != NotificationKind::TxStop {
            return None;
        }
        let ticks = match tick_ms {
            Some(dt) if dt > 0 => ((t_stop - self.t_start) / dt + 1) as u64,
            _ => 1,
        };
        let bins = (self.f_stop_bin - self.f_start_bin + 1) as u64;
        Some(SpectrumEvent::from_bins(
            self.id,
            self.t_start,
            t_stop,
            self.f_start_bin,
            self.f_stop_bin,
            self.mean_power_dbm,
            self.cell_count.unwrap_or(ticks * bins),
            plan,
        ))
    }
}

/// Everything produced by one grouped tick.
#[derive(Debug, Clone, Default)]
pub struct TickOutput {
    pub groups: Vec<FrequencyGroup>,
    /// TxStop records first (by id), then TxStart records (by start bin).
    pub notifications: Vec<EventNotification>,
    pub closed: Vec<SpectrumEvent>,
}

/// The single-threaded stage behind the per-tick barrier.
#[derive(Debug, Clone)]
pub struct GroupingStage {
    plan: BandPlan,
    freq_gap: usize,
    time: TimeGrouper,
}

impl GroupingStage {
    pub fn new(plan: BandPlan, freq_gap: usize, time_gap: usize) -> Self {
        Self {
            plan,
            freq_gap,
            time: TimeGrouper::new(freq_gap, time_gap),
        }
    }

    pub fn plan(&self) -> &BandPlan {
        &self.plan
    }

    pub fn open_events(&self) -> &[OpenEvent] {
        self.time.open_events()
    }

    /// Groups one tick given the complete, bin-ordered detection vector.
    pub fn on_tick(&mut self, t: Millis, detections: &[Detection]) -> TickOutput {
        let active = detections.iter().filter_map(|d| match d {
            Detection::Verdict(a) if a.active => Some((a.bin_index, a.value_dbm)),
            _ => None,
        });
        let groups = group_active_bins(t, active, self.freq_gap);
        self.on_groups(t, groups)
    }

    pub fn on_groups(&mut self, t: Millis, groups: Vec<FrequencyGroup>) -> TickOutput {
        let step = self.time.step(&groups, t, &self.plan);
        let mut notifications = Vec::with_capacity(step.closed.len() + step.started.len());
        notifications.extend(step.closed.iter().map(|e| EventNotification::stop(e, &self.plan)));
        notifications.extend(step.started.iter().map(|e| EventNotification::start(e, &self.plan)));
        TickOutput {
            groups,
            notifications,
            closed: step.closed,
        }
    }

    /// End of stream: TxStop for every open event.
    pub fn flush(&mut self) -> TickOutput {
        let closed = self.time.flush(&self.plan);
        TickOutput {
            groups: Vec::new(),
            notifications: closed.iter().map(|e| EventNotification::stop(e, &self.plan)).collect(),
            closed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Direction;

    fn plan(n: usize) -> BandPlan {
        BandPlan::new(868.0e6, 1000.0, n).unwrap()
    }

    fn verdicts(n: usize, t: Millis, active: &[usize]) -> Vec<BinActivity> {
        (0..n)
            .map(|b| BinActivity {
                bin_index: b,
                timestamp: t,
                active: active.contains(&b),
                p_value: if active.contains(&b) { 0.0 } else { 1.0 },
                chi_square_stat: 0.0,
                dof: 1,
                recent_mean: -100.0,
                historic_mean: -100.0,
                direction: Direction::Flat,
                value_dbm: -70.0,
            })
            .collect()
    }

    fn ranges(gs: &[FrequencyGroup]) -> Vec<(usize, usize)> {
        gs.iter().map(|g| (g.start_bin, g.stop_bin)).collect()
    }

    fn group(t: Millis, start: usize, stop: usize) -> FrequencyGroup {
        FrequencyGroup {
            timestamp: t,
            start_bin: start,
            stop_bin: stop,
            member_bins: (start..=stop).collect(),
            power_mw: dbm_to_mw(-70.0) * (stop - start + 1) as f64,
        }
    }

    #[test]
    fn no_active_bins_no_groups() {
        assert!(group_frequency(&verdicts(16, 0, &[]), 2).unwrap().is_empty());
    }

    #[test]
    fn gap_parameter_bridges_inactive_bins() {
        let v = verdicts(16, 0, &[3, 4, 5, 9, 10]);
        assert_eq!(ranges(&group_frequency(&v, 2).unwrap()), vec![(3, 5), (9, 10)]);
        assert_eq!(ranges(&group_frequency(&v, 4).unwrap()), vec![(3, 10)]);
        // 5 -> 9 is a distance of 4: bridged with F = 3, not with F = 2.
        assert_eq!(ranges(&group_frequency(&v, 3).unwrap()), vec![(3, 10)]);
    }

    #[test]
    fn all_bins_active_is_one_group() {
        let all: Vec<usize> = (0..12).collect();
        for f in 0..4 {
            assert_eq!(ranges(&group_frequency(&verdicts(12, 0, &all), f).unwrap()), vec![(0, 11)]);
        }
    }

    #[test]
    fn mixed_timestamps_rejected() {
        let mut v = verdicts(4, 0, &[1]);
        v[2].timestamp = 5;
        assert_eq!(
            group_frequency(&v, 1),
            Err(GroupingError::TimestampMismatch { bin: 2, expected: 0, found: 5 })
        );
    }

    #[test]
    fn first_group_starts_event() {
        let p = plan(16);
        let mut tg = TimeGrouper::new(1, 2);
        let s = tg.step(&[group(10, 3, 5)], 10, &p);
        assert_eq!(s.started.len(), 1);
        assert_eq!(s.started[0].t_start, 10);
    }

    #[test]
    fn continued_then_closed_after_t_plus_one_silent_ticks() {
        let p = plan(16);
        let t_gap = 2;
        let mut tg = TimeGrouper::new(1, t_gap);
        tg.step(&[group(0, 3, 5)], 0, &p);
        let s = tg.step(&[group(1, 4, 6)], 1, &p);
        assert_eq!(s.continued, vec![0]);
        for k in 0..t_gap {
            let s = tg.step(&[], 2 + k as Millis, &p);
            assert!(s.closed.is_empty());
        }
        let s = tg.step(&[], 2 + t_gap as Millis, &p);
        assert_eq!(s.closed.len(), 1);
        let e = &s.closed[0];
        assert_eq!((e.t_start, e.t_stop), (0, 1));
        assert_eq!((e.f_start_bin, e.f_stop_bin), (3, 6));
        assert_eq!(e.cell_count, 6);
    }

    #[test]
    fn two_open_one_group_continues_nearest() {
        let p = plan(16);
        let mut tg = TimeGrouper::new(1, 0);
        let s = tg.step(&[group(0, 0, 2), group(0, 10, 12)], 0, &p);
        assert_eq!(s.started.iter().map(|e| e.id).collect::<Vec<_>>(), vec![0, 1]);
        let s = tg.step(&[group(1, 11, 12)], 1, &p);
        assert_eq!(s.continued, vec![1]);
        assert_eq!(s.closed.len(), 1);
        assert_eq!(s.closed[0].id, 0);
        assert_eq!(s.closed[0].t_stop, 0);
        assert!(s.started.is_empty());
    }

    #[test]
    fn bridging_group_continues_larger_overlap_only() {
        let p = plan(32);
        let mut tg = TimeGrouper::new(0, 1);
        tg.step(&[group(0, 0, 3), group(0, 6, 7)], 0, &p);
        let s = tg.step(&[group(1, 2, 7)], 1, &p);
        // overlaps: event 0 -> bins 2..3 (2), event 1 -> bins 6..7 (2); tie -> lower event start
        assert_eq!(s.continued, vec![0]);
        assert_eq!(tg.open_events().len(), 2);
    }

    #[test]
    fn notification_indices_follow_half_open_rule() {
        let p = plan(16);
        let n = gen_notification(7, NotificationKind::TxStart, 100, None, 4, 8, -70.0, &p);
        assert_eq!(n.channel_hz, p.frequency_of(5));
        assert_eq!(n.lchannel_hz, p.frequency_of(4));
        assert_eq!(n.rchannel_hz, p.frequency_of(7));
        assert_eq!(n.class, "info");
        assert_eq!(n.time, 100);
        assert_eq!(n.f_stop_bin, 7);

        let single = gen_notification(1, NotificationKind::TxStop, 5, Some(9), 6, 7, -70.0, &p);
        assert_eq!(single.channel_hz, p.frequency_of(6));
        assert_eq!(single.lchannel_hz, single.rchannel_hz);
        assert_eq!(single.channel_hz, single.lchannel_hz);
        assert_eq!(single.time, 9);
    }

    #[test]
    fn notification_json_shape() {
        let p = plan(16);
        let n = gen_notification(3, NotificationKind::TxStart, 100, None, 4, 8, -70.0, &p);
        let v: serde_json::Value = serde_json::to_value(&n).unwrap();
        assert_eq!(v["kind"], "TxStart");
        assert_eq!(v["type"], "info");
        assert!(v.get("tStop").is_none());
        for k in ["id", "time", "tStart", "channelHz", "lchannelHz", "rchannelHz", "fStartBin", "fStopBin", "meanPowerDbm"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
    }

    #[test]
    fn stage_flush_stops_everything() {
        let p = plan(8);
        let mut stage = GroupingStage::new(p, 1, 2);
        stage.on_groups(0, vec![group(0, 1, 2), group(0, 6, 7)]);
        let out = stage.flush();
        assert_eq!(out.notifications.len(), 2);
        assert!(out.notifications.iter().all(|n| n.kind == NotificationKind::TxStop));
        assert!(stage.open_events().is_empty());
    }
}
