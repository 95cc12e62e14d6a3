//! Statistical reports over a period: transmission count, mean duration,
//! linear-domain mean power and time-frequency occupancy, globally and per
//! bin and channel.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::model::{dbm_to_mw, mw_to_dbm, BandPlan, Millis, SpectrumEvent};

/// A named frequency range `[low_hz, high_hz)`; bins whose center falls inside belong to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ChannelSpec {
    pub name: String,
    pub low_hz: f64,
    pub high_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("event {id} [{t_start}, {t_stop}] lies outside the report period [{start}, {end})")]
    OutOfPeriod {
        id: u64,
        t_start: Millis,
        t_stop: Millis,
        start: Millis,
        end: Millis,
    },
    #[error("event {id} bins {f_start}..={f_stop} exceed the band of {bins} bins")]
    OutOfBand {
        id: u64,
        f_start: usize,
        f_stop: usize,
        bins: usize,
    },
    #[error("invalid period: {0}")]
    InvalidPeriod(String),
    #[error("reports cannot be merged: {0}")]
    Incompatible(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

/// Half-open time period on a fixed tick grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportPeriod {
    pub start: Millis,
    pub end: Millis,
    pub tick_ms: Millis,
}

impl ReportPeriod {
    pub fn new(start: Millis, end: Millis, tick_ms: Millis) -> Result<Self, ReportError> {
        if tick_ms <= 0 {
            return Err(ReportError::InvalidPeriod("tick must be positive".into()));
        }
        if end <= start {
            return Err(ReportError::InvalidPeriod(format!("end {end} must follow start {start}")));
        }
        if (end - start) % tick_ms != 0 {
            return Err(ReportError::InvalidPeriod(format!(
                "length {} is not a whole number of {tick_ms} ms ticks",
                end - start
            )));
        }
        Ok(Self { start, end, tick_ms })
    }

    pub fn ticks(&self) -> u64 {
        ((self.end - self.start) / self.tick_ms) as u64
    }
}

/// Order-independent float sum (Shewchuk's exact partials).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    /// Correctly rounded total.
    pub fn value(&self) -> f64 {
        let mut p = self.partials.clone();
        let Some(mut hi) = p.pop() else { return 0.0 };
        let mut lo = 0.0;
        while let Some(y) = p.pop() {
            let x = hi;
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if let Some(&next) = p.last() {
            if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
                let y = lo * 2.0;
                let x = hi + y;
                if y == x - hi {
                    hi = x;
                }
            }
        }
        hi
    }
}

/// Power-weighted accumulator: Σ w·mW and Σ w.
#[derive(Debug, Clone, Default, PartialEq)]
struct PowerAcc {
    weighted_mw: ExactSum,
    weight: ExactSum,
}

impl PowerAcc {
    fn add(&mut self, dbm: f64, w: f64) {
        self.weighted_mw.add(w * dbm_to_mw(dbm));
        self.weight.add(w);
    }

    fn merge(&mut self, o: &PowerAcc) {
        self.weighted_mw.merge(&o.weighted_mw);
        self.weight.merge(&o.weight);
    }

    fn dbm(&self) -> Option<f64> {
        let w = self.weight.value();
        (w > 0.0).then(|| mw_to_dbm(self.weighted_mw.value() / w))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct BinAcc {
    tx_count: u64,
    power: PowerAcc,
    /// Covered tick intervals `[first, last]` as tick offsets from the period start.
    intervals: Vec<(u64, u64)>,
}

/// Streaming report state for one period and band.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportState {
    period: ReportPeriod,
    plan: BandPlan,
    channels: Option<Vec<ChannelSpec>>,
    count: u64,
    duration_sum_ms: i128,
    power: PowerAcc,
    bins: Vec<BinAcc>,
    /// Event ids per channel for distinct-transmission counts.
    channel_ids: Vec<Vec<u64>>,
}

impl ReportState {
    pub fn new(period: ReportPeriod, plan: BandPlan, channels: Option<Vec<ChannelSpec>>) -> Self {
        let mut channels = channels;
        if let Some(c) = channels.as_mut() {
            c.sort_by(|a, b| a.low_hz.total_cmp(&b.low_hz).then(a.high_hz.total_cmp(&b.high_hz)));
        }
        let n_channels = channels.as_ref().map_or(plan.bin_count(), Vec::len);
        Self {
            period,
            bins: vec![BinAcc::default(); plan.bin_count()],
            plan,
            channels,
            count: 0,
            duration_sum_ms: 0,
            power: PowerAcc::default(),
            channel_ids: vec![Vec::new(); n_channels],
        }
    }

    pub fn period(&self) -> ReportPeriod {
        self.period
    }

    fn channel_bins(&self, c: usize) -> std::ops::Range<usize> {
        match &self.channels {
            None => c..c + 1,
            Some(table) => {
                let ch = &table[c];
                let n = self.plan.bin_count();
                let first = (0..n).find(|&b| self.plan.frequency_of(b) >= ch.low_hz).unwrap_or(n);
                let end = (first..n)
                    .find(|&b| self.plan.frequency_of(b) >= ch.high_hz)
                    .unwrap_or(n);
                first..end
            }
        }
    }

    pub fn accumulate(&mut self, e: &SpectrumEvent) -> Result<(), ReportError> {
        let p = self.period;
        if e.t_start < p.start || e.t_stop >= p.end || e.t_stop < e.t_start {
            return Err(ReportError::OutOfPeriod {
                id: e.id,
                t_start: e.t_start,
                t_stop: e.t_stop,
                start: p.start,
                end: p.end,
            });
        }
        if e.f_stop_bin >= self.plan.bin_count() || e.f_start_bin > e.f_stop_bin {
            return Err(ReportError::OutOfBand {
                id: e.id,
                f_start: e.f_start_bin,
                f_stop: e.f_stop_bin,
                bins: self.plan.bin_count(),
            });
        }
        self.count += 1;
        self.duration_sum_ms += i128::from(e.duration_ms());
        self.power.add(e.mean_power_dbm, e.cell_count as f64);

        let first = ((e.t_start - p.start) / p.tick_ms) as u64;
        let last = ((e.t_stop - p.start) / p.tick_ms) as u64;
        let per_bin_weight = e.cell_count as f64 / e.bin_span() as f64;
        for b in e.f_start_bin..=e.f_stop_bin {
            let acc = &mut self.bins[b];
            acc.tx_count += 1;
            acc.power.add(e.mean_power_dbm, per_bin_weight);
            acc.intervals.push((first, last));
        }
        for c in 0..self.channel_ids.len() {
            let r = self.channel_bins(c);
            if r.start <= e.f_stop_bin && e.f_start_bin < r.end {
                self.channel_ids[c].push(e.id);
            }
        }
        Ok(())
    }

    /// Combines with a report over the adjacent following period.
    pub fn merge(&mut self, next: &ReportState) -> Result<(), ReportError> {
        if self.plan != next.plan || self.channels != next.channels {
            return Err(ReportError::Incompatible("band plans or channel tables differ".into()));
        }
        if self.period.tick_ms != next.period.tick_ms || self.period.end != next.period.start {
            return Err(ReportError::Incompatible("periods are not adjacent".into()));
        }
        let shift = self.period.ticks();
        self.period.end = next.period.end;
        self.count += next.count;
        self.duration_sum_ms += next.duration_sum_ms;
        self.power.merge(&next.power);
        for (a, b) in self.bins.iter_mut().zip(&next.bins) {
            a.tx_count += b.tx_count;
            a.power.merge(&b.power);
            a.intervals
                .extend(b.intervals.iter().map(|&(s, e)| (s + shift, e + shift)));
        }
        for (a, b) in self.channel_ids.iter_mut().zip(&next.channel_ids) {
            a.extend(b);
        }
        Ok(())
    }

    pub fn finalize(&self) -> SpectrumReport {
        let ticks = self.period.ticks();
        let covered: Vec<u64> = self.bins.iter().map(|b| union_length(&b.intervals)).collect();
        let fraction = |cells: u64, bins: usize| {
            if bins == 0 {
                0.0
            } else {
                cells as f64 / (ticks as f64 * bins as f64)
            }
        };
        let per_bin: Vec<UnitStats> = self
            .bins
            .iter()
            .enumerate()
            .map(|(i, b)| UnitStats {
                name: i.to_string(),
                low_hz: self.plan.lower_edge_of(i),
                high_hz: self.plan.lower_edge_of(i + 1),
                bins: 1,
                tx_count: b.tx_count,
                occupancy_fraction: fraction(covered[i], 1),
                avg_power_dbm: b.power.dbm(),
            })
            .collect();
        let per_channel = match &self.channels {
            None => per_bin.clone(),
            Some(table) => table
                .iter()
                .enumerate()
                .map(|(c, spec)| {
                    let r = self.channel_bins(c);
                    let mut power = PowerAcc::default();
                    for b in r.clone() {
                        power.merge(&self.bins[b].power);
                    }
                    let mut ids = self.channel_ids[c].clone();
                    ids.sort_unstable();
                    ids.dedup();
                    UnitStats {
                        name: spec.name.clone(),
                        low_hz: spec.low_hz,
                        high_hz: spec.high_hz,
                        bins: r.len(),
                        tx_count: ids.len() as u64,
                        occupancy_fraction: fraction(covered[r.clone()].iter().sum(), r.len()),
                        avg_power_dbm: power.dbm(),
                    }
                })
                .collect(),
        };
        SpectrumReport {
            period_start: self.period.start,
            period_end: self.period.end,
            tick_ms: self.period.tick_ms,
            bin_count: self.plan.bin_count(),
            total_transmissions: self.count,
            avg_duration_ms: (self.count > 0).then(|| self.duration_sum_ms as f64 / self.count as f64),
            avg_power_dbm: self.power.dbm(),
            occupancy_fraction: fraction(covered.iter().sum(), self.plan.bin_count()),
            per_bin,
            per_channel,
        }
    }
}

/// Total length of a union of inclusive integer intervals.
fn union_length(intervals: &[(u64, u64)]) -> u64 {
    let mut v = intervals.to_vec();
    v.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in v {
        cur = match cur {
            Some((cs, ce)) if s <= ce + 1 => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs + 1;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs + 1;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct UnitStats {
    pub name: String,
    pub low_hz: f64,
    pub high_hz: f64,
    pub bins: usize,
    pub tx_count: u64,
    pub occupancy_fraction: f64,
    pub avg_power_dbm: Option<f64>,
}

/// Finalized, immutable report.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SpectrumReport {
    pub period_start: Millis,
    pub period_end: Millis,
    pub tick_ms: Millis,
    pub bin_count: usize,
    pub total_transmissions: u64,
    pub avg_duration_ms: Option<f64>,
    pub avg_power_dbm: Option<f64>,
    pub occupancy_fraction: f64,
    pub per_bin: Vec<UnitStats>,
    pub per_channel: Vec<UnitStats>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |x| x.to_string())
}

impl SpectrumReport {
    pub fn build<'a>(
        period: ReportPeriod,
        plan: BandPlan,
        channels: Option<Vec<ChannelSpec>>,
        events: impl IntoIterator<Item = &'a SpectrumEvent>,
    ) -> Result<Self, ReportError> {
        let mut state = ReportState::new(period, plan, channels);
        for e in events {
            state.accumulate(e)?;
        }
        Ok(state.finalize())
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(&json!(self)).expect("report serializes");
                s.push('\n');
                s
            }
            ReportFormat::Text => self.render_text(),
        }
    }

    fn render_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "period: [{}, {}) ms, tick {} ms, {} bins", self.period_start, self.period_end, self.tick_ms, self.bin_count);
        let _ = writeln!(out, "transmissions: {}", self.total_transmissions);
        let _ = writeln!(out, "avg duration ms: {}", opt(self.avg_duration_ms));
        let _ = writeln!(out, "avg power dbm: {}", opt(self.avg_power_dbm));
        let _ = writeln!(out, "occupancy: {}", self.occupancy_fraction);
        for (title, units) in [("per bin", &self.per_bin), ("per channel", &self.per_channel)] {
            let _ = writeln!(out, "{title}:");
            for u in units {
                let _ = writeln!(
                    out,
                    "  {} [{}, {}) Hz: tx {}, occupancy {}, avg power dbm {}",
                    u.name,
                    u.low_hz,
                    u.high_hz,
                    u.tx_count,
                    u.occupancy_fraction,
                    opt(u.avg_power_dbm)
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plan(n: usize) -> BandPlan {
        BandPlan::new(868.0e6, 1000.0, n).unwrap()
    }

    fn ev(id: u64, t0: Millis, t1: Millis, f0: usize, f1: usize, dbm: f64) -> SpectrumEvent {
        let cells = ((t1 - t0) / 100 + 1) as u64 * (f1 - f0 + 1) as u64;
        SpectrumEvent::from_bins(id, t0, t1, f0, f1, dbm, cells, &plan(4))
    }

    fn period() -> ReportPeriod {
        ReportPeriod::new(0, 10_000, 100).unwrap()
    }

    #[test]
    fn durations_average_arithmetically() {
        let one = SpectrumReport::build(period(), plan(4), None, &[ev(0, 0, 1000, 0, 0, -70.0)]).unwrap();
        assert_eq!(one.total_transmissions, 1);
        assert_eq!(one.avg_duration_ms, Some(1000.0));
        let two = [ev(0, 0, 1000, 0, 0, -70.0), ev(1, 2000, 5000, 1, 1, -70.0)];
        let r = SpectrumReport::build(period(), plan(4), None, &two).unwrap();
        assert_eq!(r.avg_duration_ms, Some(2000.0));
        assert!(r.render(ReportFormat::Text).contains("transmissions: 2"));
    }

    #[test]
    fn occupancy_counts_cells() {
        // 2 bins x 10 ticks inside 4 bins x 100 ticks.
        let r = SpectrumReport::build(period(), plan(4), None, &[ev(0, 0, 900, 1, 2, -70.0)]).unwrap();
        assert_eq!(r.occupancy_fraction, 0.05);
        assert_eq!(r.per_bin[1].occupancy_fraction, 0.1);
        assert_eq!(r.per_bin[0].occupancy_fraction, 0.0);
    }

    #[test]
    fn overlapping_events_are_not_double_counted() {
        let evs = [ev(0, 0, 900, 0, 0, -70.0), ev(1, 500, 1400, 0, 0, -70.0)];
        let r = SpectrumReport::build(period(), plan(4), None, &evs).unwrap();
        assert_eq!(r.per_bin[0].occupancy_fraction, 0.15);
    }

    #[test]
    fn power_is_averaged_in_milliwatts() {
        let evs = [ev(0, 0, 0, 0, 0, -60.0), ev(1, 100, 100, 0, 0, -80.0)];
        let r = SpectrumReport::build(period(), plan(4), None, &evs).unwrap();
        let expected = 10.0 * ((1e-6 + 1e-8) / 2.0f64).log10();
        assert!((r.avg_power_dbm.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_period_renders_nulls() {
        let r = SpectrumReport::build(period(), plan(4), None, &[]).unwrap();
        assert_eq!(r.total_transmissions, 0);
        assert_eq!(r.occupancy_fraction, 0.0);
        let j: serde_json::Value = serde_json::from_str(&r.render(ReportFormat::Json)).unwrap();
        assert!(j["avgDurationMs"].is_null());
        assert!(j["avgPowerDbm"].is_null());
        assert!(r.render(ReportFormat::Text).contains("avg power dbm: null"));
    }

    #[test]
    fn out_of_period_is_rejected() {
        let err = SpectrumReport::build(period(), plan(4), None, &[ev(0, 9_500, 10_000, 0, 0, -70.0)]).unwrap_err();
        assert!(matches!(err, ReportError::OutOfPeriod { id: 0, .. }));
    }

    #[test]
    fn channel_table_groups_bins() {
        let channels = vec![
            ChannelSpec { name: "b".into(), low_hz: 868.002e6, high_hz: 868.004e6 },
            ChannelSpec { name: "a".into(), low_hz: 868.0e6, high_hz: 868.002e6 },
        ];
        let evs = [ev(0, 0, 900, 1, 2, -70.0)];
        let r = SpectrumReport::build(period(), plan(4), Some(channels), &evs).unwrap();
        assert_eq!(r.per_channel[0].name, "a");
        assert_eq!(r.per_channel[0].bins, 2);
        assert_eq!(r.per_channel[0].tx_count, 1);
        assert_eq!(r.per_channel[1].tx_count, 1);
        assert_eq!(r.per_channel[0].occupancy_fraction, 0.05);
    }

    #[test]
    fn exact_sum_is_order_free() {
        let xs = [1e16, 1.0, -1e16, 3.5, 1e-3];
        let mut a = ExactSum::default();
        let mut b = ExactSum::default();
        xs.iter().for_each(|&x| a.add(x));
        xs.iter().rev().for_each(|&x| b.add(x));
        assert_eq!(a.value(), 4.501);
        assert_eq!(a.value(), b.value());
    }

    fn arb_events() -> impl Strategy<Value = Vec<SpectrumEvent>> {
        prop::collection::vec((0i64..50, 0i64..30, 0usize..4, 0usize..3, -100.0f64..-40.0), 0..20).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (t, d, f, w, p))| ev(i as u64, t * 100, (t + d).min(99) * 100, f, (f + w).min(3), p))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn permutation_invariant(evs in arb_events(), seed in any::<u64>()) {
            let a = SpectrumReport::build(period(), plan(4), None, &evs).unwrap();
            let mut shuffled = evs.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed));
            let b = SpectrumReport::build(period(), plan(4), None, &shuffled).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn adjacent_periods_merge(evs in arb_events()) {
            let whole = SpectrumReport::build(period(), plan(4), None, &evs).unwrap();
            // Split at 5000 ms; events crossing the split are left out of every report.
            let kept: Vec<_> = evs.iter().filter(|e| e.t_stop < 5000 || e.t_start >= 5000).cloned().collect();
            let whole = if kept.len() == evs.len() { whole } else {
                SpectrumReport::build(period(), plan(4), None, &kept).unwrap()
            };
            let mut left = ReportState::new(ReportPeriod::new(0, 5000, 100).unwrap(), plan(4), None);
            let mut right = ReportState::new(ReportPeriod::new(5000, 10_000, 100).unwrap(), plan(4), None);
            for e in &kept {
                if e.t_stop < 5000 { left.accumulate(e).unwrap() } else { right.accumulate(e).unwrap() }
            }
            left.merge(&right).unwrap();
            let merged = left.finalize();
            prop_assert_eq!(merged.total_transmissions, whole.total_transmissions);
            prop_assert_eq!(merged.occupancy_fraction, whole.occupancy_fraction);
            let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * y.abs().max(1.0),
                (None, None) => true,
                _ => false,
            };
            prop_assert!(close(merged.avg_duration_ms, whole.avg_duration_ms));
            prop_assert!(close(merged.avg_power_dbm, whole.avg_power_dbm));
        }
    }
}
