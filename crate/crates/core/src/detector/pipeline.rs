//! Per-bin detection pipeline: recent and delayed windows, their histograms and
//! means, and the chi-square verdict gated by a rising mean.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::histogram::OnlineHistogram;
use super::stats::{chi_square_cells, chi_square_pvalue};
use super::window::{DelayedWindow, SlidingWindow};
use crate::config::DetectorConfig;
use crate::model::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Rising,
    Falling,
    Flat,
}

/// Activity verdict for one bin at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BinActivity {
    pub bin_index: usize,
    pub timestamp: Millis,
    pub active: bool,
    pub p_value: f64,
    pub chi_square_stat: f64,
    pub dof: u32,
    pub recent_mean: f64,
    pub historic_mean: f64,
    pub direction: Direction,
    /// The raw reading that produced this verdict.
    pub value_dbm: f64,
}

/// Output of one pipeline tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Detection {
    /// Windows still filling; no verdict is emitted.
    Warmup,
    Verdict(BinActivity),
}

impl Detection {
    pub fn is_active(&self) -> bool {
        matches!(self, Detection::Verdict(a) if a.active)
    }

    pub fn activity(&self) -> Option<&BinActivity> {
        match self {
            Detection::Warmup => None,
            Detection::Verdict(a) => Some(a),
        }
    }
}

/// State machine for a single frequency bin.
///
/// The historic side is fed only by values leaving the recent window, and is
/// frozen while the bin is active so a long transmission never becomes part
/// of the channel's usual state. Readings that produced an active verdict are
/// also kept out of it after the bin goes quiet again.
#[derive(Debug, Clone)]
pub struct BinPipeline {
    bin_index: usize,
    recent: SlidingWindow,
    /// Per recent entry: did the bin end that tick active.
    tainted: VecDeque<bool>,
    historic: DelayedWindow,
    recent_hist: OnlineHistogram,
    historic_hist: OnlineHistogram,
    ticks: u64,
    active: bool,
    warmup: u64,
    alpha: f64,
    margin_db: f64,
}

impl BinPipeline {
    pub fn new(bin_index: usize, cfg: &DetectorConfig) -> Self {
        let hist = || {
            OnlineHistogram::new(
                cfg.hist_lower_bound,
                cfg.hist_upper_bound,
                cfg.num_hist_bins,
                cfg.add_overflow_bins,
            )
        };
        Self {
            bin_index,
            recent: SlidingWindow::new(cfg.recent_win_size),
            tainted: VecDeque::with_capacity(cfg.recent_win_size + 1),
            historic: DelayedWindow::new(cfg.recent_win_size, cfg.historic_win_size),
            recent_hist: hist(),
            historic_hist: hist(),
            ticks: 0,
            active: false,
            warmup: cfg.warmup_samples as u64,
            alpha: cfg.alpha,
            margin_db: cfg.margin_db,
        }
    }

    pub fn bin_index(&self) -> usize {
        self.bin_index
    }

    pub fn recent_window(&self) -> &SlidingWindow {
        &self.recent
    }

    pub fn historic_window(&self) -> &SlidingWindow {
        self.historic.window()
    }

    pub fn recent_histogram(&self) -> &OnlineHistogram {
        &self.recent_hist
    }

    pub fn historic_histogram(&self) -> &OnlineHistogram {
        &self.historic_hist
    }

    /// Whether the historic side is currently frozen.
    pub fn is_frozen(&self) -> bool {
        self.active
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Consumes one validated reading.
    pub fn detect(&mut self, value: f64, t: Millis) -> Detection {
        self.ticks += 1;
        self.recent_hist.add(value);
        self.tainted.push_back(false);
        if let Some((et, ev)) = self.recent.push(t, value) {
            self.recent_hist
                .remove(ev)
                .expect("evicted value was counted on entry");
            let tainted = self.tainted.pop_front().unwrap_or(false);
            if !self.active && !tainted {
                self.historic_hist.add(ev);
                if let Some((_, old)) = self.historic.push_evicted(et, ev) {
                    self.historic_hist
                        .remove(old)
                        .expect("evicted value was counted on entry");
                }
            }
        }

        if self.ticks < self.warmup {
            self.active = false;
            return Detection::Warmup;
        }

        let recent_mean = self.recent.mean().unwrap_or(value);
        let historic_mean = self.historic.window().mean().unwrap_or(recent_mean);
        let (stat, dof, p_value) = match chi_square_cells(
            self.recent_hist.cells(),
            self.recent_hist.total(),
            self.historic_hist.cells(),
            self.historic_hist.total(),
        ) {
            Ok(c) => (c.stat, c.dof, chi_square_pvalue(c.stat, c.dof)),
            // Only reachable with an empty historic side.
            Err(_) => (0.0, 1, 1.0),
        };

        let direction = if recent_mean > historic_mean + self.margin_db {
            Direction::Rising
        } else if recent_mean < historic_mean - self.margin_db {
            Direction::Falling
        } else {
            Direction::Flat
        };
        let active = p_value < self.alpha && direction == Direction::Rising;
        self.active = active;
        if let Some(last) = self.tainted.back_mut() {
            *last = active;
        }

        Detection::Verdict(BinActivity {
            bin_index: self.bin_index,
            timestamp: t,
            active,
            p_value,
            chi_square_stat: stat,
            dof,
            recent_mean,
            historic_mean,
            direction,
            value_dbm: value,
        })
    }
}

/// Independent pipelines for a contiguous range of bins.
#[derive(Debug, Clone)]
pub struct BinBank {
    first_bin: usize,
    pipelines: Vec<BinPipeline>,
}

impl BinBank {
    /// Pipelines for bins `range.start .. range.end`.
    pub fn new(range: std::ops::Range<usize>, cfg: &DetectorConfig) -> Self {
        Self {
            first_bin: range.start,
            pipelines: range.map(|b| BinPipeline::new(b, cfg)).collect(),
        }
    }

    pub fn first_bin(&self) -> usize {
        self.first_bin
    }

    pub fn len(&self) -> usize {
        self.pipelines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pipelines.is_empty()
    }

    /// Runs every pipeline on its slice of `values` (already restricted to this bank's range).
    pub fn process(&mut self, values: &[f64], t: Millis, out: &mut Vec<Detection>) {
        debug_assert_eq!(values.len(), self.pipelines.len());
        out.clear();
        out.extend(
            self.pipelines
                .iter_mut()
                .zip(values)
                .map(|(p, &v)| p.detect(v, t)),
        );
    }

    pub fn pipelines(&self) -> &[BinPipeline] {
        &self.pipelines
    }
}
