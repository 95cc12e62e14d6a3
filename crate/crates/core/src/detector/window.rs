//! FIFO sample windows feeding the recent and historic distributions.

use std::collections::VecDeque;

use crate::model::Millis;

/// Recompute the running sum from scratch after this many evictions.
const RESUM_INTERVAL: u32 = 4096;

/// Fixed-capacity FIFO of `(timestamp, value)` pairs with a running sum.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    capacity: usize,
    contents: VecDeque<(Millis, f64)>,
    sum: f64,
    evictions_since_resum: u32,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be positive");
        Self {
            capacity,
            contents: VecDeque::with_capacity(capacity + 1),
            sum: 0.0,
            evictions_since_resum: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.contents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contents.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.contents.len() == self.capacity
    }

    /// Appends `value`; returns the evicted oldest entry once over capacity.
    pub fn push(&mut self, t: Millis, value: f64) -> Option<(Millis, f64)> {
        debug_assert!(self.contents.back().is_none_or(|&(last, _)| last < t));
        self.contents.push_back((t, value));
        self.sum += value;
        if self.contents.len() > self.capacity {
            let evicted = self.contents.pop_front();
            if let Some((_, v)) = evicted {
                self.sum -= v;
                self.evictions_since_resum += 1;
                if self.evictions_since_resum >= RESUM_INTERVAL {
                    self.sum = self.contents.iter().map(|&(_, v)| v).sum();
                    self.evictions_since_resum = 0;
                }
            }
            evicted
        } else {
            None
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.contents.iter().map(|&(_, v)| v)
    }

    pub fn entries(&self) -> impl Iterator<Item = (Millis, f64)> + '_ {
        self.contents.iter().copied()
    }

    pub fn newest(&self) -> Option<(Millis, f64)> {
        self.contents.back().copied()
    }

    pub fn oldest(&self) -> Option<(Millis, f64)> {
        self.contents.front().copied()
    }

    /// Arithmetic mean of the current contents, `None` when empty.
    pub fn mean(&self) -> Option<f64> {
        if self.contents.is_empty() {
            None
        } else {
            Some(self.sum / self.contents.len() as f64)
        }
    }
}

/// Error for [`moving_average`] on an empty window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("moving average of an empty window")]
pub struct EmptyWindow;

pub fn moving_average(window: &SlidingWindow) -> Result<f64, EmptyWindow> {
    window.mean().ok_or(EmptyWindow)
}

/// Historic window chained behind a recent window.
///
/// It only receives values that have been evicted from the recent window, so
/// its contents lag the recent window by exactly the recent capacity.
#[derive(Debug, Clone)]
pub struct DelayedWindow {
    delay: usize,
    inner: SlidingWindow,
}

impl DelayedWindow {
    pub fn new(delay: usize, capacity: usize) -> Self {
        Self {
            delay,
            inner: SlidingWindow::new(capacity),
        }
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Feeds a value that just left the recent window.
    pub fn push_evicted(&mut self, t: Millis, value: f64) -> Option<(Millis, f64)> {
        self.inner.push(t, value)
    }

    pub fn window(&self) -> &SlidingWindow {
        &self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn push_all(w: &mut SlidingWindow, xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .enumerate()
            .filter_map(|(i, &x)| w.push(i as Millis, x).map(|(_, v)| v))
            .collect()
    }

    #[test]
    fn evicts_oldest_over_capacity() {
        let mut w = SlidingWindow::new(3);
        let ev = push_all(&mut w, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(w.values().collect::<Vec<_>>(), vec![2.0, 3.0, 4.0]);
        assert_eq!(ev, vec![1.0]);
    }

    #[test]
    fn no_eviction_below_capacity() {
        let mut w = SlidingWindow::new(3);
        assert!(push_all(&mut w, &[1.0, 2.0]).is_empty());
        assert_eq!(w.values().collect::<Vec<_>>(), vec![1.0, 2.0]);
    }

    #[test]
    fn capacity_one_evicts_every_previous() {
        let mut w = SlidingWindow::new(1);
        assert_eq!(push_all(&mut w, &[10.0, 20.0, 30.0]), vec![10.0, 20.0]);
    }

    #[test]
    fn moving_average_cases() {
        let mut w = SlidingWindow::new(4);
        assert_eq!(moving_average(&w), Err(EmptyWindow));
        w.push(0, -100.0);
        assert_eq!(moving_average(&w), Ok(-100.0));
        w.push(1, -80.0);
        assert_eq!(moving_average(&w), Ok(-90.0));

        let mut c = SlidingWindow::new(5);
        for i in 0..17 {
            c.push(i, -73.25);
        }
        assert_eq!(moving_average(&c), Ok(-73.25));
    }
}
