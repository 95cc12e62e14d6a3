//! Online histograms over a bounded dBm range.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistogramError {
    #[error("negative count in cell {cell}: removed a value that was never added")]
    NegativeCount { cell: usize },
    #[error("histograms have different layouts")]
    LayoutMismatch,
    #[error("histogram is empty")]
    EmptyHistogram,
}

/// Binned counts over `[lower, upper)` with optional ±infinity overflow cells.
///
/// Cells are laid out as `[underflow, bin 0 .. bin B-1, overflow]` when overflow
/// cells are enabled and `[bin 0 .. bin B-1]` otherwise. Without overflow cells,
/// out-of-range values are clamped into the edge bins.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineHistogram {
    lower: f64,
    upper: f64,
    bins: usize,
    overflow_cells: bool,
    width: f64,
    counts: Vec<u32>,
    total: u64,
}

impl OnlineHistogram {
    pub fn new(lower: f64, upper: f64, bins: usize, overflow_cells: bool) -> Self {
        assert!(upper > lower && bins >= 1, "invalid histogram layout");
        let cells = bins + if overflow_cells { 2 } else { 0 };
        Self {
            lower,
            upper,
            bins,
            overflow_cells,
            width: (upper - lower) / bins as f64,
            counts: vec![0; cells],
            total: 0,
        }
    }

    pub fn bin_width(&self) -> f64 {
        self.width
    }

    pub fn bin_count(&self) -> usize {
        self.bins
    }

    pub fn has_overflow_cells(&self) -> bool {
        self.overflow_cells
    }

    /// All cells including the overflow cells, if any.
    pub fn cells(&self) -> &[u32] {
        &self.counts
    }

    /// The B in-range bins only.
    pub fn bin_counts(&self) -> &[u32] {
        if self.overflow_cells {
            &self.counts[1..=self.bins]
        } else {
            &self.counts
        }
    }

    pub fn underflow_count(&self) -> Option<u32> {
        self.overflow_cells.then(|| self.counts[0])
    }

    pub fn overflow_count(&self) -> Option<u32> {
        self.overflow_cells.then(|| self.counts[self.bins + 1])
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Cell index a value falls into.
    pub fn cell_of(&self, v: f64) -> usize {
        let offset = usize::from(self.overflow_cells);
        if v < self.lower {
            return 0;
        }
        if v >= self.upper {
            return self.counts.len() - 1;
        }
        let bin = (((v - self.lower) / self.width).floor() as usize).min(self.bins - 1);
        bin + offset
    }

    pub fn add(&mut self, v: f64) {
        let c = self.cell_of(v);
        self.counts[c] += 1;
        self.total += 1;
    }

    pub fn remove(&mut self, v: f64) -> Result<(), HistogramError> {
        let c = self.cell_of(v);
        if self.counts[c] == 0 {
            return Err(HistogramError::NegativeCount { cell: c });
        }
        self.counts[c] -= 1;
        self.total -= 1;
        Ok(())
    }

    /// Applies one batch of window changes.
    pub fn update(&mut self, added: &[f64], removed: &[f64]) -> Result<(), HistogramError> {
        for &v in added {
            self.add(v);
        }
        for &v in removed {
            self.remove(v)?;
        }
        Ok(())
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.lower == other.lower
            && self.upper == other.upper
            && self.bins == other.bins
            && self.overflow_cells == other.overflow_cells
    }

    /// Rebuilds a histogram from raw window contents.
    pub fn from_values(
        lower: f64,
        upper: f64,
        bins: usize,
        overflow_cells: bool,
        values: impl IntoIterator<Item = f64>,
    ) -> Self {
        let mut h = Self::new(lower, upper, bins, overflow_cells);
        for v in values {
            h.add(v);
        }
        h
    }

    /// Test/diagnostic constructor from explicit cell counts.
    pub fn from_cells(lower: f64, upper: f64, bins: usize, overflow_cells: bool, cells: &[u32]) -> Self {
        let mut h = Self::new(lower, upper, bins, overflow_cells);
        assert_eq!(cells.len(), h.counts.len(), "cell count does not match layout");
        h.counts.copy_from_slice(cells);
        h.total = cells.iter().map(|&c| u64::from(c)).sum();
        h
    }
}
