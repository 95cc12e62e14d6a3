//! Per-frequency-bin activity detection.

mod histogram;
mod pipeline;
mod stats;
mod window;

pub use histogram::{HistogramError, OnlineHistogram};
pub use pipeline::{BinActivity, BinBank, BinPipeline, Detection, Direction};
pub use stats::{
    chi_square_pvalue, chi_square_statistic, gamma_q, ln_gamma, ChiSquare, EMPTY_CELL_PSEUDOCOUNT,
};
pub use window::{moving_average, DelayedWindow, EmptyWindow, SlidingWindow};
