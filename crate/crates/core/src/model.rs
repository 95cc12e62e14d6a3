//! Shared domain types: samples, band plans and spectrum events.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Milliseconds since the Unix epoch.
pub type Millis = i64;

/// One timestamped PSD vector, one energy reading per frequency bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdSample {
    pub timestamp: Millis,
    pub values: Vec<f64>,
}

impl PsdSample {
    pub fn new(timestamp: Millis, values: Vec<f64>) -> Self {
        Self { timestamp, values }
    }
}

/// Reason a sample was refused at the stream boundary.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("length mismatch: expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-monotonic time: {timestamp} does not follow {previous}")]
    NonMonotonicTime { previous: Millis, timestamp: Millis },
    #[error("non-finite value at bin {bin}")]
    NonFiniteValue { bin: usize },
}

impl SampleError {
    /// Stable machine-readable reason code.
    pub fn code(&self) -> &'static str {
        match self {
            SampleError::LengthMismatch { .. } => "LengthMismatch",
            SampleError::NonMonotonicTime { .. } => "NonMonotonicTime",
            SampleError::NonFiniteValue { .. } => "NonFiniteValue",
        }
    }
}

/// Checks a sample against the stream's band plan and the previously accepted timestamp.
///
/// Ties are refused: the stream must be strictly increasing in time.
pub fn validate_sample(
    sample: &PsdSample,
    plan: &BandPlan,
    last_timestamp: Option<Millis>,
) -> Result<(), SampleError> {
    if sample.values.len() != plan.bin_count() {
        return Err(SampleError::LengthMismatch {
            expected: plan.bin_count(),
            actual: sample.values.len(),
        });
    }
    if let Some(previous) = last_timestamp {
        if sample.timestamp <= previous {
            return Err(SampleError::NonMonotonicTime {
                previous,
                timestamp: sample.timestamp,
            });
        }
    }
    if let Some(bin) = sample.values.iter().position(|v| !v.is_finite()) {
        return Err(SampleError::NonFiniteValue { bin });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BandPlanError {
    #[error("binCount must be at least 1")]
    EmptyBand,
    #[error("binWidthHz must be positive and finite, got {0}")]
    BadBinWidth(f64),
    #[error("startFrequencyHz must be finite, got {0}")]
    BadStart(f64),
}

/// Maps frequency bin indices to center frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", try_from = "RawBandPlan")]
pub struct BandPlan {
    start_frequency_hz: f64,
    bin_width_hz: f64,
    bin_count: usize,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawBandPlan {
    start_frequency_hz: f64,
    bin_width_hz: f64,
    bin_count: usize,
}

impl TryFrom<RawBandPlan> for BandPlan {
    type Error = BandPlanError;

    fn try_from(raw: RawBandPlan) -> Result<Self, Self::Error> {
        BandPlan::new(raw.start_frequency_hz, raw.bin_width_hz, raw.bin_count)
    }
}

impl BandPlan {
    pub fn new(
        start_frequency_hz: f64,
        bin_width_hz: f64,
        bin_count: usize,
    ) -> Result<Self, BandPlanError> {
        if bin_count == 0 {
            return Err(BandPlanError::EmptyBand);
        }
        if !(bin_width_hz.is_finite() && bin_width_hz > 0.0) {
            return Err(BandPlanError::BadBinWidth(bin_width_hz));
        }
        if !start_frequency_hz.is_finite() {
            return Err(BandPlanError::BadStart(start_frequency_hz));
        }
        Ok(Self {
            start_frequency_hz,
            bin_width_hz,
            bin_count,
        })
    }

    pub fn start_frequency_hz(&self) -> f64 {
        self.start_frequency_hz
    }

    pub fn bin_width_hz(&self) -> f64 {
        self.bin_width_hz
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    /// Center frequency of bin `index`.
    pub fn frequency_of(&self, index: usize) -> f64 {
        self.start_frequency_hz + (index as f64 + 0.5) * self.bin_width_hz
    }

    /// Lower edge of bin `index`.
    pub fn lower_edge_of(&self, index: usize) -> f64 {
        self.start_frequency_hz + index as f64 * self.bin_width_hz
    }
}

/// Geographic position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub latitude: f64,
    pub longitude: f64,
}

impl Location {
    pub fn new(latitude: f64, longitude: f64) -> Self {
        Self {
            latitude,
            longitude,
        }
    }
}

/// A completed transmission block: time span, inclusive bin range and power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpectrumEvent {
    pub id: u64,
    pub t_start: Millis,
    pub t_stop: Millis,
    pub f_start_bin: usize,
    /// Inclusive.
    pub f_stop_bin: usize,
    pub f_start_hz: f64,
    pub f_stop_hz: f64,
    pub channel_hz: f64,
    pub mean_power_dbm: f64,
    /// Number of active time-frequency cells behind `mean_power_dbm`.
    pub cell_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<Location>,
}

impl SpectrumEvent {
    /// Builds an event from an inclusive bin range, deriving all Hz fields from `plan`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_bins(
        id: u64,
        t_start: Millis,
        t_stop: Millis,
        f_start_bin: usize,
        f_stop_bin: usize,
        mean_power_dbm: f64,
        cell_count: u64,
        plan: &BandPlan,
    ) -> Self {
        debug_assert!(t_stop >= t_start && f_stop_bin >= f_start_bin);
        Self {
            id,
            t_start,
            t_stop,
            f_start_bin,
            f_stop_bin,
            f_start_hz: plan.frequency_of(f_start_bin),
            f_stop_hz: plan.frequency_of(f_stop_bin),
            channel_hz: plan.frequency_of(channel_index(f_start_bin, f_stop_bin + 1)),
            mean_power_dbm,
            cell_count,
            location: None,
        }
    }

    pub fn with_location(mut self, location: Location) -> Self {
        self.location = Some(location);
        self
    }

    pub fn duration_ms(&self) -> Millis {
        self.t_stop - self.t_start
    }

    pub fn bin_span(&self) -> usize {
        self.f_stop_bin - self.f_start_bin + 1
    }
}

/// Center-channel index for a half-open bin range `[start, stop_exclusive)`.
pub fn channel_index(start: usize, stop_exclusive: usize) -> usize {
    (start + stop_exclusive - 1) / 2
}

/// dBm to linear milliwatts.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Linear milliwatts to dBm.
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plan3() -> BandPlan {
        BandPlan::new(868.0e6, 1000.0, 3).unwrap()
    }

    #[test]
    fn accepts_valid_sample() {
        let s = PsdSample::new(100, vec![-95.0, -94.0, -60.0]);
        assert_eq!(validate_sample(&s, &plan3(), Some(99)), Ok(()));
    }

    #[test]
    fn rejects_short_sample() {
        let s = PsdSample::new(100, vec![-95.0, -94.0]);
        let err = validate_sample(&s, &plan3(), Some(99)).unwrap_err();
        assert_eq!(err.code(), "LengthMismatch");
    }

    #[test]
    fn rejects_nan() {
        let s = PsdSample::new(100, vec![-95.0, f64::NAN, -60.0]);
        let err = validate_sample(&s, &plan3(), Some(99)).unwrap_err();
        assert_eq!(err, SampleError::NonFiniteValue { bin: 1 });
    }

    #[test]
    fn rejects_tied_timestamp() {
        let s = PsdSample::new(100, vec![-95.0, -94.0, -60.0]);
        let err = validate_sample(&s, &plan3(), Some(100)).unwrap_err();
        assert_eq!(err.code(), "NonMonotonicTime");
    }

    #[test]
    fn band_plan_rejects_bad_input() {
        assert_eq!(BandPlan::new(0.0, 1.0, 0), Err(BandPlanError::EmptyBand));
        assert!(BandPlan::new(0.0, 0.0, 4).is_err());
        assert!(BandPlan::new(0.0, -1.0, 4).is_err());
    }

    #[test]
    fn channel_of_single_bin_event_is_the_bin() {
        let plan = BandPlan::new(868.0e6, 1000.0, 16).unwrap();
        let e = SpectrumEvent::from_bins(0, 0, 0, 7, 7, -80.0, 1, &plan);
        assert_eq!(e.channel_hz, plan.frequency_of(7));
        assert_eq!(e.f_start_hz, e.f_stop_hz);
    }

    proptest! {
        #[test]
        fn frequency_of_is_affine(start in -1e9f64..1e10, width in 1.0f64..1e6, n in 2usize..4096) {
            let plan = BandPlan::new(start, width, n).unwrap();
            for i in 0..n.min(64) - 1 {
                let a = plan.frequency_of(i);
                let b = plan.frequency_of(i + 1);
                prop_assert!(b > a);
                // Affine up to the rounding of the two evaluations.
                let scale = start.abs().max((i as f64 + 1.5) * width);
                prop_assert!(((b - a) - width).abs() <= 8.0 * f64::EPSILON * scale);
            }
        }
    }
}
